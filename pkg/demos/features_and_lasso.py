"""One-hot layouts with pairwise interactions, then adaptive lasso pruning."""

import numpy as np

from ebblip import LassoConfig, LayoutSpace, adaptive_lasso_prune, encode_layout

space = LayoutSpace((2, 3, 3, 2))
print(f"{space.n_layouts} layouts, feature dimension {space.dimension}")
x = encode_layout(space, (1, 0, 2, 1))
print("active coordinates of layout (1, 0, 2, 1):", np.flatnonzero(x).tolist())

rng = np.random.default_rng(2)
X = rng.normal(size=(300, 10))
y = X[:, 0] - X[:, 1] + rng.normal(size=300)
res = adaptive_lasso_prune(X, y, LassoConfig(seed=0))
print(f"selected lambda {res.lambda_:.3g}; retained columns {res.retained.tolist()}")
