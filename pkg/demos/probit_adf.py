"""Online Bayesian probit regression with assumed density filtering.

Trains a factorized Gaussian probit model on a synthetic stream and shows
that the posterior variances only shrink while the predictions sharpen.
"""

import numpy as np

from ebblip import BlipModel, PriorConfig

rng = np.random.default_rng(0)
d = 8
cats = ["first_order"] * d
true_w = rng.normal(0, 1, d)

model = BlipModel(cats, PriorConfig({"first_order": (0.0, 1.0)}))
for step in range(2000):
    x = (rng.random(d) < 0.3).astype(float)
    y = 1 if rng.random() < 0.5 * (1 + np.tanh(x @ true_w)) else -1
    model.update(x, y)
    if step in (0, 99, 1999):
        print(f"after {step + 1:>4} updates: mean var {model.var.mean():.4f}")

print("true weights     ", np.round(true_w, 2))
print("posterior means  ", np.round(model.mean, 2))
probe = np.eye(d)[:3]
print("P(y=+1) for three single-feature rows:", np.round(model.predict(probe), 3))
