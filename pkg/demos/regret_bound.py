"""High-probability regret bound of probit Thompson sampling."""

import numpy as np

from ebblip import RegretBoundParams, regret_bound, regret_constants

p, c, c2 = regret_constants()
print(f"anti-concentration p={p:.6f}, c={c}, c'={c2}")
for T in (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6):
    b = regret_bound(RegretBoundParams(d=46, T=T, S=5.0))
    print(f"T={T:>8}: bound {b:.3e}, bound / sqrt(T log T) = {b / np.sqrt(T * np.log(T)):.2f}")
