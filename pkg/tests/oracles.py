"""Independent reference computations used by the tests.

None of these call into the package: they integrate densities numerically
or evaluate closed forms directly.
"""

import math

import numpy as np
from scipy import integrate


def gauss_pdf(x):
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2) / math.sqrt(2 * math.pi)


def phi_quad(z: float) -> float:
    """Standard normal CDF by adaptive quadrature of the density."""
    if z < 0:
        return 1.0 - phi_quad(-z)
    val, _ = integrate.quad(lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi), 0.0, z,
                            epsabs=1e-14, epsrel=1e-14)
    return 0.5 + val


def probit_posterior_moments(m0: float, v0: float, x: float, y: int, beta: float = 1.0,
                             n_grid: int = 40001, width: float = 14.0):
    """Mean and variance of p(w) ∝ N(w; m0, v0) Phi(y x w / beta) on a dense grid."""
    from scipy.special import log_ndtr
    sd = math.sqrt(v0)
    w = np.linspace(m0 - width * sd, m0 + width * sd, n_grid)
    logp = -0.5 * ((w - m0) / sd) ** 2 + log_ndtr(y * x * w / beta)
    p = np.exp(logp - logp.max())
    z = integrate.simpson(p, x=w)
    mean = integrate.simpson(w * p, x=w) / z
    var = integrate.simpson((w - mean) ** 2 * p, x=w) / z
    return mean, var


def soft_threshold_orthonormal(X, y, lam):
    """Minimizer of ||y - X w||^2 + lam ||w||_1 when X^T X = I."""
    z = X.T @ y
    return np.sign(z) * np.maximum(np.abs(z) - lam / 2.0, 0.0)
