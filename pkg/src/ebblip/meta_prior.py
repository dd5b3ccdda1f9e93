"""Empirical Bayes estimation of per-category prior variances.

Given posterior means and variances of a trained model, the spread of the
means within a category, less the average posterior variance, estimates how
widely the true effects of that category are dispersed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .features import BIAS
from .probit import BlipModel, PriorConfig

__all__ = [
    "BootstrapConfig",
    "BootstrapResult",
    "CategoryMetaPrior",
    "DegeneratePriorError",
    "InsufficientTrafficError",
    "bias_of_estimator",
    "bootstrap_until_viable",
    "estimate_meta_prior",
    "prior_from_estimates",
    "tau_sq_hat",
]

DEFAULT_MIN_TAU_SQ = 1e-4


class DegeneratePriorError(RuntimeError):
    """A category's estimated prior variance is not usable."""

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class InsufficientTrafficError(DegeneratePriorError):
    """Bootstrapping hit ``max_epochs`` before every estimate became viable."""

    def __init__(self, message, estimates=None, epochs=0):
        super().__init__(message, estimates)
        self.epochs = epochs


@dataclass(frozen=True)
class CategoryMetaPrior:
    category_id: str
    nu_hat: float
    tau_sq_hat: float
    n_features: int
    degenerate: bool


@dataclass(frozen=True)
class BootstrapConfig:
    epoch_size: int | None = None
    max_epochs: int = 20
    resample: bool = True
    seed: int = 0
    min_tau_sq: float = DEFAULT_MIN_TAU_SQ

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.epoch_size is not None and self.epoch_size < 1:
            raise ValueError("epoch_size must be >= 1")
        if self.min_tau_sq < 0:
            raise ValueError("min_tau_sq must be >= 0")


def tau_sq_hat(mu, sigma_sq, zero_mean: bool = True, axis: int = -1):
    """Vectorized prior-variance estimate along ``axis``.

    With ``zero_mean`` the prior mean is taken as 0 and the estimate is
    ``mean(mu**2 - sigma_sq)``. Otherwise the unbiased sample variance of
    ``mu`` minus the mean of ``sigma_sq``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if zero_mean:
        return np.mean(mu ** 2 - sigma_sq, axis=axis)
    return np.var(mu, axis=axis, ddof=1) - np.mean(sigma_sq, axis=axis)


def estimate_meta_prior(
    means,
    variances,
    categories,
    *,
    zero_mean: bool = True,
    min_tau_sq: float = DEFAULT_MIN_TAU_SQ,
    exclude: Iterable[str] = (BIAS,),
    mask=None,
) -> dict[str, CategoryMetaPrior]:
    """Estimate ``(nu_k, tau_k^2)`` for every category of features.

    Parameters
    ----------
    means, variances : array_like
        Posterior mean and variance per feature.
    categories : array_like of str
        Category of each feature.
    zero_mean : bool
        Fix ``nu_k = 0`` (denominator ``N_k``) instead of estimating it.
    min_tau_sq : float
        Estimates at or below this value are flagged ``degenerate``. The raw
        value is reported either way.
    exclude : iterable of str
        Categories not estimated (the bias absorbs the prior means).
    mask : array_like of bool, optional
        Only features where ``mask`` is True take part, e.g. after pruning.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    categories = np.asarray(categories, dtype=object)
    if not (means.shape == variances.shape == categories.shape):
        raise ValueError("means, variances and categories must have the same shape")
    keep = np.ones(means.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    excluded = set(exclude)
    out = {}
    for cat in dict.fromkeys(categories.tolist()):
        if cat in excluded:
            continue
        sel = (categories == cat) & keep
        n = int(sel.sum())
        need = 1 if zero_mean else 2
        if n < need:
            raise ValueError(f"category {cat!r} has {n} features; at least {need} required")
        mu, s2 = means[sel], variances[sel]
        nu = 0.0 if zero_mean else float(mu.mean())
        tau = float(tau_sq_hat(mu, s2, zero_mean))
        out[cat] = CategoryMetaPrior(cat, nu, tau, n, tau <= min_tau_sq)
    return out


def bias_of_estimator(cov) -> float:
    """Expected bias of the mean-centred estimator under correlated means.

    ``cov`` is the covariance matrix of the posterior means within one
    category; only its off-diagonal entries contribute.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("cov must be a square matrix")
    n = cov.shape[0]
    if n < 2:
        raise ValueError("need at least 2 features")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ValueError("cov must be symmetric")
    off = cov.sum() - np.trace(cov)
    return -off / (n * (n - 1))


def prior_from_estimates(
    estimates: Mapping[str, CategoryMetaPrior],
    *,
    use_nu: bool = False,
    default=(0.0, 1.0),
) -> PriorConfig:
    """Turn estimates into a reset prior; categories not estimated get ``default``.

    Raises ``DegeneratePriorError`` if any estimate is flagged degenerate.
    """
    bad = [k for k, e in estimates.items() if e.degenerate]
    if bad:
        detail = ", ".join(f"{k}={estimates[k].tau_sq_hat:.4g}" for k in bad)
        raise DegeneratePriorError(f"degenerate prior variance: {detail}", dict(estimates))
    return PriorConfig(
        {k: (e.nu_hat if use_nu else 0.0, e.tau_sq_hat) for k, e in estimates.items()},
        default=default,
    )


@dataclass
class BootstrapResult:
    model: BlipModel
    estimates: dict[str, CategoryMetaPrior]
    epochs_used: int
    orders: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def rows_consumed(self) -> np.ndarray:
        """All row indices fed to the model, in training order."""
        if not self.orders:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.orders)


def bootstrap_until_viable(
    categories,
    X,
    y,
    config: BootstrapConfig = BootstrapConfig(),
    *,
    prior: PriorConfig | None = None,
    zero_mean: bool = True,
    exclude: Iterable[str] = (BIAS,),
    mask=None,
) -> BootstrapResult:
    """Train epochs over ``(X, y)`` until every category estimate is viable.

    A single model starts from ``prior`` and is trained epoch after epoch;
    each epoch draws ``epoch_size`` rows with replacement (or a shuffled pass
    over all rows when ``config.resample`` is False). Estimation runs after
    every epoch and stops at the first one where all ``tau_sq_hat`` exceed
    ``config.min_tau_sq``.

    Raises
    ------
    InsufficientTrafficError
        After ``max_epochs`` without a viable estimate; carries the last
        estimates.
    """
    n = y.shape[0] if hasattr(y, "shape") else len(y)
    if n == 0:
        raise ValueError("bootstrap needs a non-empty batch")
    rng = np.random.default_rng(config.seed)
    size = config.epoch_size or n
    model = BlipModel(categories, prior)
    orders = []
    estimates = {}
    for epoch in range(1, config.max_epochs + 1):
        if config.resample:
            order = rng.integers(0, n, size=size)
        else:
            order = np.resize(rng.permutation(n), size)
        model.train_batch(X, y, order)
        orders.append(order)
        estimates = estimate_meta_prior(
            model.mean, model.var, model.categories, zero_mean=zero_mean,
            min_tau_sq=config.min_tau_sq, exclude=exclude, mask=mask,
        )
        if not any(e.degenerate for e in estimates.values()):
            return BootstrapResult(model, estimates, epoch, orders)
    detail = ", ".join(f"{k}={e.tau_sq_hat:.4g}" for k, e in estimates.items())
    raise InsufficientTrafficError(
        f"insufficient traffic: no viable prior after {config.max_epochs} epochs ({detail})",
        estimates, config.max_epochs,
    )
