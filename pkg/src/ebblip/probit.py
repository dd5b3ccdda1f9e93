"""Bayesian linear probit regression with factorized Gaussian weights.

Each weight carries an independent Gaussian belief ``N(mean_i, var_i)``.
Observations ``(x, y)`` with ``y`` in ``{-1, +1}`` are absorbed one at a time
by assumed density filtering: the exact (non-Gaussian) posterior under the
probit likelihood is projected back onto the factorized Gaussian family by
matching first and second moments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.special import ndtr

__all__ = [
    "VARIANCE_FLOOR",
    "BlipModel",
    "EmptyBatchWarning",
    "NumericalError",
    "PriorConfig",
    "WeightPosterior",
    "probit_cdf",
    "v_w",
]

VARIANCE_FLOOR = 1e-12

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# below this score the ratio pdf/cdf is evaluated through erfcx
_TAIL_SWITCH = -6.0


class NumericalError(ArithmeticError):
    """Raised when an update would leave the posterior degenerate."""


class EmptyBatchWarning(UserWarning):
    pass


def probit_cdf(z):
    """Standard normal CDF.

    Accepts scalars or arrays; raises ``ValueError`` on NaN or infinite input.
    """
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("probit_cdf requires finite input")
    out = ndtr(arr)
    return float(out) if out.ndim == 0 else out


@njit(cache=True)
def _erfcx_cf(z):
    # continued fraction for erfcx, accurate for z >= ~4
    acc = z
    for n in range(60, 0, -1):
        acc = z + (0.5 * n) / acc
    return _INV_SQRT_PI / acc


@njit(cache=True)
def _v_w(t):
    if t < _TAIL_SWITCH:
        v = _SQRT_2_OVER_PI / _erfcx_cf(-t / _SQRT2)
    else:
        cdf = 0.5 * math.erfc(-t / _SQRT2)
        v = _INV_SQRT_2PI * math.exp(-0.5 * t * t) / cdf
    return v, v * (v + t)


def v_w(t: float) -> tuple[float, float]:
    """Additive and multiplicative ADF corrections for a standardized score.

    ``v = pdf(t) / cdf(t)`` and ``w = v * (v + t)``, with ``0 < w < 1``.
    """
    return _v_w(float(t))


@njit(cache=True)
def _adf_sweep(indptr, indices, data, labels, order, mean, var, beta_sq, floor):
    """Sequential ADF over rows ``order`` of a CSR matrix.

    Returns -1 on success or the position in ``order`` of the offending row.
    """
    for pos in range(order.shape[0]):
        r = order[pos]
        start = indptr[r]
        stop = indptr[r + 1]
        m = 0.0
        s = beta_sq
        for k in range(start, stop):
            j = indices[k]
            x = data[k]
            m += mean[j] * x
            s += var[j] * x * x
        sd = math.sqrt(s)
        y = labels[r]
        v, w = _v_w(y * m / sd)
        if not (math.isfinite(v) and math.isfinite(w)):
            return pos
        for k in range(start, stop):
            j = indices[k]
            x = data[k]
            if x == 0.0:
                continue
            vj = var[j]
            new_var = vj * (1.0 - x * x * vj * w / s)
            if not (new_var >= floor):
                return pos
            mean[j] += y * x * vj * v / sd
            var[j] = new_var
    return -1


@dataclass(frozen=True)
class WeightPosterior:
    """Gaussian belief about a single weight."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")


@dataclass
class PriorConfig:
    """Per-category Gaussian prior ``(mean, variance)`` for model weights.

    ``default`` is used for categories absent from ``per_category``; when it
    is ``None`` a missing category is an error.
    """

    per_category: dict[str, tuple[float, float]] = field(default_factory=dict)
    default: tuple[float, float] | None = None

    def __post_init__(self):
        self.per_category = {
            str(k): (float(m), float(v)) for k, (m, v) in self.per_category.items()
        }
        items = list(self.per_category.items())
        if self.default is not None:
            self.default = (float(self.default[0]), float(self.default[1]))
            items.append(("<default>", self.default))
        for name, (_, var) in items:
            if not var > 0:
                raise ValueError(f"prior variance for {name!r} must be > 0, got {var}")

    @classmethod
    def standard(cls) -> "PriorConfig":
        """The non-informative ``N(0, 1)`` prior for every weight."""
        return cls(default=(0.0, 1.0))

    @classmethod
    def from_variances(
        cls, variances: Mapping[str, float], default=(0.0, 1.0)
    ) -> "PriorConfig":
        """Zero-mean prior with the given per-category variances."""
        return cls({k: (0.0, v) for k, v in variances.items()}, default=default)

    def lookup(self, category: str) -> tuple[float, float]:
        try:
            return self.per_category[category]
        except KeyError:
            if self.default is None:
                raise KeyError(f"prior has no entry for category {category!r}") from None
            return self.default

    def to_dict(self) -> dict:
        return {
            "per_category": {k: list(v) for k, v in self.per_category.items()},
            "default": None if self.default is None else list(self.default),
        }


def _as_csr(X, dim: int) -> sp.csr_matrix:
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=float)
    else:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        X = sp.csr_matrix(X)
    if X.shape[1] != dim:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model dimension {dim}")
    X.sort_indices()
    return X


def _as_labels(y, n: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("labels must be -1 or +1")
    return y


class BlipModel:
    """Probit classifier with independent Gaussian weight posteriors.

    Parameters
    ----------
    categories : sequence of str
        Category of each feature index (e.g. ``"bias"``, ``"first_order"``).
        Fixes the model dimension.
    prior : PriorConfig, optional
        Initial prior; the standard ``N(0, 1)`` when omitted.
    beta : float
        Probit steepness. Kept at 1 in all experiments.
    marginalize : bool
        If True, ``predict`` integrates over the weight posterior,
        otherwise it plugs in the posterior means.
    """

    def __init__(self, categories: Sequence[str], prior: PriorConfig | None = None,
                 beta: float = 1.0, marginalize: bool = True):
        self.categories = np.asarray([str(c) for c in categories], dtype=object)
        if self.categories.ndim != 1 or self.categories.size == 0:
            raise ValueError("categories must be a non-empty 1-d sequence")
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.beta = float(beta)
        self.marginalize = marginalize
        self.n_updates = 0
        self.reset_with_prior(prior if prior is not None else PriorConfig.standard())

    @property
    def dim(self) -> int:
        return self.categories.size

    def reset_with_prior(self, prior: PriorConfig) -> "BlipModel":
        """Forget all training and restart every weight at its category prior."""
        mean = np.empty(self.dim)
        var = np.empty(self.dim)
        for cat in np.unique(self.categories):
            m, v = prior.lookup(cat)
            sel = self.categories == cat
            mean[sel] = m
            var[sel] = v
        self.mean = mean
        self.var = var
        self.prior = prior
        self.n_updates = 0
        return self

    def copy(self) -> "BlipModel":
        new = object.__new__(BlipModel)
        new.categories = self.categories
        new.beta = self.beta
        new.marginalize = self.marginalize
        new.prior = self.prior
        new.n_updates = self.n_updates
        new.mean = self.mean.copy()
        new.var = self.var.copy()
        return new

    def posterior(self, i: int) -> WeightPosterior:
        return WeightPosterior(float(self.mean[i]), float(self.var[i]))

    def scores(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance of the linear score for each row."""
        X = _as_csr(X, self.dim)
        return X @ self.mean, X.multiply(X) @ self.var

    def predict(self, X, marginalize: bool | None = None) -> np.ndarray:
        """Probability of label +1 for each row of ``X``."""
        m, s = self.scores(X)
        if marginalize is None:
            marginalize = self.marginalize
        beta_sq = self.beta ** 2
        denom = np.sqrt(beta_sq + s) if marginalize else np.sqrt(beta_sq)
        return ndtr(m / denom)

    def update(self, x, y) -> "BlipModel":
        """Absorb a single labelled example."""
        X = _as_csr(x, self.dim)
        if X.shape[0] != 1:
            raise ValueError("update takes a single example; use train_batch")
        return self._sweep(X, _as_labels(y, 1), np.zeros(1, dtype=np.int64))

    def train_batch(self, X, y, order=None) -> "BlipModel":
        """Sequential ADF over the rows of ``X`` (or the row indices ``order``).

        ``order`` may repeat rows, which is how bootstrap epochs are fed in
        without materializing resampled copies.
        """
        X = _as_csr(X, self.dim)
        y = _as_labels(y, X.shape[0])
        order = np.arange(X.shape[0]) if order is None else np.asarray(order, dtype=np.int64)
        if order.size == 0:
            warnings.warn("empty batch; model unchanged", EmptyBatchWarning, stacklevel=2)
            return self
        if order.min() < 0 or order.max() >= X.shape[0]:
            raise IndexError("order refers to rows outside the batch")
        return self._sweep(X, y, order)

    def _sweep(self, X, y, order) -> "BlipModel":
        mean = self.mean.copy()
        var = self.var.copy()
        bad = _adf_sweep(X.indptr.astype(np.int64), X.indices.astype(np.int64), X.data,
                         y, order, mean, var, self.beta ** 2, VARIANCE_FLOOR)
        if bad >= 0:
            raise NumericalError(
                f"ADF update on row {int(order[bad])} drove a variance below "
                f"{VARIANCE_FLOOR:g} or produced a non-finite correction"
            )
        self.mean = mean
        self.var = var
        self.n_updates += order.size
        return self

    def __repr__(self):
        return f"BlipModel(dim={self.dim}, beta={self.beta}, n_updates={self.n_updates})"
