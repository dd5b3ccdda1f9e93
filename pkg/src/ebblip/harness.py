"""Experiment recipes: supervised scenarios, prior sweeps and bandit A/B runs."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .bandit import BanditResult, EBConfig, run_bandit
from .features import BIAS, FIRST_ORDER, SECOND_ORDER, LayoutSpace
from .lasso import LassoConfig, adaptive_lasso_prune
from .meta_prior import (
    BootstrapConfig,
    BootstrapResult,
    DegeneratePriorError,
    bootstrap_until_viable,
    estimate_meta_prior,
    prior_from_estimates,
)
from .probit import BlipModel, PriorConfig
from .simulate import Batch, DatasetStream, EnvironmentSpec, generate_environment

__all__ = [
    "COLUMNS",
    "ABResult",
    "MetricsRow",
    "MetricsSeries",
    "ScenarioSpec",
    "export_metrics",
    "log_loss",
    "paired_sign_test",
    "plateau_round",
    "proportion_ztest",
    "read_metrics",
    "run_bandit_ab",
    "run_scenario",
    "run_tau_sweep",
]

COLUMNS = ("batch", "t", "log_loss", "cum_success", "rel_baseline", "tau1_hat", "tau2_hat")
LOG_LOSS_EPS = 1e-15


def log_loss(predictions, labels, eps: float = LOG_LOSS_EPS) -> float:
    """Mean binary cross-entropy; labels in {0, 1} or {-1, +1}."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    if np.any(y == -1):
        y = (y + 1) / 2
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    p = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


@dataclass
class MetricsRow:
    batch: int
    t: int
    log_loss: float = math.nan
    cum_success: float = math.nan
    rel_baseline: float = math.nan
    tau1_hat: float = math.nan
    tau2_hat: float = math.nan


@dataclass
class MetricsSeries:
    name: str
    rows: list[MetricsRow] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def append(self, row: MetricsRow):
        if self.rows and row.batch <= self.rows[-1].batch:
            raise ValueError("batch indices must be strictly increasing")
        if not math.isnan(row.log_loss) and row.log_loss < 0:
            raise ValueError("log loss must be non-negative")
        self.rows.append(row)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "nan" if math.isnan(v) else format(float(v), ".10g")


def export_metrics(series: MetricsSeries, path, fmt: Literal["csv", "jsonl"] = "csv") -> Path:
    """Write a series with the fixed column order; floats carry 10 significant digits."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(COLUMNS)
                for r in series.rows:
                    w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
            elif fmt in ("jsonl", "json-lines"):
                for r in series.rows:
                    rec = {c: getattr(r, c) for c in COLUMNS}
                    fh.write("{" + ",".join(f'"{c}":{_json_num(rec[c])}' for c in COLUMNS) + "}\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def _json_num(v) -> str:
    s = _fmt(v)
    return "null" if s == "nan" else s


def read_metrics(path, fmt: Literal["csv", "jsonl"] = "csv") -> MetricsSeries:
    series = MetricsSeries(Path(path).stem)
    with open(path, encoding="utf-8") as fh:
        if fmt == "csv":
            recs = list(csv.DictReader(fh))
        else:
            recs = [json.loads(line) for line in fh if line.strip()]
    for rec in recs:
        vals = {c: (math.nan if rec[c] in (None, "nan") else float(rec[c])) for c in COLUMNS}
        vals["batch"], vals["t"] = int(vals["batch"]), int(vals["t"])
        series.rows.append(MetricsRow(**vals))
    return series


@dataclass(frozen=True)
class ScenarioSpec:
    """One supervised run: what happens to the model at the end of batch ``reset_batch``.

    ``lasso=None`` disables pruning. ``prior_override`` replaces the
    estimated first/second-order prior variances.
    """

    scenario: Literal["blip", "blip_bayes", "blip_twice"] = "blip_bayes"
    reset_batch: int = 1
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    lasso: LassoConfig | None = None
    protect: tuple[str, ...] = (BIAS, FIRST_ORDER)
    prior_override: tuple[float, float] | None = None
    zero_mean: bool = True
    evaluate_from: int | None = None

    def __post_init__(self):
        if self.scenario not in ("blip", "blip_bayes", "blip_twice"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.reset_batch < 1:
            raise ValueError("reset_batch must be >= 1")
        if self.prior_override is not None and min(self.prior_override) <= 0:
            raise ValueError("prior_override variances must be > 0")


@dataclass
class _ResetPrep:
    data: Batch
    boot: BootstrapResult | None
    mask: np.ndarray | None
    tau: dict[str, float]
    estimates: dict


def _mask_cols(X, mask):
    if mask is None:
        return X
    X = X.tocsr(copy=True)
    X.data = X.data * mask[X.indices]
    X.eliminate_zeros()
    return X


def _prepare_reset(spec: ScenarioSpec, stream: DatasetStream) -> _ResetPrep:
    data = stream.upto(spec.reset_batch)
    cats = stream.schema.categories
    need_boot = spec.scenario == "blip_twice" or spec.lasso is not None or (
        spec.scenario == "blip_bayes" and spec.prior_override is None)
    boot = None
    mask = None
    estimates = {}
    if need_boot:
        boot = bootstrap_until_viable(cats, data.X, data.y, spec.bootstrap,
                                      zero_mean=spec.zero_mean)
        estimates = boot.estimates
        if spec.lasso is not None:
            rows = boot.rows_consumed
            res = adaptive_lasso_prune(data.X[rows], data.y[rows], spec.lasso,
                                       categories=cats, protect=spec.protect)
            mask = np.zeros(cats.size)
            mask[res.retained] = 1.0
            estimates = estimate_meta_prior(boot.model.mean, boot.model.var, cats,
                                            zero_mean=spec.zero_mean,
                                            min_tau_sq=spec.bootstrap.min_tau_sq,
                                            mask=mask.astype(bool))
    if spec.prior_override is not None:
        tau = {FIRST_ORDER: float(spec.prior_override[0]),
               SECOND_ORDER: float(spec.prior_override[1])}
    else:
        tau = {k: e.tau_sq_hat for k, e in estimates.items()}
    return _ResetPrep(data, boot, mask, tau, estimates)


def run_scenario(spec: ScenarioSpec, stream: DatasetStream, test: Batch | None = None,
                 _prep: _ResetPrep | None = None) -> MetricsSeries:
    """Train over the stream's batches, applying the scenario at ``reset_batch``.

    Log loss on the test set is recorded after the reset-batch update and
    after every later batch.

    Raises
    ------
    DegeneratePriorError
        If the estimated prior is unusable after the bootstrap guardrail.
    """
    test = test if test is not None else stream.test
    if test is None:
        raise ValueError("a test set is required")
    t = spec.reset_batch
    if t > stream.n_batches:
        raise ValueError(f"reset_batch {t} exceeds the {stream.n_batches} available batches")
    cats = stream.schema.categories
    prep = _prep if _prep is not None else _prepare_reset(spec, stream)
    mask = prep.mask
    consumed = [prep.data.ids]

    if spec.scenario == "blip":
        model = BlipModel(cats)
        model.train_batch(prep.data.X, prep.data.y)
        tau = {}
    elif spec.scenario == "blip_bayes":
        if spec.prior_override is None:
            bad = {k: e for k, e in prep.estimates.items() if e.degenerate}
            if bad:
                raise DegeneratePriorError(
                    "degenerate prior after bootstrap and pruning: "
                    + ", ".join(f"{k}={e.tau_sq_hat:.4g}" for k, e in bad.items()),
                    prep.estimates)
        prior = PriorConfig.from_variances(prep.tau)
        model = BlipModel(cats, prior)
        model.train_batch(_mask_cols(prep.data.X, mask), prep.data.y)
        tau = prep.tau
        if prep.boot is not None:
            consumed.insert(0, prep.data.ids[prep.boot.rows_consumed])
    else:
        model = prep.boot.model.copy()
        model.train_batch(_mask_cols(prep.data.X, mask), prep.data.y)
        tau = {}
        consumed.insert(0, prep.data.ids[prep.boot.rows_consumed])

    series = MetricsSeries(spec.scenario)
    series.info.update(
        tau_hat=dict(tau),
        epochs_used=None if prep.boot is None else prep.boot.epochs_used,
        n_retained=None if mask is None else int(mask.sum()),
        consumed=np.concatenate(consumed),
    )
    Xtest = _mask_cols(test.X, mask)
    first_eval = spec.evaluate_from if spec.evaluate_from is not None else t
    n_seen = len(prep.data)
    for b in range(t, stream.n_batches + 1):
        if b > t:
            batch = stream.batches[b - 1]
            model.train_batch(_mask_cols(batch.X, mask), batch.y)
            n_seen += len(batch)
        if b >= first_eval:
            series.append(MetricsRow(
                batch=b, t=n_seen, log_loss=log_loss(model.predict(Xtest), test.y),
                tau1_hat=tau.get(FIRST_ORDER, math.nan), tau2_hat=tau.get(SECOND_ORDER, math.nan)))
    series.info["model"] = model
    return series


def run_scenarios(spec: ScenarioSpec, stream: DatasetStream,
                  scenarios: Sequence[str] = ("blip", "blip_bayes", "blip_twice"),
                  test: Batch | None = None) -> dict[str, MetricsSeries]:
    """Several scenarios sharing one bootstrap/pruning preparation."""
    base = replace(spec, scenario="blip_twice")
    prep = _prepare_reset(base, stream) if any(s != "blip" for s in scenarios) or \
        spec.lasso is not None else None
    out = {}
    for s in scenarios:
        out[s] = run_scenario(replace(spec, scenario=s), stream, test, _prep=prep)
    return out


def run_tau_sweep(base: ScenarioSpec, stream: DatasetStream,
                  overrides: Iterable[tuple[float, float]] = ((5.0, 5.0), (0.1, 0.1), (0.01, 0.01)),
                  test: Batch | None = None) -> dict[str, MetricsSeries]:
    """BLIPBayes under each prior override plus the estimated prior and plain BLIP.

    Every cell shares the same stream, bootstrap draw and pruning mask.
    """
    overrides = [tuple(float(v) for v in o) for o in overrides]
    if any(min(o) <= 0 for o in overrides):
        raise ValueError("override variances must be > 0")
    base = replace(base, scenario="blip_bayes", prior_override=None)
    prep = _prepare_reset(base, stream)
    out = {"optimal": run_scenario(base, stream, test, _prep=prep),
           "blip": run_scenario(replace(base, scenario="blip"), stream, test, _prep=prep)}
    for o in overrides:
        cell = replace(base, prior_override=o)
        cell_prep = _ResetPrep(prep.data, prep.boot, prep.mask,
                               {FIRST_ORDER: o[0], SECOND_ORDER: o[1]}, prep.estimates)
        out[f"tau1={o[0]:g},tau2={o[1]:g}"] = run_scenario(cell, stream, test, _prep=cell_prep)
    return out


def plateau_round(regret, start: int = 0, window: int | None = None,
                  threshold: float = 1e-6) -> int | None:
    """First round whose trailing-window mean regret falls below ``threshold``.

    The window defaults to 5% of the horizon. Returns None if it never does.
    """
    regret = np.asarray(regret, dtype=float)
    T = regret.size
    window = max(1, int(round(0.05 * T))) if window is None else int(window)
    c = np.concatenate([[0.0], np.cumsum(regret)])
    ends = np.arange(start + window, T + 1)
    if ends.size == 0:
        return None
    slope = (c[ends] - c[ends - window]) / window
    hit = np.flatnonzero(slope < threshold)
    return None if hit.size == 0 else int(ends[hit[0]])


def paired_sign_test(a, b, alternative: str = "less") -> float:
    """Sign test p-value for ``a < b`` (pairs with ``a == b`` dropped)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        return 1.0
    k = int(np.sum(d < 0)) if alternative == "less" else int(np.sum(d > 0))
    return float(stats.binomtest(k, d.size, 0.5, alternative="greater").pvalue)


def proportion_ztest(success1: int, n1: int, success2: int, n2: int) -> tuple[float, float]:
    """Two-sided two-proportion z-test with pooled variance; returns (z, p)."""
    p1, p2 = success1 / n1, success2 / n2
    pooled = (success1 + success2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (p1 - p2) / se
    return z, float(2 * stats.norm.sf(abs(z)))


@dataclass
class ABResult:
    seeds: list[int]
    standard: list[BanditResult]
    eb: list[BanditResult]
    baseline: float

    def final(self, attr: str) -> tuple[np.ndarray, np.ndarray]:
        f = {"regret": lambda r: r.cumulative_regret[-1],
             "success": lambda r: r.cumulative_success[-1]}[attr]
        return np.array([f(r) for r in self.standard]), np.array([f(r) for r in self.eb])

    def plateaus(self, **kw) -> tuple[list, list]:
        def one(r):
            return plateau_round(r.regret, start=r.random_phase, **kw)
        return [one(r) for r in self.standard], [one(r) for r in self.eb]

    def series(self, policy: str, index: int) -> MetricsSeries:
        r = (self.standard if policy == "standard" else self.eb)[index]
        out = MetricsSeries(f"{policy}_seed{self.seeds[index]}")
        ends = np.append(np.arange(r.batch_size, r.T, r.batch_size), r.T)
        cum = r.cumulative_success
        for b, e in enumerate(ends, start=1):
            s = float(cum[e - 1])
            out.append(MetricsRow(batch=b, t=int(e), cum_success=s,
                                  rel_baseline=s / self.baseline - 1.0,
                                  tau1_hat=r.tau_hat.get(FIRST_ORDER, math.nan),
                                  tau2_hat=r.tau_hat.get(SECOND_ORDER, math.nan)))
        return out

    def slim(self) -> "ABResult":
        """Drop models to keep results small."""
        for r in self.standard + self.eb:
            r.model = None
        return self


def _ab_one(args):
    variations, tau_sq, nu, T, random_phase, batch_size, eb, seed = args
    space = LayoutSpace(variations)
    env = generate_environment(EnvironmentSpec(space, tau_sq, nu, seed=seed))
    std = run_bandit(env, "standard", T, batch_size=batch_size, random_phase=random_phase,
                     seed=seed)
    ebr = run_bandit(env, "eb", T, batch_size=batch_size, random_phase=random_phase,
                     eb=eb, seed=seed)
    std.model = ebr.model = None
    return std, ebr


def run_bandit_ab(variations=(2, 3, 3, 2), tau_sq=None, T: int = 50_000,
                  random_phase: int = 2000, seeds: Sequence[int] = range(20), *,
                  nu=None, batch_size: int = 500, eb: EBConfig = EBConfig(),
                  baseline: float = 0.5, n_jobs: int = 1) -> ABResult:
    """Standard vs. EB bandit on the same environment and noise, seed by seed.

    Each seed draws its own ground-truth environment; both policies then
    share arms in the random phase, reward uniforms and Thompson noise.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    tau_sq = dict(tau_sq or {FIRST_ORDER: 0.6, SECOND_ORDER: 0.2})
    jobs = [(tuple(variations), tau_sq, dict(nu or {}), T, random_phase, batch_size, eb, s)
            for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            pairs = list(ex.map(_ab_one, jobs))
    else:
        pairs = [_ab_one(j) for j in jobs]
    return ABResult(seeds, [p[0] for p in pairs], [p[1] for p in pairs], baseline)
