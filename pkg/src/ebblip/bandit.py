"""Thompson sampling over combinatorial layouts with a probit reward model.

The arm set is the product of widget contents (optionally restricted to an
allow-list). Arm search is exhaustive for small spaces and greedy hill
climbing with random restarts otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import ndtr

from .features import BIAS, FIRST_ORDER, SECOND_ORDER, LayoutSpace
from .meta_prior import (
    DEFAULT_MIN_TAU_SQ,
    BootstrapConfig,
    CategoryMetaPrior,
    DegeneratePriorError,
    bootstrap_until_viable,
    estimate_meta_prior,
    prior_from_estimates,
)
from .probit import BlipModel, PriorConfig
from .simulate import Environment

__all__ = [
    "EXHAUSTIVE_CAP",
    "BanditResult",
    "BanditState",
    "EBConfig",
    "RegretBoundParams",
    "hill_climb",
    "instantaneous_regret",
    "read_interaction_log",
    "regret_bound",
    "regret_constants",
    "run_bandit",
    "select_random",
    "thompson_select",
]

EXHAUSTIVE_CAP = 10_000
K_PHI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class BanditState:
    """Everything a selection step needs: model, arm space and randomness."""

    model: BlipModel
    space: LayoutSpace
    rng: np.random.Generator
    phase: Literal["random", "learning"] = "learning"
    normalize: bool = False
    search: Literal["auto", "exhaustive", "hill_climb"] = "auto"
    restarts: int = 8
    max_sweeps: int = 10

    def __post_init__(self):
        if self.model.dim != self.space.dimension:
            raise ValueError("model dimension does not match the layout encoding")
        if self.search == "auto":
            exhaustive = self.space.allowed is not None or self.space.n_layouts <= EXHAUSTIVE_CAP
            self.search = "exhaustive" if exhaustive else "hill_climb"
        if self.search == "hill_climb" and self.space.allowed is not None:
            raise ValueError("hill climbing cannot respect an allow-list; use exhaustive search")
        self._arms = None
        self._B = None

    @property
    def arms(self) -> np.ndarray:
        if self._arms is None:
            self._arms = self.space.arms()
            if len(self._arms) == 0:
                raise ValueError("empty arm set")
        return self._arms

    @property
    def arm_matrix(self) -> np.ndarray:
        """Dense encodings of the arm set, one row per arm."""
        if self._B is None:
            self._B = self.space.encode(self.arms, self.normalize).toarray()
        return self._B

    def sample_weights(self, n: int) -> np.ndarray:
        z = self.rng.standard_normal((n, self.model.dim))
        return self.model.mean + np.sqrt(self.model.var) * z


def thompson_select_many(state: BanditState, n: int) -> np.ndarray:
    """``n`` independent Thompson draws from the current posterior, as layouts."""
    if state.phase != "learning":
        raise RuntimeError("Thompson selection requires the learning phase")
    W = state.sample_weights(n)
    if state.search == "exhaustive":
        # np.argmax returns the first maximum, i.e. the lexicographically lowest arm
        return state.arms[np.argmax(W @ state.arm_matrix.T, axis=1)]
    return np.array([hill_climb(w, state.space, state.restarts, state.max_sweeps, state.rng)
                     for w in W], dtype=np.int64)


def thompson_select(state: BanditState) -> tuple[int, ...]:
    """Sample weights from the posterior and play the best layout for them."""
    return tuple(int(a) for a in thompson_select_many(state, 1)[0])


def select_random(state: BanditState, n: int | None = None):
    """Uniform draw(s) from the arm set."""
    if state.phase != "random":
        raise RuntimeError("uniform selection requires the random phase")
    if state.space.allowed is None and state.space.n_layouts > EXHAUSTIVE_CAP:
        hi = np.array(state.space.variations)
        out = state.rng.integers(0, hi, size=(1 if n is None else n, hi.size))
    else:
        out = state.arms[state.rng.integers(0, len(state.arms), size=1 if n is None else n)]
    return tuple(int(a) for a in out[0]) if n is None else out


def _widget_tables(weights, space: LayoutSpace):
    schema = space.schema
    w = np.asarray(weights, dtype=float)
    if w.size != schema.dimension:
        raise ValueError("weight vector does not match the layout encoding")
    first = [w[o:o + n] for o, n in zip(schema.first_offsets, space.variations)]
    pairs = {}
    for (a, b), off in zip(schema.pair_positions, schema.pair_offsets):
        na, nb = space.variations[a], space.variations[b]
        table = w[off:off + na * nb].reshape(na, nb)
        pairs[(a, b)] = table
        pairs[(b, a)] = table.T
    return w[0], first, pairs


def _layout_score(bias, first, pairs, layout):
    s = bias + sum(first[i][c] for i, c in enumerate(layout))
    D = len(layout)
    for j in range(D):
        for k in range(j + 1, D):
            s += pairs[(j, k)][layout[j], layout[k]]
    return s


def hill_climb(weights, space: LayoutSpace, restarts: int = 8, max_sweeps: int = 10,
               rng=None) -> tuple[int, ...]:
    """Greedy widget-by-widget maximization of the linear layout score.

    Each restart begins at a uniformly random layout. A sweep visits the
    widgets in a fresh random order and sets each to its best content given
    the others; a restart ends at a local optimum or after ``max_sweeps``.
    """
    if restarts < 1 or max_sweeps < 1:
        raise ValueError("restarts and max_sweeps must be >= 1")
    rng = np.random.default_rng(rng)
    bias, first, pairs = _widget_tables(weights, space)
    D = space.D
    best, best_score = None, -np.inf
    for _ in range(restarts):
        layout = [int(rng.integers(0, n)) for n in space.variations]
        for _ in range(max_sweeps):
            changed = False
            for i in rng.permutation(D):
                gain = first[i].copy()
                for j in range(D):
                    if j != i:
                        gain += pairs[(i, j)][:, layout[j]]
                c = int(np.argmax(gain))
                if gain[c] > gain[layout[i]]:
                    layout[i] = c
                    changed = True
            if not changed:
                break
        score = _layout_score(bias, first, pairs, layout)
        cand = tuple(layout)
        if score > best_score or (score == best_score and cand < best):
            best, best_score = cand, score
    return best


def _optimal_arm(weights, space: LayoutSpace, max_arms: int):
    if space.allowed is None and space.n_layouts > max_arms:
        raise ValueError(
            f"{space.n_layouts} layouts exceed the exhaustive cap of {max_arms}; "
            "use a hill-climb-certified optimum instead")
    arms = space.arms()
    scores = space.encode(arms) @ np.asarray(weights, dtype=float)
    return arms, scores


def instantaneous_regret(weights, chosen, space: LayoutSpace,
                         max_arms: int = EXHAUSTIVE_CAP) -> float:
    """``Phi(w* . x_best) - Phi(w* . x_chosen)`` against the exhaustive optimum."""
    _, scores = _optimal_arm(weights, space, max_arms)
    x = space.encode(np.asarray(chosen)[None, :])
    chosen_score = float((x @ np.asarray(weights, dtype=float))[0])
    return float(max(ndtr(scores.max()) - ndtr(chosen_score), 0.0))


@dataclass(frozen=True)
class RegretBoundParams:
    d: int
    T: int
    S: float
    R: float = 0.5
    lam: float = 1.0
    delta: float = 0.05
    k_phi: float = K_PHI
    c_phi: float | None = None
    tau_min: float = 1.0
    tau_max: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.T < 1:
            raise ValueError("d and T must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.S > 0 and self.lam > 0 and self.R >= 0):
            raise ValueError("S and lam must be positive, R non-negative")
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        if self.c_phi is not None and not self.c_phi > 0:
            raise ValueError("c_phi must be positive")

    @property
    def link_lower_bound(self) -> float:
        """``c_phi``; defaults to the probit density at ``S`` (arms have norm <= 1)."""
        if self.c_phi is not None:
            return self.c_phi
        return K_PHI * math.exp(-0.5 * self.S ** 2)


def regret_constants(tau_min: float = 1.0, tau_max: float = 1.0) -> tuple[float, float, float]:
    """Anti-concentration probability ``p`` and concentration constants ``c, c'``."""
    p = math.exp(0.5 - 1.0 / tau_min ** 2) / (4.0 * math.sqrt(math.pi))
    return p, 2.0 * tau_max ** 2, 2.0


def _beta(t, delta, prm: RegretBoundParams):
    log_term = 0.5 * prm.d * math.log((prm.lam + t) / prm.lam) - math.log(delta)
    return prm.R * math.sqrt(2.0 * log_term) + math.sqrt(prm.lam) * prm.S


def regret_bound(params: RegretBoundParams) -> float:
    """High-probability upper bound on cumulative regret after ``T`` rounds."""
    if params.tau_min < 1e-6:
        raise ValueError("tau_min below 1e-6: the bound diverges as tau_min -> 0")
    p, c, c2 = regret_constants(params.tau_min, params.tau_max)
    T, d, lam = params.T, params.d, params.lam
    delta_p = params.delta / (4.0 * T)
    beta = _beta(T, delta_p, params)
    gamma = beta * math.sqrt(c * d * math.log(c2 * d / delta_p))
    ratio = params.k_phi / params.link_lower_bound
    first = ratio * (beta + gamma * (1.0 + 2.0 / p)) * math.sqrt(2.0 * T * d * math.log(1.0 + T / lam))
    second = 2.0 * ratio * gamma / p * math.sqrt(8.0 * T / lam * math.log(4.0 / params.delta))
    return first + second


@dataclass(frozen=True)
class EBConfig:
    """How the empirical prior is formed at the end of the random phase.

    ``guardrail`` applies when an estimate is degenerate: ``"bootstrap"``
    retrains on resampled epochs of the random-phase log, ``"threshold"``
    raises the estimate to ``min_tau_sq``, ``"error"`` aborts.
    """

    zero_mean: bool = True
    min_tau_sq: float = DEFAULT_MIN_TAU_SQ
    guardrail: Literal["bootstrap", "threshold", "error"] = "bootstrap"
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    tau_override: dict | None = None


@dataclass
class BanditResult:
    policy: str
    layouts: np.ndarray
    rewards: np.ndarray
    regret: np.ndarray
    random_phase: int
    batch_size: int
    tau_hat: dict[str, float] = field(default_factory=dict)
    model: BlipModel | None = None
    space: LayoutSpace | None = None

    @property
    def T(self) -> int:
        return self.rewards.size

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def cumulative_success(self) -> np.ndarray:
        return np.cumsum(self.rewards == 1) / np.arange(1, self.T + 1)

    def batch_success(self) -> np.ndarray:
        """Fraction of +1 rewards in each batch of ``batch_size`` rounds."""
        edges = np.arange(0, self.T, self.batch_size)
        return np.add.reduceat((self.rewards == 1).astype(float), edges) / np.diff(
            np.append(edges, self.T))

    def write_log(self, path) -> None:
        """One JSON record per round: round, layout, encoded indices, reward, phase."""
        X = self.space.encode(self.layouts).tocsr()
        with open(path, "w", encoding="utf-8") as fh:
            for t in range(self.T):
                rec = {
                    "round": t,
                    "layout": self.layouts[t].tolist(),
                    "indices": X.indices[X.indptr[t]:X.indptr[t + 1]].tolist(),
                    "reward": int(self.rewards[t]),
                    "phase": "random" if t < self.random_phase else "learning",
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_interaction_log(path):
    """Load a log written by ``BanditResult.write_log``: (layouts, rewards, phases)."""
    layouts, rewards, phases = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            layouts.append(rec["layout"])
            rewards.append(rec["reward"])
            phases.append(rec["phase"])
    return np.array(layouts, dtype=np.int64), np.array(rewards), phases


def _eb_prior(model: BlipModel, X, y, eb: EBConfig):
    """Prior to reset to, and the tau estimates it carries."""
    if eb.tau_override is not None:
        tau = {k: float(v) for k, v in eb.tau_override.items()}
        return PriorConfig.from_variances(tau), tau
    est = estimate_meta_prior(model.mean, model.var, model.categories,
                              zero_mean=eb.zero_mean, min_tau_sq=eb.min_tau_sq)
    if any(e.degenerate for e in est.values()):
        if eb.guardrail == "bootstrap":
            est = bootstrap_until_viable(model.categories, X, y, eb.bootstrap,
                                         zero_mean=eb.zero_mean).estimates
        elif eb.guardrail == "threshold":
            est = {k: CategoryMetaPrior(k, e.nu_hat, max(e.tau_sq_hat, eb.min_tau_sq),
                                        e.n_features, False) if e.degenerate else e
                   for k, e in est.items()}
        else:
            raise DegeneratePriorError("degenerate prior after the random phase", est)
    prior = prior_from_estimates(est, use_nu=not eb.zero_mean)
    return prior, {k: e.tau_sq_hat for k, e in est.items()}


def run_bandit(env: Environment, policy: Literal["standard", "eb"], T: int, *,
               batch_size: int = 500, random_phase: int = 2000, eb: EBConfig = EBConfig(),
               seed: int = 0, normalize: bool = False,
               search: Literal["auto", "exhaustive", "hill_climb"] = "auto") -> BanditResult:
    """Simulate one bandit run against a ground-truth environment.

    Rounds ``0..random_phase-1`` pull arms uniformly; the model is updated in
    batches of ``batch_size`` rounds throughout. With ``policy="eb"`` the
    model trained on the random phase yields the empirical prior, is reset
    to it and replays the random-phase log before Thompson sampling starts.

    Runs sharing ``seed`` use common random numbers: identical random-phase
    arms, reward uniforms and Thompson noise.
    """
    if policy not in ("standard", "eb"):
        raise ValueError("policy must be 'standard' or 'eb'")
    if not 0 <= random_phase <= T:
        raise ValueError("need 0 <= random_phase <= T")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    space = env.spec.space
    if not isinstance(space, LayoutSpace):
        raise TypeError("bandit environments need a LayoutSpace")
    ss_rand, ss_reward, ss_ts = np.random.SeedSequence(seed).spawn(3)
    uniforms = np.random.default_rng(ss_reward).random(T)
    model = BlipModel(space.schema.categories)
    state = BanditState(model, space, np.random.default_rng(ss_rand), phase="random",
                        normalize=normalize, search=search)
    layouts = np.empty((T, space.D), dtype=np.int64)
    rewards = np.empty(T, dtype=np.int64)

    def play(lo, hi):
        X = space.encode(layouts[lo:hi], normalize)
        rewards[lo:hi] = np.where(uniforms[lo:hi] < env.success_prob(space.encode(layouts[lo:hi])),
                                  1, -1)
        state.model.train_batch(X, rewards[lo:hi])

    for lo in range(0, random_phase, batch_size):
        hi = min(lo + batch_size, random_phase)
        layouts[lo:hi] = select_random(state, hi - lo)
        play(lo, hi)

    tau_hat = {}
    if policy == "eb" and random_phase > 0:
        X = space.encode(layouts[:random_phase], normalize)
        prior, tau_hat = _eb_prior(state.model, X, rewards[:random_phase], eb)
        state.model.reset_with_prior(prior)
        state.model.train_batch(X, rewards[:random_phase])

    state.phase = "learning"
    state.rng = np.random.default_rng(ss_ts)
    for lo in range(random_phase, T, batch_size):
        hi = min(lo + batch_size, T)
        layouts[lo:hi] = thompson_select_many(state, hi - lo)
        play(lo, hi)

    regret = _regret_per_round(env, space, layouts)
    return BanditResult(policy, layouts, rewards, regret, random_phase, batch_size,
                        tau_hat, state.model, space)


def _regret_per_round(env: Environment, space: LayoutSpace, layouts) -> np.ndarray:
    if space.allowed is None and space.n_layouts > EXHAUSTIVE_CAP:
        best = hill_climb(env.weights, space, restarts=64, max_sweeps=50, rng=0)
        best_p = float(env.success_prob(space.encode(np.array([best])))[0])
    else:
        _, scores = _optimal_arm(env.weights, space, EXHAUSTIVE_CAP)
        best_p = float(ndtr(scores.max()))
    return np.maximum(best_p - env.success_prob(space.encode(layouts)), 0.0)
