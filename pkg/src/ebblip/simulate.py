"""Ground-truth environments, synthetic data streams and CSV ingestion."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .features import BIAS, FIRST_ORDER, SECOND_ORDER, FeatureSchema, LayoutSpace

__all__ = [
    "Batch",
    "DatasetStream",
    "Environment",
    "EnvironmentSpec",
    "generate_environment",
    "default_synthetic_schema",
    "generate_supervised_stream",
    "ingest_csv",
    "sample_reward",
    "sample_rewards",
]


@dataclass
class EnvironmentSpec:
    """Hierarchical ground truth: weights of category k drawn N(nu_k, tau_k^2).

    ``space`` is either a ``FeatureSchema`` or a ``LayoutSpace``.
    """

    space: FeatureSchema | LayoutSpace
    tau_sq: Mapping[str, float] = field(
        default_factory=lambda: {FIRST_ORDER: 0.85, SECOND_ORDER: 0.24})
    nu: Mapping[str, float] = field(default_factory=dict)
    bias_prior: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for cat in (FIRST_ORDER, SECOND_ORDER):
            if cat not in self.tau_sq:
                raise ValueError(f"tau_sq needs an entry for {cat!r}")
        for cat, v in list(self.tau_sq.items()) + [(BIAS, self.bias_prior[1])]:
            if v < 0:
                raise ValueError(f"tau_sq for {cat!r} must be >= 0")

    @property
    def schema(self) -> FeatureSchema:
        return self.space.schema if isinstance(self.space, LayoutSpace) else self.space


@dataclass
class Environment:
    weights: np.ndarray
    spec: EnvironmentSpec

    @property
    def schema(self) -> FeatureSchema:
        return self.spec.schema

    @property
    def weight_norm(self) -> float:
        """Euclidean norm of the true weights (the ``S`` of the regret bound)."""
        return float(np.linalg.norm(self.weights))

    def success_prob(self, X) -> np.ndarray:
        return ndtr(np.asarray(X @ self.weights, dtype=float).ravel())


def generate_environment(spec: EnvironmentSpec) -> Environment:
    """Draw the true weight of every feature from its category distribution."""
    cats = spec.schema.categories
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal(cats.size)
    mean = np.empty(cats.size)
    sd = np.empty(cats.size)
    for cat in (BIAS, FIRST_ORDER, SECOND_ORDER):
        sel = cats == cat
        if cat == BIAS:
            m, v = spec.bias_prior
        else:
            m, v = spec.nu.get(cat, 0.0), spec.tau_sq[cat]
        mean[sel] = m
        sd[sel] = np.sqrt(v)
    return Environment(mean + sd * z, spec)


def sample_rewards(env: Environment, X, rng) -> np.ndarray:
    """Labels in ``{-1, +1}``; +1 with probability ``Phi(w* . x)`` per row."""
    p = env.success_prob(X)
    return np.where(rng.random(p.size) < p, 1, -1)


def sample_reward(env: Environment, x, rng) -> int:
    X = x if sp.issparse(x) else np.atleast_2d(np.asarray(x, dtype=float))
    return int(sample_rewards(env, X, rng)[0])


@dataclass
class Batch:
    X: sp.csr_matrix
    y: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return self.y.size


@dataclass
class DatasetStream:
    """Ordered training batches plus a held-out test batch."""

    schema: FeatureSchema
    batches: list[Batch]
    test: Batch | None = None
    provenance: str = "synthetic"

    @property
    def n_batches(self) -> int:
        return len(self.batches)

    def upto(self, t: int) -> Batch:
        """Batches ``1..t`` concatenated in order."""
        if not 1 <= t <= self.n_batches:
            raise ValueError(f"t must be in 1..{self.n_batches}")
        parts = self.batches[:t]
        return Batch(sp.vstack([b.X for b in parts], format="csr"),
                     np.concatenate([b.y for b in parts]),
                     np.concatenate([b.ids for b in parts]))

    def iter_records(self):
        for b, batch in enumerate(self.batches, start=1):
            for rec in _records(batch, "train", b):
                yield rec
        if self.test is not None:
            yield from _records(self.test, "test", None)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.iter_records():
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    @classmethod
    def from_jsonl(cls, path, schema: FeatureSchema, provenance: str = "csv") -> "DatasetStream":
        """Inverse of ``to_jsonl`` given the schema the records were encoded with."""
        train: dict[int, list] = {}
        test = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["split"] == "test":
                    test.append(rec)
                else:
                    train.setdefault(int(rec["batch"]), []).append(rec)
        if not train:
            raise ValueError(f"{path} holds no training records")
        batches = [_batch_from_records(train[b], schema.dimension) for b in sorted(train)]
        return cls(schema, batches,
                   _batch_from_records(test, schema.dimension) if test else None, provenance)


def _batch_from_records(recs, dim: int) -> Batch:
    indptr = np.cumsum([0] + [len(r["indices"]) for r in recs])
    indices = np.concatenate([np.asarray(r["indices"], dtype=np.int64) for r in recs])
    data = np.concatenate([np.asarray(r["values"], dtype=float) for r in recs])
    X = sp.csr_matrix((data, indices, indptr), shape=(len(recs), dim))
    return Batch(X, np.array([r["label"] for r in recs], dtype=np.int64),
                 np.array([r["id"] for r in recs], dtype=np.int64))


def _records(batch: Batch, split: str, b):
    X = batch.X.tocsr()
    for r in range(X.shape[0]):
        lo, hi = X.indptr[r], X.indptr[r + 1]
        yield {"split": split, "batch": b, "id": int(batch.ids[r]),
               "indices": X.indices[lo:hi].tolist(),
               "values": X.data[lo:hi].tolist(), "label": int(batch.y[r])}


SYNTHETIC_CARDINALITIES = (10, 8, 6, 6, 4)


def default_synthetic_schema(cardinalities: Sequence[int] = SYNTHETIC_CARDINALITIES) -> FeatureSchema:
    """Categorical features ``f0, f1, ...`` with the given level counts and all pairs."""
    return FeatureSchema.with_all_pairs(
        [(f"f{i}", [str(v) for v in range(int(c))]) for i, c in enumerate(cardinalities)])


def generate_supervised_stream(env: Environment, n_per_batch: int, n_batches: int,
                               seed: int, n_test: int = 10_000) -> DatasetStream:
    """Rows drawn uniformly over feature levels, labels from the environment."""
    if n_per_batch < 1 or n_batches < 1 or n_test < 0:
        raise ValueError("batch sizes must be positive")
    schema = env.schema
    rng = np.random.default_rng(seed)
    card = schema.cardinalities

    def draw(n, start):
        codes = rng.integers(0, card, size=(n, card.size))
        X = schema.encode_codes(codes)
        return Batch(X, sample_rewards(env, X, rng), np.arange(start, start + n))

    batches = [draw(n_per_batch, b * n_per_batch) for b in range(n_batches)]
    test = draw(n_test, n_batches * n_per_batch) if n_test else None
    rate = np.mean(np.concatenate([b.y for b in batches]) == 1)
    if not 0.05 < rate < 0.95:
        warnings.warn(f"label base rate {rate:.3f} outside (0.05, 0.95); "
                      "consider another environment seed", RuntimeWarning, stacklevel=2)
    return DatasetStream(schema, batches, test, "synthetic")


def _read_rows(path, missing: Sequence[str]):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        if reader.fieldnames is None:
            raise ValueError(f"{path} has no header row")
        header = [h.strip() for h in reader.fieldnames]
        rows = []
        for raw in reader:
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            if any(row.get(h, "") in missing for h in header):
                continue
            rows.append(row)
    return header, rows


def ingest_csv(path, label_column: str, positive_label, interaction_mode: str = "all_pairs",
               *, n_batches: int = 6, test_path=None, missing: Sequence[str] = ("",)):
    """Read a pre-binned categorical CSV into a batched stream and its schema.

    Every non-label column is a categorical feature whose levels are those
    observed in ``path``. Rows with an empty value in any column are dropped.
    A ``test_path`` is encoded with the training schema; a level it contains
    that training never saw is an error.

    Returns
    -------
    (DatasetStream, FeatureSchema)
    """
    if interaction_mode not in ("all_pairs", "none"):
        raise ValueError("interaction_mode must be 'all_pairs' or 'none'")
    header, rows = _read_rows(Path(path), missing)
    if label_column not in header:
        raise KeyError(f"label column {label_column!r} not in header {header}")
    if not rows:
        raise ValueError(f"{path} has no complete rows")
    names = [h for h in header if h != label_column]
    features = [(n, sorted({r[n] for r in rows})) for n in names]
    schema = (FeatureSchema.with_all_pairs(features) if interaction_mode == "all_pairs"
              else FeatureSchema(features, []))

    def encode(rs, start):
        codes = np.array([schema.level_codes(r) for r in rs], dtype=np.int64)
        y = np.array([1 if r[label_column] == str(positive_label) else -1 for r in rs])
        return schema.encode_codes(codes), y, np.arange(start, start + len(rs))

    X, y, ids = encode(rows, 0)
    batches = [Batch(X[idx], y[idx], ids[idx])
               for idx in np.array_split(np.arange(len(rows)), n_batches)]
    test = None
    if test_path is not None:
        _, test_rows = _read_rows(Path(test_path), missing)
        if test_rows:
            test = Batch(*encode(test_rows, len(rows)))
    return DatasetStream(schema, batches, test, "csv"), schema
