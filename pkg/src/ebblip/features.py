"""One-hot encodings with pairwise interaction features.

Index layout of an encoded vector::

    [bias | first-order one-hots, feature by feature | pair one-hots]

Pairs are laid out in the order given by ``FeatureSchema.interactions``, and
within a pair ``(a, b)`` row-major over ``(level_a, level_b)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BIAS",
    "FIRST_ORDER",
    "SECOND_ORDER",
    "FeatureSchema",
    "LayoutSpace",
    "encode_layout",
    "encode_tabular",
]

BIAS = "bias"
FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"


@dataclass
class FeatureSchema:
    """Categorical features, their levels, and the generated interactions."""

    features: list[tuple[str, list]]
    interactions: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.features = [(str(n), list(levels)) for n, levels in self.features]
        self.interactions = [(str(a), str(b)) for a, b in self.interactions]
        names = [n for n, _ in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names")
        for name, levels in self.features:
            if len(levels) < 1:
                raise ValueError(f"feature {name!r} has no levels")
            if len(set(map(str, levels))) != len(levels):
                raise ValueError(f"feature {name!r} has duplicate levels")
        self._pos = {n: i for i, n in enumerate(names)}
        seen = set()
        for a, b in self.interactions:
            if a not in self._pos or b not in self._pos:
                raise ValueError(f"interaction ({a!r}, {b!r}) names an unknown feature")
            if a == b or frozenset((a, b)) in seen:
                raise ValueError(f"invalid or repeated interaction ({a!r}, {b!r})")
            seen.add(frozenset((a, b)))
        self._level_index = [{str(lv): k for k, lv in enumerate(levels)}
                             for _, levels in self.features]
        card = self.cardinalities
        self.first_offsets = 1 + np.concatenate([[0], np.cumsum(card)[:-1]]).astype(np.int64)
        n_first = int(card.sum())
        self.pair_positions = np.array([(self._pos[a], self._pos[b]) for a, b in self.interactions],
                                       dtype=np.int64).reshape(-1, 2)
        sizes = np.array([card[i] * card[j] for i, j in self.pair_positions], dtype=np.int64)
        self.pair_offsets = (1 + n_first
                             + np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64))
        self.n_first_order = n_first
        self.n_second_order = int(sizes.sum())

    @classmethod
    def with_all_pairs(cls, features) -> "FeatureSchema":
        features = [(n, list(lv)) for n, lv in features]
        pairs = list(itertools.combinations([n for n, _ in features], 2))
        return cls(features, pairs)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([len(levels) for _, levels in self.features], dtype=np.int64)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.features]

    @property
    def dimension(self) -> int:
        return 1 + self.n_first_order + self.n_second_order

    @property
    def categories(self) -> np.ndarray:
        cats = np.empty(self.dimension, dtype=object)
        cats[0] = BIAS
        cats[1:1 + self.n_first_order] = FIRST_ORDER
        cats[1 + self.n_first_order:] = SECOND_ORDER
        return cats

    def category_ranges(self) -> dict[str, list[int]]:
        """Half-open index range ``[start, stop)`` of each category."""
        f = 1 + self.n_first_order
        return {BIAS: [0, 1], FIRST_ORDER: [1, f], SECOND_ORDER: [f, self.dimension]}

    @property
    def nnz_per_row(self) -> int:
        return 1 + len(self.features) + len(self.interactions)

    def level_codes(self, row: Mapping) -> np.ndarray:
        """Integer level code of every feature for a record keyed by feature name."""
        codes = np.empty(len(self.features), dtype=np.int64)
        for f, (name, levels) in enumerate(self.features):
            if name not in row:
                raise KeyError(f"record is missing feature {name!r}")
            value = str(row[name])
            try:
                codes[f] = self._level_index[f][value]
            except KeyError:
                raise ValueError(
                    f"unknown level {value!r} for feature {name!r}; known levels: "
                    f"{[str(v) for v in levels]}"
                ) from None
        return codes

    def encode_codes(self, codes, normalize: bool = False) -> sp.csr_matrix:
        """Encode an ``(n, n_features)`` array of level codes as a CSR matrix."""
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        card = self.cardinalities
        if codes.shape[1] != card.size:
            raise ValueError(f"expected {card.size} codes per row, got {codes.shape[1]}")
        if np.any(codes < 0) or np.any(codes >= card):
            bad = np.argwhere((codes < 0) | (codes >= card))[0]
            raise ValueError(
                f"level code {codes[tuple(bad)]} out of range for feature "
                f"{self.features[bad[1]][0]!r} (cardinality {card[bad[1]]})"
            )
        n = codes.shape[0]
        cols = [np.zeros((n, 1), dtype=np.int64), self.first_offsets + codes]
        if len(self.interactions):
            a, b = self.pair_positions[:, 0], self.pair_positions[:, 1]
            cols.append(self.pair_offsets + codes[:, a] * card[b] + codes[:, b])
        indices = np.hstack(cols).ravel()
        k = self.nnz_per_row
        value = 1.0 / math.sqrt(k) if normalize else 1.0
        data = np.full(indices.size, value)
        indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
        return sp.csr_matrix((data, indices, indptr), shape=(n, self.dimension))

    def to_dict(self) -> dict:
        return {
            "features": [{"name": n, "levels": list(lv)} for n, lv in self.features],
            "interactions": [list(p) for p in self.interactions],
            "categories": self.category_ranges(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FeatureSchema":
        schema = cls([(f["name"], f["levels"]) for f in doc["features"]],
                     [tuple(p) for p in doc.get("interactions", [])])
        if "categories" in doc and {k: list(v) for k, v in doc["categories"].items()} \
                != schema.category_ranges():
            raise ValueError("stored category ranges do not match the feature layout")
        return schema

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        return cls.from_dict(json.loads(text))


def encode_tabular(schema: FeatureSchema, row: Mapping, label_column: str | None = None,
                   positive_label=None):
    """Encode one record; returns ``(dense vector, label)``.

    The label is ``+1`` when ``row[label_column] == positive_label`` and ``-1``
    otherwise, or ``None`` when no label column is given.
    """
    x = schema.encode_codes(schema.level_codes(row)[None, :]).toarray()[0]
    if label_column is None:
        return x, None
    if label_column not in row:
        raise KeyError(f"record is missing label column {label_column!r}")
    return x, 1 if str(row[label_column]) == str(positive_label) else -1


class LayoutSpace:
    """``D`` widgets, widget ``i`` offering ``variations[i]`` contents.

    Layouts are tuples of 0-based content indices. An optional allow-list
    restricts the deployable arms.
    """

    def __init__(self, variations: Sequence[int], allowed: Iterable[Sequence[int]] | None = None):
        self.variations = tuple(int(n) for n in variations)
        if len(self.variations) < 1 or min(self.variations) < 1:
            raise ValueError("need at least one widget and every widget needs >= 1 variation")
        self.schema = FeatureSchema.with_all_pairs(
            [(f"w{i}", list(range(n))) for i, n in enumerate(self.variations)])
        self.allowed = None
        if allowed is not None:
            arms = np.array(sorted({tuple(map(int, a)) for a in allowed}), dtype=np.int64)
            if arms.size == 0:
                raise ValueError("allow-list must not be empty")
            self.check(arms)
            self.allowed = arms.reshape(-1, self.D)

    @property
    def D(self) -> int:
        return len(self.variations)

    @property
    def n_layouts(self) -> int:
        return math.prod(self.variations)

    @property
    def dimension(self) -> int:
        return self.schema.dimension

    def check(self, layouts) -> np.ndarray:
        layouts = np.atleast_2d(np.asarray(layouts, dtype=np.int64))
        if layouts.shape[1] != self.D:
            raise ValueError(f"layout must have {self.D} entries, got {layouts.shape[1]}")
        hi = np.array(self.variations)
        bad = (layouts < 0) | (layouts >= hi)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"content id {layouts[r, c]} out of range for widget {c} "
                             f"(0..{hi[c] - 1})")
        return layouts

    def all_layouts(self) -> np.ndarray:
        """Every layout, in lexicographic order."""
        grids = np.indices(self.variations).reshape(self.D, -1).T
        return np.ascontiguousarray(grids, dtype=np.int64)

    def arms(self) -> np.ndarray:
        """The deployable arm set in lexicographic order."""
        return self.allowed if self.allowed is not None else self.all_layouts()

    def encode(self, layouts, normalize: bool = False) -> sp.csr_matrix:
        return self.schema.encode_codes(self.check(layouts), normalize=normalize)

    def __repr__(self):
        return f"LayoutSpace(variations={self.variations})"


def encode_layout(space: LayoutSpace, layout, normalize: bool = False) -> np.ndarray:
    """Dense binary encoding of a single layout (bias, contents, content pairs)."""
    return space.encode(np.asarray(layout)[None, :], normalize=normalize).toarray()[0]
