"""Domain types and exact primitives shared across the package.

Probability vectors are plain float64 numpy arrays; :func:`as_prob_vector`
validates them. Label tallies are :class:`collections.Counter` objects keyed
by label index.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

PROB_ATOL = 1e-9


@dataclass(frozen=True)
class LabelId:
    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"label index must be non-negative, got {self.index}")
        if not self.name:
            raise ValueError("label name must be non-empty")


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, immutable set of class labels."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise ValueError(f"a label space needs K >= 2 labels, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        if any(not n for n in self.names):
            raise ValueError("label names must be non-empty")

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def labels(self) -> list[LabelId]:
        return [LabelId(i, n) for i, n in enumerate(self.names)]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}") from None

    def __getitem__(self, i: int) -> LabelId:
        return LabelId(i, self.names[i])

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Example:
    id: str
    features: dict[int, float]
    gold: LabelId
    text: str | None = None


@dataclass
class Dataset:
    """Featurized labeled examples stored column-wise.

    ``X`` is an ``(n, dim)`` CSR matrix, ``y`` the gold label indices.
    """

    ids: list[str]
    X: sp.csr_matrix
    y: np.ndarray
    labels: LabelSpace
    texts: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        n = len(self.ids)
        if self.X.shape[0] != n or self.y.shape != (n,):
            raise ValueError("ids, X and y must agree in length")
        if len(set(self.ids)) != n:
            dup = [k for k, c in Counter(self.ids).items() if c > 1]
            raise ValueError(f"duplicate example ids: {dup[:5]}")
        if n and (self.y.min() < 0 or self.y.max() >= self.labels.K):
            raise ValueError("gold label index out of range")
        if not self.texts:
            self.texts = [None] * n

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.labels.K

    def example(self, i: int) -> Example:
        row = self.X.getrow(i)
        feats = {int(j): float(v) for j, v in zip(row.indices, row.data)}
        return Example(self.ids[i], feats, self.labels[int(self.y[i])], self.texts[i])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.labels.names).encode())
        h.update("\x1e".join(self.ids).encode())
        h.update(self.y.astype("<i8").tobytes())
        X = self.X.tocsr()
        X.sort_indices()
        h.update(np.asarray(X.shape, dtype="<i8").tobytes())
        h.update(X.indptr.astype("<i8").tobytes())
        h.update(X.indices.astype("<i8").tobytes())
        h.update(X.data.astype("<f8").tobytes())
        return h.hexdigest()


def as_prob_vector(p: Sequence[float] | np.ndarray, K: int | None = None) -> np.ndarray:
    """Return ``p`` as a float64 array after checking simplex membership."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if K is not None and p.shape[0] != K:
        raise ValueError(f"expected length {K}, got {p.shape[0]}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def entropy_nats(counts: Mapping[object, int] | Iterable[int]) -> float:
    """Shannon entropy (natural log) of the empirical distribution of ``counts``.

    Accepts a mapping label -> count (e.g. a Counter) or a plain sequence of
    counts.
    """
    values = list(counts.values()) if isinstance(counts, Mapping) else list(counts)
    if any(c < 0 for c in values):
        raise ValueError("counts must be non-negative")
    total = sum(values)
    if total < 1:
        raise ValueError("no observations")
    h = 0.0
    for c in values:
        if c > 0:
            q = c / total
            h -= q * math.log(q)
    # a single observed label gives -1*log(1) == -0.0
    return h + 0.0


def label_counts(predictions: Iterable[int]) -> Counter:
    return Counter(int(p) for p in predictions)


def argmax_label(p: Sequence[float] | np.ndarray) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    # np.argmax already returns the first maximal index
    return int(np.argmax(np.asarray(p, dtype=np.float64)))


def normalize(v: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("normalize expects finite non-negative entries")
    s = v.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("degenerate distribution")
    return v / s
