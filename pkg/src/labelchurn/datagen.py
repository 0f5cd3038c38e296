"""Synthetic ambiguous-classification data and JSONL corpus loading."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import Dataset, LabelSpace
from .model import featurize

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class SynthSpec:
    K: int = 6
    n_per_class: int = 200
    dim: int = 8
    separation: float = 3.0
    label_noise: float = 0.0
    ambiguous_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"need at least 2 classes, got K={self.K}")
        if self.dim < self.K:
            raise ValueError(f"dim ({self.dim}) must be >= K ({self.K}) to place equidistant centroids")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        for name in ("label_noise", "ambiguous_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_per_class < 5:
            raise ValueError("degenerate dataset: n_per_class must be >= 5")


def class_names(K: int) -> tuple[str, ...]:
    width = len(str(K - 1))
    return tuple(f"c{i:0{width}d}" for i in range(K))


def in_train_split(example_id: str) -> bool:
    """Stable 80/20 assignment from a hash of the id."""
    h = int.from_bytes(hashlib.sha256(example_id.encode()).digest()[:8], "little")
    return (h % 10_000) < TRAIN_FRACTION * 10_000


def centroids(K: int, dim: int, separation: float) -> np.ndarray:
    # scaled standard basis vectors: every pair sits `separation` apart
    C = np.zeros((K, dim))
    C[np.arange(K), np.arange(K)] = separation / math.sqrt(2.0)
    return C


def gen_points(spec: SynthSpec) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Ids, feature matrix and gold labels for the full generated set."""
    rng = np.random.default_rng(spec.seed)
    C = centroids(spec.K, spec.dim, spec.separation)
    n = spec.K * spec.n_per_class
    y = np.repeat(np.arange(spec.K), spec.n_per_class)
    X = C[y] + rng.standard_normal((n, spec.dim))

    n_amb = int(round(spec.ambiguous_frac * n))
    if n_amb:
        amb = rng.choice(n, size=n_amb, replace=False)
        other = (y[amb] + rng.integers(1, spec.K, size=n_amb)) % spec.K
        mid = 0.5 * (C[y[amb]] + C[other])
        X[amb] = mid + rng.standard_normal((n_amb, spec.dim))

    n_noise = int(round(spec.label_noise * n))
    if n_noise:
        noisy = rng.choice(n, size=n_noise, replace=False)
        y[noisy] = rng.integers(0, spec.K, size=n_noise)

    ids = [f"syn{spec.seed}-{i:06d}" for i in range(n)]
    return ids, X, y


def gen_synthetic(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    ids, X, y = gen_points(spec)
    labels = LabelSpace(class_names(spec.K))
    mask = np.array([in_train_split(i) for i in ids])

    def subset(m):
        return Dataset(
            [i for i, keep in zip(ids, m) if keep], sp.csr_matrix(X[m]), y[m], labels
        )

    return subset(mask), subset(~mask)


# -- JSONL -------------------------------------------------------------------


def _parse_features(obj, lineno: int, path) -> dict[int, float]:
    feats = obj["features"]
    if isinstance(feats, list):
        return {i: float(v) for i, v in enumerate(feats) if v != 0}
    if isinstance(feats, dict):
        try:
            return {int(k): float(v) for k, v in feats.items()}
        except (TypeError, ValueError):
            raise ValueError(f"{path}:{lineno}: feature keys must be integer indices") from None
    raise ValueError(f"{path}:{lineno}: 'features' must be an array or an index->weight object")


def load_jsonl(
    path: str | Path,
    *,
    dim: int = 4096,
    salt: int = 0,
    labels: LabelSpace | None = None,
) -> Dataset:
    """Load ``{"id", "label", "text"|"features"}`` rows into a :class:`Dataset`.

    Text rows are hashed with :func:`featurize` into ``dim`` buckets. Rows
    with a dense ``features`` array fix the dimensionality to the array
    length. Without an explicit ``labels`` space, the sorted distinct labels
    of the file are used.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object")
            for key in ("id", "label"):
                if key not in obj:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            has_text, has_feats = "text" in obj, "features" in obj
            if has_text == has_feats:
                raise ValueError(f"{path}:{lineno}: need exactly one of 'text' or 'features'")
            rows.append((lineno, obj))
    if not rows:
        raise ValueError(f"{path}: empty file")

    dense_dims = {len(o["features"]) for _, o in rows if isinstance(o.get("features"), list)}
    if len(dense_dims) > 1:
        raise ValueError(f"{path}: dense feature arrays have inconsistent lengths {sorted(dense_dims)}")
    if dense_dims:
        dim = dense_dims.pop()

    if labels is None:
        try:
            labels = LabelSpace(tuple(sorted({str(o["label"]) for _, o in rows})))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None

    ids, texts, gold, r_idx, c_idx, vals = [], [], [], [], [], []
    seen: dict[str, int] = {}
    for r, (lineno, obj) in enumerate(rows):
        eid = str(obj["id"])
        if eid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {eid!r} (first on line {seen[eid]})")
        seen[eid] = lineno
        try:
            gold.append(labels.index(str(obj["label"])))
        except KeyError:
            raise ValueError(f"{path}:{lineno}: label {obj['label']!r} not in label space") from None
        if "text" in obj:
            feats = featurize(str(obj["text"]), dim, salt)
            texts.append(str(obj["text"]))
        else:
            feats = _parse_features(obj, lineno, path)
            texts.append(None)
        for j, v in feats.items():
            if not 0 <= j < dim:
                raise ValueError(f"{path}:{lineno}: feature index {j} outside [0, {dim})")
            r_idx.append(r)
            c_idx.append(j)
            vals.append(v)
        ids.append(eid)
    X = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(len(ids), dim), dtype=np.float64)
    X.sum_duplicates()
    return Dataset(ids, X, np.asarray(gold), labels, texts)


def write_jsonl(ds: Dataset, path: str | Path) -> None:
    """Export with dense ``features`` arrays; texts are not written."""
    dense = ds.X.toarray()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, eid in enumerate(ds.ids):
            row = {"id": eid, "label": ds.labels.names[ds.y[i]], "features": [float(v) for v in dense[i]]}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
