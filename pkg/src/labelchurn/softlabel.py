"""Soft training targets: uniform smoothing, ensemble and temporal averages.

Tables are stored as ``(n, K)`` float64 matrices aligned with an id list.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import LabelSpace, normalize


def uniform_smooth(gold: int, K: int, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    t = np.full(K, alpha / K)
    t[gold] += 1.0 - alpha
    return t


def uniform_smooth_table(gold: np.ndarray, K: int, alpha: float) -> np.ndarray:
    """Row-wise :func:`uniform_smooth` for a vector of gold indices."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    gold = np.asarray(gold)
    T = np.full((gold.shape[0], K), alpha / K)
    T[np.arange(gold.shape[0]), gold] += 1.0 - alpha
    return T


def temperature_scale(p, T: float) -> np.ndarray:
    """Raise each probability to the power ``T`` and renormalize.

    Works on a single vector or row-wise on a matrix. ``T < 1`` flattens the
    distribution, ``T > 1`` sharpens it, zeros stay zero.
    """
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    p = np.asarray(p, dtype=np.float64)
    if T == 1.0:
        return normalize(p)
    return normalize(np.power(p, T))


@dataclass
class SoftLabelTable:
    ids: list[str]
    probs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.ids):
            raise ValueError("probs must be an (n_ids, K) matrix")

    def __len__(self) -> int:
        return len(self.ids)

    def get(self, example_id: str) -> np.ndarray:
        return self.probs[self.ids.index(example_id)]

    def aligned(self, ids: Sequence[str]) -> np.ndarray:
        """Rows reordered to ``ids``; raises if any id is missing."""
        pos = {e: i for i, e in enumerate(self.ids)}
        missing = [e for e in ids if e not in pos]
        if missing:
            raise ValueError(f"soft labels missing for {len(missing)} example(s): {missing[:5]}")
        return self.probs[[pos[e] for e in ids]]

    def digest(self) -> str:
        h = hashlib.sha256("\x1e".join(self.ids).encode())
        h.update(self.probs.astype("<f8").tobytes())
        return h.hexdigest()


def _check_same_ids(tables: Sequence[tuple[Sequence[str], np.ndarray]]) -> list[str]:
    ref = list(tables[0][0])
    ref_set = set(ref)
    for k, (ids, probs) in enumerate(tables[1:], 1):
        if list(ids) != ref:
            missing = sorted(ref_set - set(ids))
            extra = sorted(set(ids) - ref_set)
            raise ValueError(
                f"table {k} does not cover the same examples: missing {missing[:5]}, extra {extra[:5]}"
            )
    return ref


def ensemble_soft_labels(tables: Sequence[tuple[Sequence[str], np.ndarray]], T: float) -> SoftLabelTable:
    """Average per-model probability tables, then temperature-scale."""
    if not tables:
        raise ValueError("need at least one model table")
    ids = _check_same_ids(tables)
    state = RunningMeanProbs()
    for tid, probs in tables:
        state = running_mean_update(state, tid, probs)
    return SoftLabelTable(
        ids, temperature_scale(state.mean, T), {"provenance": "ensemble", "T": T, "n_models": len(tables)}
    )


@dataclass
class RunningMeanProbs:
    """Streaming per-example mean of probability tables."""

    ids: list[str] | None = None
    mean: np.ndarray | None = None
    samples_seen: int = 0


def running_mean_update(state: RunningMeanProbs, ids: Sequence[str], probs: np.ndarray) -> RunningMeanProbs:
    probs = np.asarray(probs, dtype=np.float64)
    if state.samples_seen == 0:
        return RunningMeanProbs(list(ids), probs.copy(), 1)
    if list(ids) != state.ids or probs.shape != state.mean.shape:
        raise ValueError("running mean update does not cover the same examples")
    n = state.samples_seen + 1
    mean = state.mean + (probs - state.mean) / n
    return RunningMeanProbs(state.ids, mean, n)


def soft_labels_from_running_mean(
    state: RunningMeanProbs, T: float, *, burn_in: int, stride: int = 1, source: str | None = None
) -> SoftLabelTable:
    if state.samples_seen == 0:
        raise ValueError("burn-in exhausts trace")
    prov = {"provenance": "temporal", "T": T, "N": burn_in, "stride": stride, "captures": state.samples_seen}
    if source is not None:
        prov["source"] = source
    return SoftLabelTable(list(state.ids), temperature_scale(state.mean, T), prov)


def temporal_soft_labels(
    captures: Iterable[tuple[int, Sequence[str], np.ndarray]], N: int, T: float, stride: int = 1
) -> SoftLabelTable:
    """Temperature-scaled mean of one teacher's train-set predictions after step ``N``.

    ``captures`` yields ``(step, ids, probs)``; captures at or before ``N``
    are skipped.
    """
    if N < 0:
        raise ValueError("burn-in must be non-negative")
    state = RunningMeanProbs()
    for step, ids, probs in captures:
        if step > N:
            state = running_mean_update(state, ids, probs)
    return soft_labels_from_running_mean(state, T, burn_in=N, stride=stride)


# -- CSV persistence ----------------------------------------------------------


def write_soft_labels(table: SoftLabelTable, labels: LabelSpace, path: str | Path) -> None:
    """First line: ``# {provenance json}``; then ``example_id,<labels...>``."""
    if table.probs.shape[1] != labels.K:
        raise ValueError("table width does not match label space")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(table.provenance, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", *labels.names])
        for eid, row in zip(table.ids, table.probs):
            w.writerow([eid, *(repr(float(v)) for v in row)])


def read_soft_labels(path: str | Path, labels: LabelSpace | None = None) -> SoftLabelTable:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing provenance line")
        prov = json.loads(first[2:])
        reader = csv.reader(fh)
        header = next(reader)
        if labels is not None and tuple(header[1:]) != labels.names:
            raise ValueError(f"{path}: label columns {header[1:]} do not match {list(labels.names)}")
        ids, rows = [], []
        for rec in reader:
            ids.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return SoftLabelTable(ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 1), prov)
