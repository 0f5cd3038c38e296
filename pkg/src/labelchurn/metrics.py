"""Label-entropy instability metrics and strategy-level aggregates."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import entropy_nats
from .training import RunTrace

HIGH_ENTROPY_THRESHOLD = 0.56


@dataclass
class ExampleInstability:
    example_id: str
    le_m: float
    le_s: float | None
    mu_m: float
    sigma_m: float
    pred_counts: Counter


def _check_same_eval(traces: Sequence[RunTrace]) -> list[str]:
    ids = traces[0].eval_ids
    for t in traces[1:]:
        if t.eval_ids != ids:
            raise ValueError(f"trace {t.run_id} was evaluated on a different example set")
    return ids


def le_single(trace: RunTrace) -> np.ndarray:
    """Per-example entropy of predicted labels across one run's eval snapshots."""
    if len(trace.snapshots) < 2:
        raise ValueError("insufficient checkpoints")
    preds = trace.pred_matrix()
    return np.array([entropy_nats(Counter(col.tolist())) for col in preds.T])


def le_multi(traces: Sequence[RunTrace], le_s_source: RunTrace | None = None) -> list[ExampleInstability]:
    """Per-example instability across runs, from each run's final snapshot.

    ``le_s`` is taken from ``le_s_source`` (default: the first trace) when it
    has at least two snapshots.
    """
    if len(traces) < 2:
        raise ValueError("need at least two runs to measure multi-run entropy")
    ids = _check_same_eval(traces)
    finals = np.stack([t.final.pred for t in traces])
    gold = np.stack([t.final.gold_prob for t in traces])
    mu = gold.mean(axis=0)
    sigma = gold.std(axis=0)
    src = le_s_source if le_s_source is not None else traces[0]
    les = le_single(src) if len(src.snapshots) >= 2 else None
    out = []
    for i, eid in enumerate(ids):
        counts = Counter(finals[:, i].tolist())
        out.append(
            ExampleInstability(
                eid, entropy_nats(counts), None if les is None else float(les[i]),
                float(mu[i]), float(sigma[i]), counts,
            )
        )
    return out


def delta_le(sum_method: float, sum_control: float) -> float:
    """Percentage reduction of summed entropy relative to the control."""
    if sum_control <= 0:
        raise ValueError("control has zero entropy")
    # adding 0.0 turns a signed zero into +0.0
    return 100.0 * (sum_control - sum_method) / sum_control + 0.0


def pct_of_ensemble(delta_method: float, delta_ensemble: float) -> float | None:
    if delta_ensemble == 0:
        return None
    return 100.0 * delta_method / delta_ensemble + 0.0


def high_entropy_subset(control: Iterable[ExampleInstability], threshold: float = HIGH_ENTROPY_THRESHOLD) -> set[str]:
    return {e.example_id for e in control if e.le_m > threshold}


def accuracy_stats(traces: Sequence[RunTrace]) -> tuple[float, float]:
    if not traces:
        raise ValueError("no runs")
    acc = np.array([t.accuracy for t in traces])
    return float(acc.mean()), float(acc.std())


def correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length sequences with at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance")
    return float(dx @ dy) / math.sqrt(sxx * syy)


# -- strategy reports ---------------------------------------------------------


@dataclass
class StrategyReport:
    strategy: str
    n_runs: int
    accuracy_mean: float
    accuracy_std: float
    sum_le_m: float
    sum_le_s: float | None
    sum_le_m_high: float
    sum_le_s_high: float | None
    delta_le_m_pct: float | None = None
    delta_le_s_pct: float | None = None
    delta_le_m_high_pct: float | None = None
    delta_le_s_high_pct: float | None = None
    pct_of_ensemble: float | None = None
    pct_of_ensemble_s: float | None = None
    per_example: list[ExampleInstability] = field(default_factory=list, repr=False)


def _sum(per_example, attr, subset=None):
    vals = [getattr(e, attr) for e in per_example if subset is None or e.example_id in subset]
    if any(v is None for v in vals):
        return None
    return float(math.fsum(vals))


def summarize(strategy: str, traces: Sequence[RunTrace], high_ids: set[str] | None = None) -> StrategyReport:
    per = le_multi(traces)
    mean, std = accuracy_stats(traces)
    high_ids = high_ids if high_ids is not None else set()
    return StrategyReport(
        strategy=strategy,
        n_runs=len(traces),
        accuracy_mean=mean,
        accuracy_std=std,
        sum_le_m=_sum(per, "le_m"),
        sum_le_s=_sum(per, "le_s"),
        sum_le_m_high=_sum(per, "le_m", high_ids),
        sum_le_s_high=_sum(per, "le_s", high_ids),
        per_example=per,
    )


def _safe_delta(method, control):
    if method is None or control is None or control <= 0:
        return None
    return delta_le(method, control)


def attach_deltas(
    reports: Mapping[str, StrategyReport], control: str = "control", ensemble: str | None = "ensemble_eb"
) -> None:
    """Fill the delta and %-of-ensemble fields of every report in place."""
    if control not in reports:
        raise ValueError("missing control strategy")
    c = reports[control]
    for r in reports.values():
        r.delta_le_m_pct = _safe_delta(r.sum_le_m, c.sum_le_m)
        r.delta_le_s_pct = _safe_delta(r.sum_le_s, c.sum_le_s)
        r.delta_le_m_high_pct = _safe_delta(r.sum_le_m_high, c.sum_le_m_high)
        r.delta_le_s_high_pct = _safe_delta(r.sum_le_s_high, c.sum_le_s_high)
    e = reports.get(ensemble) if ensemble else None
    for r in reports.values():
        if e is None:
            r.pct_of_ensemble = r.pct_of_ensemble_s = None
            continue
        if r.delta_le_m_pct is not None and e.delta_le_m_pct is not None:
            r.pct_of_ensemble = pct_of_ensemble(r.delta_le_m_pct, e.delta_le_m_pct)
        if r.delta_le_s_pct is not None and e.delta_le_s_pct is not None:
            r.pct_of_ensemble_s = pct_of_ensemble(r.delta_le_s_pct, e.delta_le_s_pct)
