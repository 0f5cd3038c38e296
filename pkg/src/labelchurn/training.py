"""Instrumented minibatch training that records prediction traces."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Dataset, LabelSpace
from .model import (
    AdamState,
    Layout,
    ModelParams,
    adam_step,
    average_params,
    batch_gradient,
    forward_batch,
    init_params,
    load_checkpoint,
    mean_xent,
    save_checkpoint,
)
from .softlabel import RunningMeanProbs, SoftLabelTable, running_mean_update, uniform_smooth_table

TRACE_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 256
    weight_decay: float = 0.0
    seed: int = 0
    hidden: int = 0
    capture_eval_every: int = 1
    capture_train: bool = False
    capture_train_stride: int = 1
    burn_in_steps: int = 0
    alpha: float = 0.0
    temperature: float = 0.5
    swa_enabled: bool = False
    track_eval_loss: bool = False
    keep_eval_probs: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.burn_in_steps < 0 or self.capture_train_stride < 1 or self.capture_eval_every < 1:
            raise ValueError("burn_in_steps >= 0, capture strides >= 1 required")
        if self.hidden < 0 or self.weight_decay < 0:
            raise ValueError("hidden and weight_decay must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def config_hash(config: TrainConfig, targets_digest: str | None = None) -> str:
    payload = json.dumps({"config": asdict(config), "targets": targets_digest}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class PredictionSnapshot:
    step: int
    split: str
    pred: np.ndarray
    gold_prob: np.ndarray
    probs: np.ndarray | None = None


@dataclass
class RunTrace:
    run_id: str
    seed: int
    config_hash: str
    eval_ids: list[str]
    snapshots: list[PredictionSnapshot]
    accuracy: float
    eval_loss: list[tuple[int, float]] = field(default_factory=list)
    train_mean: RunningMeanProbs | None = None
    params: ModelParams | None = None
    config: TrainConfig | None = None

    @property
    def final(self) -> PredictionSnapshot:
        return self.snapshots[-1]

    def pred_matrix(self) -> np.ndarray:
        """``(n_snapshots, n_eval)`` predicted label indices."""
        return np.stack([s.pred for s in self.snapshots])


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle order for one epoch; depends only on ``(seed, epoch)``."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def capture_points(spe: int, per_epoch: int) -> list[int]:
    """1-based batch indices inside an epoch after which eval is captured."""
    per_epoch = min(per_epoch, spe)
    return sorted({math.ceil(k * spe / per_epoch) for k in range(1, per_epoch + 1)})


def hard_targets(ds: Dataset) -> np.ndarray:
    return uniform_smooth_table(ds.y, ds.K, 0.0)


def _resolve_targets(config: TrainConfig, train: Dataset, targets) -> tuple[np.ndarray, str]:
    if targets is None:
        T = uniform_smooth_table(train.y, train.K, config.alpha)
        return T, f"uniform:{config.alpha!r}"
    if isinstance(targets, SoftLabelTable):
        T = targets.aligned(train.ids)
        digest = targets.digest()
    else:
        T = np.asarray(targets, dtype=np.float64)
        if T.shape != (len(train), train.K):
            raise ValueError(f"target matrix must have shape {(len(train), train.K)}, got {T.shape}")
        digest = hashlib.sha256(T.astype("<f8").tobytes()).hexdigest()
    if T.shape[1] != train.K:
        raise ValueError("soft labels have the wrong number of classes")
    return T, digest


def _snapshot(params: ModelParams, ds: Dataset, step: int, keep_probs: bool) -> PredictionSnapshot:
    _, p = forward_batch(params, ds.X)
    pred = np.argmax(p, axis=1)
    gold = p[np.arange(len(ds)), ds.y]
    return PredictionSnapshot(step, "eval", pred, gold, p if keep_probs else None)


def train_run(
    config: TrainConfig,
    train: Dataset,
    eval: Dataset,
    targets: SoftLabelTable | np.ndarray | None = None,
    *,
    run_id: str | None = None,
) -> tuple[RunTrace, ModelParams]:
    """Train one model and record its eval-set prediction trajectory.

    ``targets=None`` trains on uniformly smoothed labels with
    ``config.alpha`` (one-hot when alpha is 0). With ``config.capture_train``
    the full train set is scored after every ``capture_train_stride`` steps
    once past ``burn_in_steps`` and the running mean is kept on the trace.
    """
    if len(train) == 0 or len(eval) == 0:
        raise ValueError("empty dataset")
    if train.labels != eval.labels:
        raise ValueError("train and eval label spaces differ")
    if train.dim != eval.dim:
        raise ValueError("train and eval feature dimensions differ")
    T, digest = _resolve_targets(config, train, targets)

    layout = Layout(train.dim, config.hidden, train.K)
    params = init_params(layout, np.random.default_rng(config.seed))
    opt = AdamState.zeros(layout.size, lr=config.lr, weight_decay=config.weight_decay)

    n = len(train)
    spe = steps_per_epoch(n, config.batch_size)
    total = spe * config.epochs
    points = set(capture_points(spe, config.capture_eval_every))
    Y_eval = hard_targets(eval)

    snapshots: list[PredictionSnapshot] = []
    eval_loss: list[tuple[int, float]] = []
    epoch_ends: list[ModelParams] = []
    running = RunningMeanProbs()
    N, stride = config.burn_in_steps, config.capture_train_stride

    step = 0
    for epoch in range(config.epochs):
        perm = epoch_permutation(config.seed, epoch, n)
        for b in range(spe):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            _, grad = batch_gradient(params, train.X[idx], T[idx])
            params, opt = adam_step(opt, params, grad)
            step += 1
            if config.track_eval_loss:
                _, pe = forward_batch(params, eval.X)
                eval_loss.append((step, mean_xent(pe, Y_eval)))
            if config.capture_train and step > N and (step - N - 1) % stride == 0:
                _, ptr = forward_batch(params, train.X)
                running = running_mean_update(running, train.ids, ptr)
            if (b + 1) in points and step < total:
                snapshots.append(_snapshot(params, eval, step, config.keep_eval_probs))
        epoch_ends = (epoch_ends + [params])[-2:]

    if config.swa_enabled:
        params = average_params(epoch_ends)
    snapshots.append(_snapshot(params, eval, total, config.keep_eval_probs))
    accuracy = float(np.mean(snapshots[-1].pred == eval.y))

    trace = RunTrace(
        run_id=run_id or f"seed_{config.seed}",
        seed=config.seed,
        config_hash=config_hash(config, digest),
        eval_ids=list(eval.ids),
        snapshots=snapshots,
        accuracy=accuracy,
        eval_loss=eval_loss,
        train_mean=running if config.capture_train else None,
        params=params,
        config=config,
    )
    return trace, params


# -- multi-seed execution ----------------------------------------------------

_WORKER_SHARED: tuple = ()


def _init_worker(shared):
    global _WORKER_SHARED
    _WORKER_SHARED = shared
    threadpool_limits(1)


def _call_shared(payload):
    fn, item = payload
    return fn(*_WORKER_SHARED, item)


def map_runs(fn, items: Sequence, shared: tuple, jobs: int = 1) -> Iterator:
    """Yield ``fn(*shared, item)`` for each item, in input order.

    ``fn`` must be a module-level function. With ``jobs > 1`` the items are
    spread over a process pool that receives ``shared`` once per worker.
    BLAS is pinned to one thread either way so results never depend on
    ``jobs``.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        with threadpool_limits(1):
            for item in items:
                yield fn(*shared, item)
        return
    with ProcessPoolExecutor(
        max_workers=min(jobs, len(items)), initializer=_init_worker, initargs=(shared,)
    ) as pool:
        yield from pool.map(_call_shared, [(fn, it) for it in items])


def _run_one(train, eval, targets, config):
    return train_run(config, train, eval, targets)[0]


def run_seeds(
    config: TrainConfig,
    train: Dataset,
    eval: Dataset,
    targets: SoftLabelTable | np.ndarray | None,
    seeds: Sequence[int],
    *,
    jobs: int = 1,
) -> list[RunTrace]:
    """One trace per seed, in the order of ``seeds``."""
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate seeds in {seeds}")
    configs = [replace(config, seed=s) for s in seeds]
    return list(map_runs(_run_one, configs, (train, eval, targets), jobs))


def select_burn_in(curve: Sequence[tuple[int, float]], delta: float = 0.05) -> int:
    """First step after which the loss never exceeds ``(1 + delta) * final``."""
    if not curve:
        raise ValueError("empty loss curve")
    steps = [s for s, _ in curve]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("loss curve steps must be strictly increasing")
    bound = (1.0 + delta) * curve[-1][1]
    chosen = curve[-1][0]
    for s, loss in reversed(curve):
        if loss > bound:
            break
        chosen = s
    return chosen


# -- trace persistence -------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_trace(trace: RunTrace, labels: LabelSpace, directory: str | Path) -> Path:
    """Write ``snapshots.csv``, ``params.chrn``, optional ``probs.bin`` and,
    last, ``manifest.json`` (its presence marks a complete run)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "snapshots.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "split", "example_id", "pred_label", "gold_prob"])
        for snap in trace.snapshots:
            for eid, p, g in zip(trace.eval_ids, snap.pred, snap.gold_prob):
                w.writerow([snap.step, snap.split, eid, labels.names[p], repr(float(g))])
    has_probs = all(s.probs is not None for s in trace.snapshots)
    if has_probs:
        with open(d / "probs.bin", "wb") as fh:
            for snap in trace.snapshots:
                fh.write(snap.probs.astype("<f8").tobytes())
    if trace.params is not None:
        save_checkpoint(trace.params, d / "params.chrn")
    manifest = {
        "format": TRACE_FORMAT,
        "run_id": trace.run_id,
        "seed": trace.seed,
        "config_hash": trace.config_hash,
        "accuracy": trace.accuracy,
        "labels": list(labels.names),
        "n_eval": len(trace.eval_ids),
        "steps": [s.step for s in trace.snapshots],
        "has_probs": has_probs,
        "eval_loss": [[s, l] for s, l in trace.eval_loss],
        "config": asdict(trace.config) if trace.config is not None else None,
    }
    _atomic_write_text(d / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def read_manifest(directory: str | Path) -> dict | None:
    p = Path(directory) / "manifest.json"
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


def load_trace(directory: str | Path) -> RunTrace:
    d = Path(directory)
    man = read_manifest(d)
    if man is None:
        raise FileNotFoundError(f"{d}: no manifest.json (incomplete run?)")
    labels = {n: i for i, n in enumerate(man["labels"])}
    by_step: dict[int, tuple[list, list, list]] = {}
    with open(d / "snapshots.csv", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            ids, preds, golds = by_step.setdefault(int(rec["step"]), ([], [], []))
            ids.append(rec["example_id"])
            preds.append(labels[rec["pred_label"]])
            golds.append(float(rec["gold_prob"]))
    steps = man["steps"]
    if sorted(by_step) != sorted(steps):
        raise ValueError(f"{d}: snapshot steps do not match manifest")
    eval_ids = by_step[steps[0]][0]
    probs_blocks = None
    if man.get("has_probs"):
        K = len(man["labels"])
        raw = np.fromfile(d / "probs.bin", dtype="<f8").astype(np.float64)
        probs_blocks = raw.reshape(len(steps), len(eval_ids), K)
    snaps = []
    for k, s in enumerate(steps):
        ids, preds, golds = by_step[s]
        if ids != eval_ids:
            raise ValueError(f"{d}: snapshot at step {s} has a different example order")
        snaps.append(
            PredictionSnapshot(
                s, "eval", np.asarray(preds, dtype=np.int64), np.asarray(golds),
                None if probs_blocks is None else probs_blocks[k],
            )
        )
    params_path = d / "params.chrn"
    return RunTrace(
        run_id=man["run_id"],
        seed=man["seed"],
        config_hash=man["config_hash"],
        eval_ids=eval_ids,
        snapshots=snaps,
        accuracy=man["accuracy"],
        eval_loss=[(int(s), float(l)) for s, l in man.get("eval_loss", [])],
        params=load_checkpoint(params_path) if params_path.exists() else None,
        config=TrainConfig.from_dict(man["config"]) if man.get("config") else None,
    )
