"""End-to-end mitigation strategies and their comparison.

Six strategies are supported:

``control``      one-hot targets, no regularization
``l2``           control plus decoupled weight decay
``swa``          control with the last two end-of-epoch weights averaged
``uniform_ls``   uniformly smoothed targets
``ensemble_eb``  students trained on temperature-scaled ensemble averages
``tgtss``        students trained on the temperature-scaled running average
                 of one teacher's post-burn-in predictions
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Dataset
from .metrics import StrategyReport, attach_deltas, high_entropy_subset, le_multi, summarize
from .model import forward_batch
from .softlabel import (
    SoftLabelTable,
    ensemble_soft_labels,
    read_soft_labels,
    soft_labels_from_running_mean,
    write_soft_labels,
)
from .training import (
    RunTrace,
    TrainConfig,
    config_hash,
    load_trace,
    map_runs,
    read_manifest,
    save_trace,
    select_burn_in,
    train_run,
)

KINDS = ("control", "ensemble_eb", "l2", "swa", "uniform_ls", "tgtss")
DISPLAY_NAMES = {
    "control": "Control baseline",
    "ensemble_eb": "Ensemble baseline (E_b)",
    "l2": "L2 Regularization",
    "swa": "SWA",
    "uniform_ls": "Label Smoothing",
    "tgtss": "TGTSS",
}

# teacher seeds for the ensemble pool start here; evaluation seeds must stay below
ENSEMBLE_SEED_BASE = 1 << 40
TGTSS_SEED_XOR = 0x5A5A_0000_0000


class StaleRunError(RuntimeError):
    """Persisted state was produced by a different configuration."""


KIND_PARAMS = {
    "control": set(),
    "l2": {"weight_decay"},
    "swa": set(),
    "uniform_ls": {"alpha"},
    "ensemble_eb": {"n_models", "temperature"},
    "tgtss": {"burn_in", "temperature", "shared_teacher", "burn_in_delta"},
}
_DEFAULTS = {
    "weight_decay": 0.001,
    "alpha": 0.1,
    "n_models": 200,
    "temperature": 0.5,
    "burn_in": None,
    "shared_teacher": False,
    "burn_in_delta": 0.05,
}


@dataclass
class StrategySpec:
    """One strategy with its kind-specific parameters.

    Parameters not relevant to ``kind`` must stay ``None``; relevant ones
    left as ``None`` take the defaults in ``_DEFAULTS``.
    """

    kind: str
    base: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = tuple(range(50))
    weight_decay: float | None = None
    alpha: float | None = None
    n_models: int | None = None
    burn_in: int | None = None
    temperature: float | None = None
    shared_teacher: bool | None = None
    burn_in_delta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; choose from {KINDS}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one evaluation seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("evaluation seeds must be distinct")
        relevant = KIND_PARAMS[self.kind]
        for name in _DEFAULTS:
            if name not in relevant and getattr(self, name) is not None:
                raise ValueError(f"parameter {name!r} does not apply to strategy {self.kind!r}")
        for name in relevant:
            if getattr(self, name) is None:
                setattr(self, name, _DEFAULTS[name])
        if self.kind == "ensemble_eb" and self.n_models < 2:
            raise ValueError("ensemble_eb needs at least 2 teacher models")
        if any(s >= ENSEMBLE_SEED_BASE for s in self.seeds):
            raise ValueError(f"evaluation seeds must be below {ENSEMBLE_SEED_BASE}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seeds": list(self.seeds), "base": asdict(self.base)}
        for name in KIND_PARAMS[self.kind]:
            d[name] = getattr(self, name)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "StrategySpec":
        d = dict(d)
        base = TrainConfig.from_dict(d.pop("base", {}))
        return cls(base=base, **d)


def student_config(base: TrainConfig) -> TrainConfig:
    """Plain hard-label training config: no smoothing, decay, SWA or capture."""
    return replace(base, alpha=0.0, weight_decay=0.0, swa_enabled=False, capture_train=False,
                   track_eval_loss=False, burn_in_steps=0)


def strategy_config(spec: StrategySpec) -> TrainConfig:
    """Training config for the single-stage strategies."""
    cfg = student_config(spec.base)
    if spec.kind == "l2":
        return replace(cfg, weight_decay=spec.weight_decay)
    if spec.kind == "swa":
        return replace(cfg, swa_enabled=True)
    if spec.kind == "uniform_ls":
        return replace(cfg, alpha=spec.alpha)
    return cfg


def ensemble_teacher_seeds(n: int) -> list[int]:
    return [ENSEMBLE_SEED_BASE + i for i in range(n)]


def tgtss_teacher_seed(student_seed: int) -> int:
    return student_seed ^ TGTSS_SEED_XOR


def train_probs(params, ds: Dataset) -> np.ndarray:
    return forward_batch(params, ds.X)[1]


def train_tgtss_teacher(
    base: TrainConfig,
    train: Dataset,
    eval: Dataset,
    seed: int,
    *,
    burn_in: int | None,
    temperature: float,
    delta: float = 0.05,
) -> tuple[RunTrace, SoftLabelTable]:
    """Train a hard-label teacher and average its train-set predictions over time.

    Without an explicit ``burn_in`` a first pass of the same (deterministic)
    teacher records the eval loss after every step and the burn-in is picked
    with :func:`select_burn_in`; the second pass then captures predictions.
    """
    cfg = replace(student_config(base), seed=seed)
    key = _teacher_key(cfg, burn_in, temperature, delta)
    if burn_in is None:
        pilot, _ = train_run(replace(cfg, track_eval_loss=True), train, eval)
        burn_in = select_burn_in(pilot.eval_loss, delta)
    total = -(-len(train) // cfg.batch_size) * cfg.epochs
    if burn_in >= total:
        raise ValueError(f"burn-in exhausts trace: N={burn_in} but only {total} steps")
    teacher, _ = train_run(replace(cfg, capture_train=True, burn_in_steps=burn_in), train, eval,
                           run_id=f"teacher_{seed}")
    table = soft_labels_from_running_mean(
        teacher.train_mean, temperature, burn_in=burn_in, stride=cfg.capture_train_stride,
        source=f"teacher_{seed}",
    )
    table.provenance["teacher_key"] = key
    return teacher, table


def _teacher_key(cfg: TrainConfig, burn_in, temperature, delta) -> str:
    """Identifies everything a cached teacher table depends on."""
    rule = f"fixed:{burn_in}" if burn_in is not None else f"delta:{delta!r}"
    return config_hash(cfg, f"{rule};T={temperature!r}")


@dataclass
class StrategyResult:
    spec: StrategySpec
    traces: list[RunTrace]
    teachers: list[RunTrace] = field(default_factory=list)
    soft_labels: list[SoftLabelTable] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.spec.kind


# -- worker entry points (module level so they pickle) -----------------------


def _train_hard(train, eval, targets, config):
    return train_run(config, train, eval, targets)[0]


def _tgtss_pair(train, eval, spec, item):
    student_seed, teacher_seed, table = item
    teacher = None
    if table is None:
        teacher, table = train_tgtss_teacher(
            spec.base, train, eval, teacher_seed, burn_in=spec.burn_in,
            temperature=spec.temperature, delta=spec.burn_in_delta,
        )
    cfg = replace(student_config(spec.base), seed=student_seed)
    student, _ = train_run(cfg, train, eval, table)
    return teacher, table, student


class _Store:
    """Per-strategy output tree with resume support (``None`` root = in-memory)."""

    def __init__(self, root: Path | None, labels):
        self.root = root
        self.labels = labels

    def trace_dir(self, group: str, seed: int) -> Path:
        return self.root / group / f"seed_{seed:06d}"

    def load(self, group: str, seed: int, expected_hash: str | None) -> RunTrace | None:
        if self.root is None:
            return None
        d = self.trace_dir(group, seed)
        man = read_manifest(d)
        if man is None:
            return None
        if expected_hash is not None and man["config_hash"] != expected_hash:
            raise StaleRunError(
                f"{d} was produced with config hash {man['config_hash']}, expected {expected_hash}; "
                "remove it or choose a fresh --out directory"
            )
        return load_trace(d)

    def save(self, group: str, trace: RunTrace) -> None:
        if self.root is not None:
            save_trace(trace, self.labels, self.trace_dir(group, trace.seed))

    def soft_path(self, name: str) -> Path | None:
        if self.root is None:
            return None
        (self.root / "softlabels").mkdir(parents=True, exist_ok=True)
        return self.root / "softlabels" / name


def _run_group(store, group, configs, targets, digest, train, eval, jobs, log):
    """Train (or reload) one trace per config; returns traces in config order."""
    out: dict[int, RunTrace] = {}
    todo = []
    for c in configs:
        tr = store.load(group, c.seed, config_hash(c, digest))
        if tr is not None:
            out[c.seed] = tr
        else:
            todo.append(c)
    if len(todo) < len(configs):
        log(f"{group}: {len(configs) - len(todo)} run(s) already complete")
    for c, tr in zip(todo, map_runs(_train_hard, todo, (train, eval, targets), jobs)):
        store.save(group, tr)
        out[c.seed] = tr
        log(f"{group}: seed {c.seed} accuracy={tr.accuracy:.4f}")
    return [out[c.seed] for c in configs]


def run_strategy(
    spec: StrategySpec,
    train: Dataset,
    eval: Dataset,
    *,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    log: Callable[[str], None] = lambda msg: None,
) -> StrategyResult:
    """Run every evaluation seed of one strategy.

    With ``out_dir`` each finished run is persisted as it completes and runs
    already on disk with a matching config hash are reused; a mismatching
    hash raises :class:`StaleRunError`.
    """
    if train.labels != eval.labels:
        raise ValueError("train and eval must share a label space")
    store = _Store(Path(out_dir) if out_dir is not None else None, train.labels)
    if store.root is not None:
        store.root.mkdir(parents=True, exist_ok=True)
    result = _dispatch(spec, train, eval, store, jobs, log)
    if store.root is not None:
        # written last so it always describes the traces on disk
        (store.root / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    return result


def _dispatch(spec, train, eval, store, jobs, log) -> StrategyResult:
    if spec.kind in ("control", "l2", "swa", "uniform_ls"):
        cfg = strategy_config(spec)
        configs = [replace(cfg, seed=s) for s in spec.seeds]
        traces = _run_group(store, "traces", configs, None, f"uniform:{cfg.alpha!r}", train, eval, jobs, log)
        return StrategyResult(spec, traces)

    if spec.kind == "ensemble_eb":
        tseeds = ensemble_teacher_seeds(spec.n_models)
        if set(tseeds) & set(spec.seeds):
            raise ValueError("ensemble teacher seeds overlap evaluation seeds")
        tcfg = student_config(spec.base)
        teachers = _run_group(store, "teachers", [replace(tcfg, seed=s) for s in tseeds], None,
                              "uniform:0.0", train, eval, jobs, log)
        tables = [(train.ids, train_probs(t.params, train)) for t in teachers]
        soft = ensemble_soft_labels(tables, spec.temperature)
        if store.root is not None:
            write_soft_labels(soft, train.labels, store.soft_path("ensemble.csv"))
        configs = [replace(tcfg, seed=s) for s in spec.seeds]
        traces = _run_group(store, "traces", configs, soft, soft.digest(), train, eval, jobs, log)
        return StrategyResult(spec, traces, teachers, [soft])

    return _run_tgtss(spec, train, eval, store, jobs, log)


def _run_tgtss(spec, train, eval, store, jobs, log) -> StrategyResult:
    teacher_seeds = [tgtss_teacher_seed(s) for s in spec.seeds]
    if set(teacher_seeds) & set(spec.seeds):
        raise ValueError("TGTSS teacher seeds collide with evaluation seeds")
    if spec.shared_teacher:
        teacher_seeds = [teacher_seeds[0]] * len(spec.seeds)
    scfg = student_config(spec.base)

    def save_teacher(teacher, table):
        store.save("teachers", teacher)
        path = store.soft_path(f"teacher_{teacher.seed}.csv")
        if path is not None:
            write_soft_labels(table, train.labels, path)

    tables: dict[int, SoftLabelTable] = {}
    for ts in set(teacher_seeds):
        path = store.soft_path(f"teacher_{ts}.csv")
        if path is not None and path.exists() and read_manifest(store.trace_dir("teachers", ts)):
            table = read_soft_labels(path, train.labels)
            want = _teacher_key(replace(scfg, seed=ts), spec.burn_in, spec.temperature, spec.burn_in_delta)
            if table.provenance.get("teacher_key") != want:
                raise StaleRunError(
                    f"{path} was built with different teacher settings; "
                    "remove it or choose a fresh --out directory"
                )
            tables[ts] = table
    if spec.shared_teacher and teacher_seeds[0] not in tables:
        teacher, table = train_tgtss_teacher(
            spec.base, train, eval, teacher_seeds[0], burn_in=spec.burn_in,
            temperature=spec.temperature, delta=spec.burn_in_delta,
        )
        save_teacher(teacher, table)
        tables[teacher.seed] = table

    done: dict[int, tuple] = {}
    todo = []
    for s, ts in zip(spec.seeds, teacher_seeds):
        table = tables.get(ts)
        if table is not None:
            student = store.load("traces", s, config_hash(replace(scfg, seed=s), table.digest()))
            if student is not None:
                done[s] = (store.load("teachers", ts, None), table, student)
                continue
        todo.append((s, ts, table))
    if done:
        log(f"tgtss: {len(done)} pair(s) already complete")
    for (s, ts, _), (teacher, table, student) in zip(
        todo, map_runs(_tgtss_pair, todo, (train, eval, spec), jobs)
    ):
        if teacher is not None:
            save_teacher(teacher, table)
        store.save("traces", student)
        done[s] = (teacher, table, student)
        log(f"tgtss: seed {s} (teacher {ts}, N={table.provenance.get('N')}) accuracy={student.accuracy:.4f}")

    traces = [done[s][2] for s in spec.seeds]
    teachers = [done[s][0] for s in spec.seeds if done[s][0] is not None]
    return StrategyResult(spec, traces, teachers, [done[s][1] for s in spec.seeds])


def ordered_kinds(kinds) -> list[str]:
    return [k for k in KINDS if k in kinds]


def compare(results: Mapping[str, Sequence[RunTrace]]) -> list[StrategyReport]:
    """Strategy reports with deltas relative to ``control``.

    Rows are ordered control, ensemble, baselines, TGTSS. The high-entropy
    subset is taken from the control runs and reused for every strategy.
    """
    if "control" not in results:
        raise ValueError("missing control strategy")
    control_per = le_multi(results["control"])
    high = high_entropy_subset(control_per)
    reports = {k: summarize(k, results[k], high) for k in ordered_kinds(results)}
    attach_deltas(reports, "control", "ensemble_eb" if "ensemble_eb" in reports else None)
    return list(reports.values())
