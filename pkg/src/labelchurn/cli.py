"""Command-line entry point.

Subcommands::

    gen          write a synthetic train/eval pair as JSONL
    run          train one or more strategies over a seed range
    soft-labels  build a soft-label table without training students
    metrics      per-example instability for one finished strategy
    report       comparison tables, per-example CSVs and trajectory data

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import Dataset, LabelSpace, entropy_nats
from .datagen import SynthSpec, gen_synthetic, load_jsonl, write_jsonl
from .metrics import (
    ExampleInstability,
    StrategyReport,
    accuracy_stats,
    correlation,
    high_entropy_subset,
    le_multi,
    summarize,
)
from .mitigation import (
    DISPLAY_NAMES,
    KIND_PARAMS,
    KINDS,
    StaleRunError,
    StrategySpec,
    compare,
    ensemble_teacher_seeds,
    ordered_kinds,
    run_strategy,
    student_config,
    tgtss_teacher_seed,
    train_probs,
    train_tgtss_teacher,
)
from .softlabel import SoftLabelTable, ensemble_soft_labels, uniform_smooth_table, write_soft_labels
from .training import RunTrace, TrainConfig, load_trace, run_seeds

log = logging.getLogger("labelchurn")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
DEFAULT_SEEDS = "0..49"

# flag name -> StrategySpec field
_STRATEGY_FLAGS = {
    "weight_decay": "weight_decay",
    "alpha": "alpha",
    "n_models": "n_models",
    "burn_in": "burn_in",
    "temperature": "temperature",
    "shared_teacher": "shared_teacher",
    "burn_in_delta": "burn_in_delta",
}
# flag name -> TrainConfig field
_TRAIN_FLAGS = {
    "lr": "lr",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "hidden": "hidden",
    "capture_eval_every": "capture_eval_every",
    "capture_train_stride": "capture_train_stride",
}


class UsageError(Exception):
    pass


# -- small helpers -----------------------------------------------------------


def parse_seed_range(text: str | Sequence[int]) -> tuple[int, ...]:
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    if not isinstance(text, str):
        return tuple(int(s) for s in text)
    text = text.strip()
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    try:
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        seeds = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r}; use a..b or a,b,c") from None
    if any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return seeds


def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _fmt1(x, scale: float = 1.0) -> str:
    return "" if x is None else f"{x * scale:.1f}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)[:80]


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config} is not valid JSON: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _seeds(args, cfg) -> tuple[int, ...]:
    if args.seed_range is not None:
        return args.seed_range
    try:
        return parse_seed_range(cfg.get("seeds", DEFAULT_SEEDS))
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"config 'seeds': {exc}") from None


def _jobs(args, cfg) -> int:
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return jobs


def _base_config(args, cfg) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    for flag, name in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training options: {exc}") from None


# -- datasets and the experiment manifest -------------------------------------


def _data_paths(args, cfg) -> tuple[Path, Path]:
    data = cfg.get("paths", {})
    train = args.train or data.get("train") or Path(args.out) / "data" / "train.jsonl"
    ev = args.eval or data.get("eval") or Path(args.out) / "data" / "eval.jsonl"
    return Path(train), Path(ev)


def _scan_labels(paths: Sequence[Path]) -> LabelSpace:
    meta = paths[0].parent / "dataset.json"
    if meta.exists():
        names = json.loads(meta.read_text(encoding="utf-8")).get("labels")
        if names:
            return LabelSpace(tuple(names))
    names = set()
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    try:
                        names.add(str(json.loads(line)["label"]))
                    except (json.JSONDecodeError, KeyError, TypeError):
                        pass  # load_jsonl reports the offending line
    return LabelSpace(tuple(sorted(names)))


def _load_data(args, cfg) -> tuple[Dataset, Dataset, Path, Path]:
    tp, ep = _data_paths(args, cfg)
    for p in (tp, ep):
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run 'labelchurn gen' first or pass --train/--eval")
    labels = _scan_labels([tp, ep])
    dim = args.dim if args.dim is not None else int(cfg.get("dim", 4096))
    salt = args.salt if args.salt is not None else int(cfg.get("salt", 0))
    train = load_jsonl(tp, dim=dim, salt=salt, labels=labels)
    ev = load_jsonl(ep, dim=dim, salt=salt, labels=labels)
    return train, ev, tp, ep


def _manifest_path(out: Path) -> Path:
    return out / "experiment.json"


def _open_manifest(out: Path, train: Dataset, ev: Dataset, tp: Path, ep: Path) -> dict:
    """Load or create the experiment manifest, refusing a dataset change."""
    path = _manifest_path(out)
    fp = {"train": train.fingerprint(), "eval": ev.fingerprint()}
    if path.exists():
        man = json.loads(path.read_text(encoding="utf-8"))
        if man.get("dataset", {}).get("fingerprint") != fp:
            raise StaleRunError(
                f"{out} holds runs for a different dataset (fingerprint mismatch); choose a fresh --out directory"
            )
        return man
    return {
        "experiment_id": hashlib.sha256((fp["train"] + fp["eval"]).encode()).hexdigest()[:12],
        "tool_version": __version__,
        "output_root": str(out),
        "dataset": {"fingerprint": fp, "train": str(tp), "eval": str(ep), "labels": list(train.labels.names)},
        "strategies": {},
        "seeds": {},
        "status": "created",
    }


# -- gen ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    d = dict(cfg.get("data", {}))
    for flag, name in [("classes", "K"), ("per_class", "n_per_class"), ("dim", "dim"),
                       ("separation", "separation"), ("noise", "label_noise"),
                       ("ambiguous", "ambiguous_frac"), ("seed", "seed")]:
        v = getattr(args, flag)
        if v is not None:
            d[name] = v
    try:
        spec = SynthSpec(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    train, ev = gen_synthetic(spec)
    out = Path(args.out) / "data"
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(train, out / "train.jsonl")
    write_jsonl(ev, out / "eval.jsonl")
    meta = {
        "generator": asdict(spec),
        "labels": list(train.labels.names),
        "fingerprint": {"train": train.fingerprint(), "eval": ev.fingerprint()},
        "sizes": {"train": len(train), "eval": len(ev)},
        "tool_version": __version__,
    }
    _write_json_atomic(out / "dataset.json", meta)
    print(f"wrote {len(train)} train and {len(ev)} eval examples to {out}")
    return EXIT_OK


# -- run ---------------------------------------------------------------------


def _strategy_specs(args, cfg, base: TrainConfig, seeds: tuple[int, ...]) -> list[StrategySpec]:
    given = {f: getattr(args, f) for f in _STRATEGY_FLAGS if getattr(args, f, None) is not None}
    if args.strategy:
        kinds = list(KINDS) if args.strategy == "all" else [k.strip() for k in args.strategy.split(",")]
        entries = [{"kind": k} for k in kinds]
    else:
        entries = [dict(e) for e in cfg.get("strategies", [])]
    if not entries:
        raise UsageError("no strategy selected; pass --strategy or list 'strategies' in --config")
    for e in entries:
        if e.get("kind") not in KINDS:
            raise UsageError(f"unknown strategy {e.get('kind')!r}; choose from {', '.join(KINDS)} or 'all'")

    for flag in given:
        if not any(_STRATEGY_FLAGS[flag] in KIND_PARAMS[e["kind"]] for e in entries):
            raise UsageError(f"--{flag.replace('_', '-')} does not apply to the selected strategies")
    specs = []
    for e in entries:
        params = {k: v for k, v in e.items() if k not in ("kind", "seeds")}
        for flag, v in given.items():
            if _STRATEGY_FLAGS[flag] in KIND_PARAMS[e["kind"]]:
                params[_STRATEGY_FLAGS[flag]] = v
        try:
            specs.append(StrategySpec(e["kind"], base, seeds, **params))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"strategy {e['kind']}: {exc}") from None
    return specs


def _summary_row(r: StrategyReport) -> list[str]:
    return [r.strategy, DISPLAY_NAMES[r.strategy], str(r.n_runs), _fmt(r.accuracy_mean), _fmt(r.accuracy_std),
            _fmt(r.sum_le_m), _fmt(r.sum_le_s)]


def cmd_run(args) -> int:
    cfg = _load_config(args)
    base = _base_config(args, cfg)
    seeds = _seeds(args, cfg)
    jobs = _jobs(args, cfg)
    specs = _strategy_specs(args, cfg, base, seeds)
    train, ev, tp, ep = _load_data(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _open_manifest(out, train, ev, tp, ep)
    # specs move from "pending" to "strategies" only once their runs exist
    man["pending"] = {spec.kind: spec.to_dict() for spec in specs}
    man["status"] = "running"
    _write_json_atomic(_manifest_path(out), man)

    for spec in specs:
        root = out / "strategies" / spec.kind
        log.info("running %s over %d seed(s) with %d job(s)", spec.kind, len(spec.seeds), jobs)
        try:
            result = run_strategy(spec, train, ev, jobs=jobs, out_dir=root, log=log.info)
        except Exception:
            man["status"] = "failed"
            _write_json_atomic(_manifest_path(out), man)
            raise
        man["strategies"][spec.kind] = man["pending"].pop(spec.kind)
        man["seeds"][spec.kind] = list(spec.seeds)
        _write_json_atomic(_manifest_path(out), man)
        rep = _summarize_one(spec.kind, result.traces)
        _write_csv(root / "report.csv",
                   ["strategy", "method", "n_runs", "accuracy_mean", "accuracy_std", "sum_le_m", "sum_le_s"],
                   [_summary_row(rep)])
        print(f"{spec.kind}: {len(result.traces)} run(s), accuracy {rep.accuracy_mean:.4f} "
              f"± {rep.accuracy_std:.4f}, sum LE_m {_num(rep.sum_le_m)}")
    del man["pending"]
    man["status"] = "complete"
    _write_json_atomic(_manifest_path(out), man)
    return EXIT_OK


def _summarize_one(kind: str, traces: Sequence[RunTrace]) -> StrategyReport:
    if len(traces) < 2:
        # entropy across runs needs at least two runs
        mean, std = accuracy_stats(traces)
        return StrategyReport(kind, len(traces), mean, std, None, None, None, None)
    return summarize(kind, traces)


def _num(x, spec=".4f") -> str:
    return "n/a" if x is None else format(x, spec)


# -- loading finished strategies -----------------------------------------------


def _finished_kinds(out: Path) -> list[str]:
    root = out / "strategies"
    if not root.is_dir():
        return []
    return ordered_kinds([p.name for p in root.iterdir() if (p / "spec.json").exists()])


def _load_strategy(out: Path, kind: str) -> list[RunTrace]:
    root = out / "strategies" / kind
    spec = json.loads((root / "spec.json").read_text(encoding="utf-8"))
    traces = []
    for s in spec["seeds"]:
        d = root / "traces" / f"seed_{s:06d}"
        if not (d / "manifest.json").exists():
            raise FileNotFoundError(f"{d}: run incomplete; rerun 'labelchurn run --strategy {kind}' to resume")
        traces.append(load_trace(d))
    return traces


def _labels_of(trace_dir: Path) -> LabelSpace:
    man = json.loads((trace_dir / "manifest.json").read_text(encoding="utf-8"))
    return LabelSpace(tuple(man["labels"]))


def _gold_names(out: Path) -> dict[str, str]:
    """Eval-set gold label names keyed by id, from the path in the manifest."""
    path = _manifest_path(out)
    if not path.exists():
        return {}
    ep = Path(json.loads(path.read_text(encoding="utf-8"))["dataset"]["eval"])
    if not ep.exists():
        return {}
    gold = {}
    with open(ep, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                gold[str(obj["id"])] = str(obj["label"])
    return gold


def _pred_counts_text(counts: Counter, labels: LabelSpace) -> str:
    items = sorted(counts.items(), key=lambda kv: (-kv[1], labels.names[kv[0]]))
    return ";".join(f"{labels.names[k]}:{c}" for k, c in items)


def _write_per_example(path: Path, per: Sequence[ExampleInstability], labels: LabelSpace, gold: dict) -> None:
    rows = [
        [e.example_id, gold.get(e.example_id, ""), _fmt(e.le_m), _fmt(e.le_s), _fmt(e.mu_m), _fmt(e.sigma_m),
         _pred_counts_text(e.pred_counts, labels)]
        for e in per
    ]
    _write_csv(path, ["example_id", "gold", "le_m", "le_s", "mu_m", "sigma_m", "pred_counts"], rows)


# -- metrics -----------------------------------------------------------------


def cmd_metrics(args) -> int:
    out = Path(args.out)
    kind = args.strategy
    if kind not in _finished_kinds(out):
        raise FileNotFoundError(f"no finished '{kind}' strategy under {out / 'strategies'}")
    traces = _load_strategy(out, kind)
    per = le_multi(traces)
    labels = _labels_of(out / "strategies" / kind / "traces" / f"seed_{traces[0].seed:06d}")
    path = out / "strategies" / kind / "metrics.csv"
    _write_per_example(path, per, labels, _gold_names(out))
    rep = _summarize_one(kind, traces)
    print(f"{kind}: {len(traces)} run(s); sum LE_m {_num(rep.sum_le_m, '.6f')}; "
          f"sum LE_s {_num(rep.sum_le_s, '.6f')}; wrote {path}")
    return EXIT_OK


# -- soft-labels ---------------------------------------------------------------


def cmd_soft_labels(args) -> int:
    cfg = _load_config(args)
    base = _base_config(args, cfg)
    jobs = _jobs(args, cfg)
    train, ev, _, _ = _load_data(args, cfg)
    T = args.temperature if args.temperature is not None else 0.5
    if args.kind == "uniform":
        alpha = args.alpha if args.alpha is not None else 0.1
        table = SoftLabelTable(list(train.ids), uniform_smooth_table(train.y, train.K, alpha),
                               {"provenance": "uniform", "alpha": alpha})
    elif args.kind == "ensemble":
        n = args.n_models if args.n_models is not None else 200
        if n < 2:
            raise UsageError("--n-models must be >= 2")
        teachers = run_seeds(student_config(base), train, ev, None, ensemble_teacher_seeds(n), jobs=jobs)
        table = ensemble_soft_labels([(train.ids, train_probs(t.params, train)) for t in teachers], T)
    else:
        seed = args.teacher_seed if args.teacher_seed is not None else tgtss_teacher_seed(0)
        _, table = train_tgtss_teacher(base, train, ev, seed, burn_in=args.burn_in, temperature=T,
                                       delta=args.burn_in_delta if args.burn_in_delta is not None else 0.05)
    path = Path(args.output) if args.output else Path(args.out) / "softlabels" / f"{args.kind}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_soft_labels(table, train.labels, path)
    print(f"wrote {len(table.ids)} soft labels to {path}")
    return EXIT_OK


# -- report ------------------------------------------------------------------


def _table2_rows(reports):
    return [
        [r.strategy, DISPLAY_NAMES[r.strategy], str(r.n_runs), _fmt(r.accuracy_mean), _fmt(r.accuracy_std),
         _fmt(r.sum_le_m), _fmt(r.delta_le_m_pct), _fmt(r.pct_of_ensemble),
         _fmt1(r.accuracy_mean, 100), _fmt1(r.accuracy_std, 100), _fmt1(r.delta_le_m_pct), _fmt1(r.pct_of_ensemble)]
        for r in reports
    ]


def _table3_rows(reports):
    return [
        [r.strategy, DISPLAY_NAMES[r.strategy], _fmt(r.sum_le_s), _fmt(r.delta_le_s_pct), _fmt(r.pct_of_ensemble_s),
         _fmt1(r.delta_le_s_pct), _fmt1(r.pct_of_ensemble_s)]
        for r in reports
    ]


def _high_rows(reports, n_high):
    return [
        [r.strategy, DISPLAY_NAMES[r.strategy], str(n_high), _fmt(r.sum_le_m_high), _fmt(r.delta_le_m_high_pct),
         _fmt(r.sum_le_s_high), _fmt(r.delta_le_s_high_pct), _fmt1(r.delta_le_m_high_pct),
         _fmt1(r.delta_le_s_high_pct)]
        for r in reports
    ]


def _safe_corr(xs, ys):
    try:
        return correlation(xs, ys)
    except ValueError:
        return None


def _trajectory_rows(trace: RunTrace, col: int, labels: LabelSpace):
    counts: Counter = Counter()
    rows = []
    for snap in trace.snapshots:
        p = int(snap.pred[col])
        counts[p] += 1
        rows.append([str(snap.step), _fmt(snap.gold_prob[col]), labels.names[p], _fmt(entropy_nats(counts))])
    return rows


def cmd_report(args) -> int:
    out = Path(args.out)
    kinds = _finished_kinds(out)
    if "control" not in kinds:
        raise FileNotFoundError(f"no finished control strategy under {out / 'strategies'}; the report needs it")
    results = {k: _load_strategy(out, k) for k in kinds}
    reports = compare(results)
    first = results["control"][0]
    labels = _labels_of(out / "strategies" / "control" / "traces" / f"seed_{first.seed:06d}")
    gold = _gold_names(out)
    rdir = Path(args.report_dir) if args.report_dir else out / "report"

    _write_csv(rdir / "strategies.csv",
               ["strategy", "method", "n_runs", "accuracy_mean", "accuracy_std", "sum_le_m", "delta_le_m_pct",
                "pct_of_ensemble", "accuracy_pct_1dp", "accuracy_std_pct_1dp", "delta_le_m_pct_1dp",
                "pct_of_ensemble_1dp"],
               _table2_rows(reports))
    _write_csv(rdir / "single_run.csv",
               ["strategy", "method", "sum_le_s", "delta_le_s_pct", "pct_of_ensemble_s", "delta_le_s_pct_1dp",
                "pct_of_ensemble_s_1dp"],
               _table3_rows(reports))
    control = reports[0]
    high = high_entropy_subset(control.per_example)
    _write_csv(rdir / "high_entropy.csv",
               ["strategy", "method", "n_examples", "sum_le_m", "delta_le_m_pct", "sum_le_s", "delta_le_s_pct",
                "delta_le_m_pct_1dp", "delta_le_s_pct_1dp"],
               _high_rows(reports, len(high)))
    corr_rows = []
    for r in reports:
        le_m = [e.le_m for e in r.per_example]
        le_s = [e.le_s for e in r.per_example]
        sig = [e.sigma_m for e in r.per_example]
        corr_rows.append([r.strategy, DISPLAY_NAMES[r.strategy],
                          _fmt(_safe_corr(le_s, le_m) if None not in le_s else None), _fmt(_safe_corr(le_m, sig))])
    _write_csv(rdir / "correlations.csv", ["strategy", "method", "r_le_s_le_m", "r_le_m_sigma_m"], corr_rows)
    for r in reports:
        _write_per_example(rdir / "per_example" / f"{r.strategy}.csv", r.per_example, labels, gold)

    # top-k by control LE_m; ties broken by id for a stable choice
    ranked = sorted(control.per_example, key=lambda e: (-e.le_m, e.example_id))[: args.top_k]
    for kind, traces in results.items():
        col = {eid: i for i, eid in enumerate(traces[0].eval_ids)}
        for rank, e in enumerate(ranked, 1):
            _write_csv(rdir / "trajectories" / kind / f"{rank:02d}_{_safe_name(e.example_id)}.csv",
                       ["step", "gold_prob", "pred_label", "cum_le_s"],
                       _trajectory_rows(traces[0], col[e.example_id], labels))

    print(f"{'method':<26}{'accuracy':>16}{'dLE_m %':>10}{'% of E_b':>10}")
    for row in _table2_rows(reports):
        acc = f"{row[8]} ± {row[9]}"
        print(f"{row[1]:<26}{acc:>16}{row[10]:>10}{row[11]:>10}")
    if args.figures:
        from .plotting import render_report

        paths = render_report(rdir)
        print(f"rendered {len(paths)} figure(s) into {rdir / 'figures'}")
    print(f"report written to {rdir}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON file with data/train/strategies/seeds/jobs settings")
    g.add_argument("--out", default="labelchurn-out", help="output root (default: %(default)s)")
    g.add_argument("--jobs", type=_pos_int, help="worker processes (results do not depend on it)")
    g.add_argument("--seed-range", "--seeds", dest="seed_range", type=parse_seed_range,
                   help=f"evaluation seeds as a..b (inclusive) or a,b,c (default {DEFAULT_SEEDS})")
    g.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")

    data = argparse.ArgumentParser(add_help=False)
    d = data.add_argument_group("dataset")
    d.add_argument("--train", help="train JSONL (default: OUT/data/train.jsonl)")
    d.add_argument("--eval", help="eval JSONL (default: OUT/data/eval.jsonl)")
    d.add_argument("--dim", type=_pos_int, help="hashing dimension for text rows (default 4096)")
    d.add_argument("--salt", type=_nonneg_int, help="hashing salt for text rows (default 0)")

    train = argparse.ArgumentParser(add_help=False)
    t = train.add_argument_group("training")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=_pos_int)
    t.add_argument("--batch-size", type=_pos_int)
    t.add_argument("--hidden", type=_nonneg_int, help="hidden units; 0 gives a linear model")
    t.add_argument("--capture-eval-every", type=_pos_int, help="eval snapshots per epoch")
    t.add_argument("--capture-train-stride", type=_pos_int, help="steps between teacher captures")

    p = argparse.ArgumentParser(prog="labelchurn", description="Measure and mitigate prediction churn.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--classes", type=int)
    s.add_argument("--per-class", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--separation", type=float)
    s.add_argument("--noise", type=float, help="label-noise fraction")
    s.add_argument("--ambiguous", type=float, help="fraction of points placed between two centroids")
    s.add_argument("--seed", type=_nonneg_int, help="dataset seed")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("run", parents=[common, data, train], help="train strategies over a seed range")
    s.add_argument("--strategy", help=f"one of {', '.join(KINDS)}, a comma list, or 'all'")
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--n-models", type=int)
    s.add_argument("--burn-in", type=_nonneg_int, help="fixed burn-in steps (default: chosen from eval loss)")
    s.add_argument("--burn-in-delta", type=float, help="loss tolerance for automatic burn-in (default 0.05)")
    s.add_argument("--temperature", type=float)
    s.add_argument("--shared-teacher", action="store_true", default=None,
                   help="one TGTSS teacher for every student")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("soft-labels", parents=[common, data, train], help="build a soft-label table")
    s.add_argument("--kind", choices=("uniform", "ensemble", "tgtss"), required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--n-models", type=int)
    s.add_argument("--temperature", type=float)
    s.add_argument("--burn-in", type=_nonneg_int)
    s.add_argument("--burn-in-delta", type=float)
    s.add_argument("--teacher-seed", type=_nonneg_int)
    s.add_argument("--output", help="CSV path (default: OUT/softlabels/KIND.csv)")
    s.set_defaults(func=cmd_soft_labels)

    s = sub.add_parser("metrics", parents=[common], help="per-example metrics for one finished strategy")
    s.add_argument("--strategy", required=True, choices=KINDS)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("report", parents=[common], help="comparison tables and plot data")
    s.add_argument("--top-k", type=_nonneg_int, default=5, help="trajectory files per strategy (default %(default)s)")
    s.add_argument("--report-dir", help="default: OUT/report")
    s.add_argument("--figures", action="store_true", help="also render PNG figures with matplotlib")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StaleRunError, ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
