"""PNG figures rendered from the CSV files written by ``labelchurn report``.

Everything drawn here is read back from the report directory, so a figure
never shows a number that the CSVs do not contain.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no timestamp metadata so reruns produce the same bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_entropy_reduction(report_dir: Path, out: Path) -> Path:
    rows = [r for r in _rows(report_dir / "strategies.csv") if r["strategy"] != "control"]
    fig, ax = plt.subplots(figsize=(6, 3))
    names = [r["method"] for r in rows]
    vals = [float(r["delta_le_m_pct"]) if r["delta_le_m_pct"] else 0.0 for r in rows]
    ax.barh(names, vals, color=["#4c72b0" if v >= 0 else "#c44e52" for v in vals])
    ax.axvline(0, color="black", lw=0.8)
    ax.invert_yaxis()
    ax.set_xlabel("reduction of summed multi-run label entropy vs control (%)")
    return _save(fig, out)


def plot_le_s_vs_le_m(report_dir: Path, out: Path, strategy: str = "control") -> Path | None:
    rows = _rows(report_dir / "per_example" / f"{strategy}.csv")
    pts = [(float(r["le_s"]), float(r["le_m"])) for r in rows if r["le_s"]]
    if not pts:
        return None
    fig, ax = plt.subplots(figsize=(4, 4))
    xs, ys = zip(*pts)
    ax.scatter(xs, ys, s=8, alpha=0.5)
    ax.set_xlabel("LE_s (single run, nats)")
    ax.set_ylabel("LE_m (across runs, nats)")
    ax.set_title(strategy)
    return _save(fig, out)


def plot_trajectories(report_dir: Path, out_dir: Path) -> list[Path]:
    """One figure per tracked example: gold-label probability and cumulative LE_s."""
    root = report_dir / "trajectories"
    if not root.is_dir():
        return []
    by_example: dict[str, dict[str, list[dict]]] = defaultdict(dict)
    for strat_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(strat_dir.glob("*.csv")):
            by_example[f.stem][strat_dir.name] = _rows(f)
    paths = []
    for stem, curves in sorted(by_example.items()):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3), sharex=True)
        for strat, rows in curves.items():
            steps = [int(r["step"]) for r in rows]
            a1.plot(steps, [float(r["gold_prob"]) for r in rows], label=strat, lw=1)
            a2.plot(steps, [float(r["cum_le_s"]) for r in rows], label=strat, lw=1)
        a1.set_ylabel("gold-label probability")
        a2.set_ylabel("cumulative LE_s (nats)")
        for a in (a1, a2):
            a.set_xlabel("step")
        a1.set_ylim(0, 1)
        a2.legend(fontsize=7, frameon=False)
        fig.suptitle(stem.split("_", 1)[1] if "_" in stem else stem)
        paths.append(_save(fig, out_dir / f"trajectory_{stem}.png"))
    return paths


def render_report(report_dir: str | Path) -> list[Path]:
    """Render every figure for ``report_dir`` into ``report_dir/figures``."""
    report_dir = Path(report_dir)
    out = report_dir / "figures"
    with plt.rc_context(_STYLE):
        paths = [plot_entropy_reduction(report_dir, out / "entropy_reduction.png")]
        p = plot_le_s_vs_le_m(report_dir, out / "le_s_vs_le_m.png")
        if p is not None:
            paths.append(p)
        paths.extend(plot_trajectories(report_dir, out))
    return paths
