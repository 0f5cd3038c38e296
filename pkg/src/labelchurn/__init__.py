"""Measure and mitigate prediction churn across retrainings of small classifiers."""

from .core import Dataset, LabelId, LabelSpace, entropy_nats
from .datagen import SynthSpec, gen_synthetic, load_jsonl, write_jsonl
from .metrics import (
    ExampleInstability,
    StrategyReport,
    delta_le,
    high_entropy_subset,
    le_multi,
    le_single,
    pct_of_ensemble,
)
from .mitigation import KINDS, StaleRunError, StrategySpec, compare, run_strategy
from .softlabel import SoftLabelTable, ensemble_soft_labels, temperature_scale, temporal_soft_labels, uniform_smooth
from .training import RunTrace, TrainConfig, run_seeds, select_burn_in, train_run

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ExampleInstability",
    "KINDS",
    "LabelId",
    "LabelSpace",
    "RunTrace",
    "SoftLabelTable",
    "StaleRunError",
    "StrategyReport",
    "StrategySpec",
    "SynthSpec",
    "TrainConfig",
    "compare",
    "delta_le",
    "ensemble_soft_labels",
    "entropy_nats",
    "gen_synthetic",
    "high_entropy_subset",
    "le_multi",
    "le_single",
    "load_jsonl",
    "pct_of_ensemble",
    "run_seeds",
    "run_strategy",
    "select_burn_in",
    "temperature_scale",
    "temporal_soft_labels",
    "train_run",
    "uniform_smooth",
    "write_jsonl",
]
