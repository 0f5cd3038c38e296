import csv
import sys

import numpy as np
import pytest

from labelchurn.datagen import SynthSpec, gen_synthetic


def csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def small_data():
    """A few hundred ambiguous points; fast enough for per-test training."""
    return gen_synthetic(SynthSpec(K=3, n_per_class=40, dim=4, separation=2.0, ambiguous_frac=0.2, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
