from dataclasses import replace

import numpy as np
import pytest

from labelchurn.mitigation import (
    ENSEMBLE_SEED_BASE,
    StaleRunError,
    StrategySpec,
    compare,
    run_strategy,
    tgtss_teacher_seed,
    train_probs,
    train_tgtss_teacher,
)
from labelchurn.model import Layout, init_params
from labelchurn.training import TrainConfig, steps_per_epoch

BASE = TrainConfig(lr=0.05, epochs=3, batch_size=16)
SEEDS = (0, 1, 2)


def identical(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.seed == y.seed
        assert x.accuracy == y.accuracy
        for s, t in zip(x.snapshots, y.snapshots):
            assert s.step == t.step
            assert np.array_equal(s.pred, t.pred)
            assert s.gold_prob.tobytes() == t.gold_prob.tobytes()
        assert x.params.values.tobytes() == y.params.values.tobytes()


@pytest.fixture(scope="module")
def control(small_data):
    return run_strategy(StrategySpec("control", BASE, SEEDS), *small_data).traces


class TestSpec:
    def test_defaults_fill_relevant_only(self):
        s = StrategySpec("uniform_ls")
        assert s.alpha == 0.1 and s.weight_decay is None and s.temperature is None
        t = StrategySpec("tgtss")
        assert t.temperature == 0.5 and t.burn_in is None and t.shared_teacher is False

    def test_irrelevant_parameter(self):
        with pytest.raises(ValueError, match="does not apply"):
            StrategySpec("control", alpha=0.1)

    def test_small_ensemble(self):
        with pytest.raises(ValueError):
            StrategySpec("ensemble_eb", n_models=1)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            StrategySpec("control", seeds=(ENSEMBLE_SEED_BASE,))
        with pytest.raises(ValueError):
            StrategySpec("control", seeds=(1, 1))

    def test_dict_round_trip(self):
        s = StrategySpec("ensemble_eb", BASE, (4, 5), n_models=3, temperature=0.25)
        assert StrategySpec.from_dict(s.to_dict()) == s

    def test_teacher_seed_disjoint(self):
        assert tgtss_teacher_seed(0) != 0
        assert tgtss_teacher_seed(tgtss_teacher_seed(7)) == 7


class TestReductions:
    def test_uniform_ls_alpha_zero(self, small_data, control):
        r = run_strategy(StrategySpec("uniform_ls", BASE, SEEDS, alpha=0.0), *small_data)
        identical(r.traces, control)

    def test_l2_zero_decay(self, small_data, control):
        r = run_strategy(StrategySpec("l2", BASE, SEEDS, weight_decay=0.0), *small_data)
        identical(r.traces, control)

    def test_swa_single_epoch(self, small_data):
        one = replace(BASE, epochs=1)
        a = run_strategy(StrategySpec("control", one, SEEDS), *small_data).traces
        b = run_strategy(StrategySpec("swa", one, SEEDS), *small_data).traces
        identical(a, b)

    def test_control_targets_are_one_hot(self, small_data, control):
        train, _ = small_data
        assert control[0].config.alpha == 0.0 and control[0].config.weight_decay == 0.0


class TestTeachers:
    def test_constant_teacher_identity_temperature(self, small_data):
        train, ev = small_data
        frozen = replace(BASE, lr=0.0)
        teacher, table = train_tgtss_teacher(frozen, train, ev, 99, burn_in=4, temperature=1.0)
        start = init_params(Layout(train.dim, 0, train.K), np.random.default_rng(99))
        np.testing.assert_allclose(table.probs, train_probs(start, train), rtol=0, atol=1e-12)
        assert table.provenance["N"] == 4

    def test_tgtss_targets_interior(self, small_data):
        r = run_strategy(StrategySpec("tgtss", BASE, (0, 1), burn_in=10), *small_data)
        for t in r.soft_labels:
            assert np.all(t.probs > 0) and np.all(t.probs < 1)
            np.testing.assert_allclose(t.probs.sum(axis=1), 1.0, atol=1e-9)
        assert {tr.seed for tr in r.teachers} == {tgtss_teacher_seed(0), tgtss_teacher_seed(1)}

    def test_tgtss_selected_burn_in(self, small_data):
        r = run_strategy(StrategySpec("tgtss", BASE, (0,)), *small_data)
        n = r.soft_labels[0].provenance["N"]
        assert 1 <= n < steps_per_epoch(len(small_data[0]), BASE.batch_size) * BASE.epochs

    def test_shared_teacher(self, small_data):
        r = run_strategy(StrategySpec("tgtss", BASE, (0, 1, 2), burn_in=5, shared_teacher=True), *small_data)
        assert len({t.digest() for t in r.soft_labels}) == 1

    def test_ensemble_uses_one_table(self, small_data):
        r = run_strategy(StrategySpec("ensemble_eb", BASE, SEEDS, n_models=3), *small_data)
        assert len(r.soft_labels) == 1 and len(r.teachers) == 3
        assert all(t.seed >= ENSEMBLE_SEED_BASE for t in r.teachers)

    def test_inputs_not_mutated(self, small_data):
        train, ev = small_data
        before = train.fingerprint(), ev.fingerprint()
        run_strategy(StrategySpec("ensemble_eb", BASE, (0,), n_models=2), train, ev)
        run_strategy(StrategySpec("tgtss", BASE, (0,), burn_in=3), train, ev)
        assert (train.fingerprint(), ev.fingerprint()) == before


class TestCompare:
    def test_control_only(self, control):
        rows = compare({"control": control})
        assert len(rows) == 1
        assert rows[0].delta_le_m_pct == 0.0 and rows[0].pct_of_ensemble is None

    def test_ordering_and_ensemble_row(self, small_data, control):
        results = {"control": control}
        for kind, kw in [("tgtss", {"burn_in": 5}), ("swa", {}), ("ensemble_eb", {"n_models": 2})]:
            results[kind] = run_strategy(StrategySpec(kind, BASE, SEEDS, **kw), *small_data).traces
        rows = compare(results)
        assert [r.strategy for r in rows] == ["control", "ensemble_eb", "swa", "tgtss"]
        ens = rows[1]
        if ens.delta_le_m_pct:
            assert ens.pct_of_ensemble == 100.0

    def test_missing_control(self, control):
        with pytest.raises(ValueError, match="control"):
            compare({"swa": control})


class TestPersistence:
    def test_resume_reuses_runs(self, tmp_path, small_data):
        spec = StrategySpec("tgtss", BASE, (0, 1), burn_in=4)
        first = run_strategy(spec, *small_data, out_dir=tmp_path)
        messages = []
        second = run_strategy(spec, *small_data, out_dir=tmp_path, log=messages.append)
        identical(first.traces, second.traces)
        assert any("already complete" in m for m in messages)
        assert (tmp_path / "spec.json").exists()
        assert len(list((tmp_path / "softlabels").glob("teacher_*.csv"))) == 2

    def test_stale_config_detected(self, tmp_path, small_data):
        run_strategy(StrategySpec("control", BASE, (0,)), *small_data, out_dir=tmp_path)
        with pytest.raises(StaleRunError):
            run_strategy(StrategySpec("control", replace(BASE, lr=0.01), (0,)), *small_data, out_dir=tmp_path)

    def test_stale_teacher_detected(self, tmp_path, small_data):
        run_strategy(StrategySpec("tgtss", BASE, (0,), burn_in=4), *small_data, out_dir=tmp_path)
        with pytest.raises(StaleRunError):
            run_strategy(StrategySpec("tgtss", BASE, (0,), burn_in=4, temperature=0.25), *small_data, out_dir=tmp_path)

    def test_parallel_matches_serial(self, small_data):
        spec = StrategySpec("tgtss", BASE, (0, 1, 2), burn_in=6)
        identical(run_strategy(spec, *small_data).traces, run_strategy(spec, *small_data, jobs=3).traces)
