import math
from dataclasses import replace

import numpy as np
import pytest

from labelchurn.softlabel import SoftLabelTable, uniform_smooth_table
from labelchurn.training import (
    TrainConfig,
    capture_points,
    epoch_permutation,
    load_trace,
    run_seeds,
    save_trace,
    select_burn_in,
    steps_per_epoch,
    train_run,
)

CFG = TrainConfig(lr=0.05, epochs=3, batch_size=16, capture_eval_every=2)


def same_trace(a, b):
    assert a.config_hash == b.config_hash
    assert a.accuracy == b.accuracy
    assert len(a.snapshots) == len(b.snapshots)
    for s, t in zip(a.snapshots, b.snapshots):
        assert s.step == t.step
        assert np.array_equal(s.pred, t.pred)
        assert s.gold_prob.tobytes() == t.gold_prob.tobytes()
    assert a.params.values.tobytes() == b.params.values.tobytes()


def test_massive_step_count():
    assert steps_per_epoch(11514, 256) == 45
    assert 5 * steps_per_epoch(11514, 256) == 225


def test_capture_points():
    assert capture_points(45, 1) == [45]
    assert capture_points(10, 4) == [3, 5, 8, 10]
    assert capture_points(3, 10) == [1, 2, 3]


def test_shuffle_pure_function_of_seed_and_epoch():
    a = epoch_permutation(7, 2, 100)
    np.testing.assert_array_equal(a, epoch_permutation(7, 2, 100))
    assert not np.array_equal(a, epoch_permutation(7, 3, 100))
    assert sorted(a) == list(range(100))


class TestTrainRun:
    def test_deterministic(self, small_data):
        train, ev = small_data
        a, _ = train_run(CFG, train, ev)
        b, _ = train_run(CFG, train, ev)
        same_trace(a, b)

    def test_snapshot_schedule(self, small_data):
        train, ev = small_data
        trace, _ = train_run(CFG, train, ev)
        spe = steps_per_epoch(len(train), CFG.batch_size)
        steps = [s.step for s in trace.snapshots]
        assert steps == sorted(set(steps))
        assert steps[-1] == spe * CFG.epochs
        assert len(steps) == 2 * CFG.epochs
        for s in trace.snapshots:
            assert s.pred.shape == (len(ev),)
            assert np.all((s.gold_prob >= 0) & (s.gold_prob <= 1))

    def test_accuracy_from_final_snapshot(self, small_data):
        train, ev = small_data
        trace, _ = train_run(CFG, train, ev)
        assert trace.accuracy == np.mean(trace.final.pred == ev.y)

    def test_swa_with_zero_lr_is_identity(self, small_data):
        train, ev = small_data
        cfg = replace(CFG, lr=0.0, epochs=2, swa_enabled=True)
        swa, p_swa = train_run(cfg, train, ev)
        plain, p_plain = train_run(replace(cfg, swa_enabled=False, epochs=1), train, ev)
        np.testing.assert_array_equal(p_swa.values, p_plain.values)
        assert swa.accuracy == plain.accuracy

    def test_swa_averages_last_two_epochs(self, small_data):
        train, ev = small_data
        e2, p2 = train_run(replace(CFG, epochs=2), train, ev)
        e3, p3 = train_run(replace(CFG, epochs=3), train, ev)
        swa, p = train_run(replace(CFG, epochs=3, swa_enabled=True), train, ev)
        np.testing.assert_array_equal(p.values, (p2.values + p3.values) / 2)

    def test_swa_single_epoch_is_control(self, small_data):
        train, ev = small_data
        cfg = replace(CFG, epochs=1)
        plain, _ = train_run(cfg, train, ev)
        swa, _ = train_run(replace(cfg, swa_enabled=True), train, ev)
        same_trace(replace(plain, config_hash=""), replace(swa, config_hash=""))

    def test_alpha_zero_equals_explicit_one_hot(self, small_data):
        train, ev = small_data
        a, pa = train_run(CFG, train, ev)
        b, pb = train_run(CFG, train, ev, uniform_smooth_table(train.y, train.K, 0.0))
        assert pa.values.tobytes() == pb.values.tobytes()

    def test_soft_label_table_targets(self, small_data):
        train, ev = small_data
        T = uniform_smooth_table(train.y, train.K, 0.2)
        table = SoftLabelTable(list(reversed(train.ids)), T[::-1])
        _, p1 = train_run(CFG, train, ev, table)
        _, p2 = train_run(replace(CFG, alpha=0.2), train, ev)
        assert p1.values.tobytes() == p2.values.tobytes()

    def test_missing_soft_label(self, small_data):
        train, ev = small_data
        table = SoftLabelTable(train.ids[1:], uniform_smooth_table(train.y[1:], train.K, 0.1))
        with pytest.raises(ValueError, match="missing"):
            train_run(CFG, train, ev, table)

    def test_empty_dataset(self, small_data):
        train, ev = small_data
        from labelchurn.core import Dataset
        import scipy.sparse as sp

        empty = Dataset([], sp.csr_matrix((0, train.dim)), np.zeros(0, int), train.labels)
        with pytest.raises(ValueError, match="empty"):
            train_run(CFG, empty, ev)

    def test_teacher_capture_counts(self, small_data):
        train, ev = small_data
        spe = steps_per_epoch(len(train), CFG.batch_size)
        total = spe * CFG.epochs
        trace, _ = train_run(replace(CFG, capture_train=True, burn_in_steps=5), train, ev)
        assert trace.train_mean.samples_seen == total - 5
        trace, _ = train_run(replace(CFG, capture_train=True, burn_in_steps=5, capture_train_stride=3), train, ev)
        assert trace.train_mean.samples_seen == math.ceil((total - 5) / 3)
        np.testing.assert_allclose(trace.train_mean.mean.sum(axis=1), 1.0, atol=1e-9)

    def test_eval_loss_tracking(self, small_data):
        train, ev = small_data
        trace, _ = train_run(replace(CFG, track_eval_loss=True), train, ev)
        steps = [s for s, _ in trace.eval_loss]
        assert steps == list(range(1, steps[-1] + 1))
        assert trace.eval_loss[-1][1] < trace.eval_loss[0][1]


class TestRunSeeds:
    def test_one_trace_per_seed(self, small_data):
        train, ev = small_data
        traces = run_seeds(CFG, train, ev, None, [3, 1, 2])
        assert [t.seed for t in traces] == [3, 1, 2]
        single, _ = train_run(replace(CFG, seed=1), train, ev)
        same_trace(traces[1], single)

    def test_duplicate_seeds(self, small_data):
        with pytest.raises(ValueError, match="duplicate"):
            run_seeds(CFG, *small_data, None, [7, 7])

    def test_parallel_matches_serial(self, small_data):
        train, ev = small_data
        serial = run_seeds(CFG, train, ev, None, [0, 1, 2, 3])
        parallel = run_seeds(CFG, train, ev, None, [0, 1, 2, 3], jobs=3)
        for a, b in zip(serial, parallel):
            same_trace(a, b)


class TestBurnIn:
    def test_monotone_curve(self):
        curve = [(s, 0.2 + 2.0 / s) for s in range(1, 301)]
        # oracle: direct scan for the first step whose loss is <= 1.05 * final
        bound = 1.05 * curve[-1][1]
        expected = next(s for s, l in curve if l <= bound)
        assert select_burn_in(curve) == expected

    def test_constant(self):
        assert select_burn_in([(10, 1.0), (20, 1.0), (30, 1.0)]) == 10

    def test_single_point(self):
        assert select_burn_in([(42, 0.5)]) == 42

    def test_late_spike_moves_burn_in(self):
        curve = [(1, 1.0), (2, 0.5), (3, 0.5), (4, 0.9), (5, 0.5)]
        assert select_burn_in(curve) == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            select_burn_in([])
        with pytest.raises(ValueError):
            select_burn_in([(2, 1.0), (1, 1.0)])


def test_trace_round_trip(tmp_path, small_data):
    train, ev = small_data
    trace, _ = train_run(replace(CFG, keep_eval_probs=True, track_eval_loss=True), train, ev)
    save_trace(trace, train.labels, tmp_path / "run")
    back = load_trace(tmp_path / "run")
    same_trace(trace, back)
    assert back.eval_ids == trace.eval_ids
    assert back.config == trace.config
    assert back.eval_loss == trace.eval_loss
    for s, t in zip(trace.snapshots, back.snapshots):
        assert s.probs.tobytes() == t.probs.tobytes()
    header = (tmp_path / "run" / "snapshots.csv").read_text().splitlines()[0]
    assert header == "step,split,example_id,pred_label,gold_prob"


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.5)
    with pytest.raises(ValueError):
        TrainConfig(temperature=0)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1})
