from dataclasses import replace

import numpy as np
import pytest

from core.config_models import BudgetConfig, CurriculumConfig, CurriculumMode, NetConfig, TaskConfig, TrainConfig
from core.errors import StructuralError
from network.leaky_rnn import init_params
from training.curricula import (
    CurriculumState,
    advance,
    forgetting_probe,
    init_state,
    record_solves,
    run_curriculum,
)
from utils.rng_streams import make_streams

NET = NetConfig(n=8)
BUDGET = BudgetConfig(max_epochs=100, max_n=20)


def start(mode, rng, **curriculum):
    state = init_state(CurriculumConfig(mode=mode, **curriculum), BUDGET, threshold=0.98)
    params = init_params(NET, rng, state.active_head_targets)
    return state, params


def same_core(a, b):
    return all(np.array_equal(getattr(a, name), getattr(b, name)) for name in ("w_rec", "w_in", "b_rec", "b_in", "tau"))


class TestAdvance:
    def test_single_replaces_head(self, rng):
        state, params = start(CurriculumMode.SINGLE, rng)
        new_state, new_params = advance(state, params, [0.99], rng)
        assert new_state.active_head_targets == (3,)
        assert new_params.head_targets == [3]
        assert same_core(params, new_params)
        assert len(new_state.history) == 1 and new_state.history[0].targets == (2,)
        assert new_state.current_step == 1

    def test_multi_appends_head(self, rng):
        state, params = start(CurriculumMode.MULTI, rng)
        state, params = advance(state, params, [0.985], rng)
        state, grown = advance(state, params, [0.99, 0.99], rng)
        assert state.active_head_targets == (2, 3, 4)
        assert np.array_equal(grown.heads[0].w_out, params.heads[0].w_out)
        assert np.array_equal(grown.heads[1].w_out, params.heads[1].w_out)
        assert state.max_solved_n == 3

    def test_sliding_shifts_window(self, rng):
        state, params = start(CurriculumMode.SLIDING, rng, sliding_heads=3, sliding_shift=2)
        assert state.active_head_targets == (2, 3, 4)
        new_state, new_params = advance(state, params, [0.99] * 3, rng)
        assert new_state.active_head_targets == (4, 5, 6)
        assert np.array_equal(new_params.heads[0].w_out, params.heads[2].w_out)

    def test_guard_keeps_everything(self, rng):
        state, params = start(CurriculumMode.MULTI, rng)
        new_state, new_params = advance(state, params, [0.979], rng)
        assert new_state is state and new_params is params

    def test_none_mode_finishes(self, rng):
        state, params = start(CurriculumMode.NONE, rng, target_n=5)
        assert state.active_head_targets == (5,)
        new_state, new_params = advance(state, params, [1.0], rng)
        assert new_state.finished and new_params is params
        assert new_state.max_solved_n == 5

    def test_budget_max_n_finishes(self, rng):
        state = init_state(CurriculumConfig(mode=CurriculumMode.SINGLE), BudgetConfig(max_n=2), 0.98)
        params = init_params(NET, rng, state.active_head_targets)
        new_state, _ = advance(state, params, [0.99], rng)
        assert new_state.finished
        assert advance(new_state, params, [0.99], rng)[0] is new_state

    def test_accuracy_count_must_match(self, rng):
        state, params = start(CurriculumMode.MULTI, rng)
        with pytest.raises(StructuralError):
            advance(state, params, [0.99, 0.99], rng)

    def test_heads_must_match_state(self, rng):
        state, _ = start(CurriculumMode.MULTI, rng)
        other = init_params(NET, rng, (3,))
        with pytest.raises(StructuralError):
            advance(state, other, [0.99], rng)

    def test_tau_over_k_recorded(self, rng):
        state, params = start(CurriculumMode.SINGLE, rng)
        new_state, _ = advance(state, params, [0.99], rng, k=2)
        record = new_state.history[0]
        assert record.mean_tau == pytest.approx(float(np.mean(params.tau)))
        assert record.mean_tau_over_k == pytest.approx(record.mean_tau / 2)


class TestAllAtOnce:
    def test_solve_epochs_and_max_solved(self, rng):
        state, _ = start(CurriculumMode.ALL_AT_ONCE, rng, all_at_once_max_n=5)
        assert state.active_head_targets == (2, 3, 4, 5)
        state = record_solves(state, [0.99, 0.5, 0.99, 0.5])
        assert state.solve_epochs == {2: 0, 4: 0}
        assert state.max_solved_n == 2

    def test_first_solve_epoch_is_kept(self, rng):
        state, _ = start(CurriculumMode.ALL_AT_ONCE, rng, all_at_once_max_n=3)
        state = record_solves(state, [0.99, 0.1])
        later = record_solves(replace(state, epochs_total=5), [0.99, 0.99])
        assert later.solve_epochs == {2: 0, 3: 5}
        assert later.max_solved_n == 3


def test_state_dict_round_trip(rng):
    state, params = start(CurriculumMode.MULTI, rng)
    state, _ = advance(state, params, [0.99], rng)
    assert CurriculumState.from_dict(state.to_dict()) == state


class TestRun:
    TRAIN = TrainConfig(batch_size=8, batches_per_epoch=2, eval_sequences=20)

    def run(self, max_epochs, resume=None, seed=0):
        return run_curriculum(
            CurriculumConfig(mode=CurriculumMode.MULTI),
            NET,
            self.TRAIN,
            TaskConfig(),
            make_streams(seed),
            BudgetConfig(max_epochs=max_epochs, max_n=6),
            record_wall_time=False,
            resume=resume,
        )

    def test_epoch_budget_and_log(self):
        run = self.run(3)
        assert run.state.epochs_total == 3
        assert [r.epoch for r in run.epoch_log] == [1, 2, 3]
        assert all(r.wall_seconds == 0.0 for r in run.epoch_log)
        assert run.params.head_targets == list(run.state.active_head_targets)

    def test_deterministic(self):
        a, b = self.run(3), self.run(3)
        assert [r.as_row() for r in a.epoch_log] == [r.as_row() for r in b.epoch_log]
        assert np.array_equal(a.params.w_rec, b.params.w_rec)

    def test_resume_equals_uninterrupted(self):
        straight = self.run(4)
        resumed = self.run(4, resume=self.run(2))
        assert [r.as_row() for r in resumed.epoch_log] == [r.as_row() for r in straight.epoch_log]
        assert np.array_equal(resumed.params.tau, straight.params.tau)

    def test_callbacks(self):
        seen = []
        run_curriculum(
            CurriculumConfig(mode=CurriculumMode.SINGLE),
            NET,
            self.TRAIN,
            TaskConfig(),
            make_streams(1),
            BudgetConfig(max_epochs=2, max_n=6),
            record_wall_time=False,
            on_epoch=lambda run: seen.append(run.state.epochs_total),
        )
        assert seen == [1, 2]


def test_forgetting_probe_existing_and_retrained_head(small_cfg, small_params):
    train = TrainConfig(batch_size=4, batches_per_epoch=1, eval_sequences=30)
    existing = forgetting_probe(
        small_params, small_cfg, train, TaskConfig(), 2, False, np.random.default_rng(0), np.random.default_rng(1)
    )
    retrained = forgetting_probe(
        small_params, small_cfg, train, TaskConfig(), 2, True, np.random.default_rng(0), np.random.default_rng(1), max_epochs=1
    )
    assert 0.0 <= existing <= 1.0 and 0.0 <= retrained <= 1.0


def test_overflow_after_update_marks_run_diverged():
    hot = TrainConfig(learning_rate=1e300, momentum=0.0, grad_clip_norm=None, batch_size=8, batches_per_epoch=2, eval_sequences=20)
    with np.errstate(all="ignore"):
        run = run_curriculum(
            CurriculumConfig(mode=CurriculumMode.MULTI),
            NetConfig(n=6),
            hot,
            TaskConfig(),
            make_streams(0),
            BudgetConfig(max_epochs=5, max_n=6),
            record_wall_time=False,
        )
    assert run.state.diverged
    assert run.state.finished
    assert run.params.is_finite()
