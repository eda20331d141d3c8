import numpy as np
import pytest

from core.config_models import NetConfig, TaskKind, TaskSpec, TrainConfig
from core.errors import DivergedTrainingError
from network.leaky_rnn import init_params
from training.optimizer import OptimizerState
from training.trainer import EpochRecord, fit_heads, task_for_heads, train_epoch

TRAIN = TrainConfig(batch_size=8, batches_per_epoch=4, eval_sequences=40)
SPEC = TaskSpec(kind=TaskKind.PARITY, n=2)


def test_epoch_updates_parameters(small_params, small_cfg, rng):
    params, opt_state, loss = train_epoch(
        small_params, small_cfg, TRAIN, SPEC, OptimizerState.zeros_like(small_params), rng
    )
    assert np.isfinite(loss)
    assert not np.array_equal(params.w_rec, small_params.w_rec)
    assert opt_state.velocity["w_rec"].any()
    assert np.all(np.diagonal(params.w_rec) == 0.0)


def test_epoch_is_deterministic(small_params, small_cfg):
    runs = [
        train_epoch(small_params, small_cfg, TRAIN, SPEC, OptimizerState.zeros_like(small_params), np.random.default_rng(4))
        for _ in range(2)
    ]
    assert runs[0][2] == runs[1][2]
    assert np.array_equal(runs[0][0].tau, runs[1][0].tau)


def test_readout_only_freezes_recurrent_part(small_params, small_cfg, rng):
    params, _, _ = train_epoch(
        small_params,
        small_cfg,
        TRAIN,
        TaskSpec(kind=TaskKind.PARITY, n=3),
        OptimizerState.zeros_like(small_params),
        rng,
        readout_heads=[1],
    )
    assert np.array_equal(params.w_rec, small_params.w_rec)
    assert np.array_equal(params.tau, small_params.tau)
    assert np.array_equal(params.heads[0].w_out, small_params.heads[0].w_out)
    assert not np.array_equal(params.heads[1].w_out, small_params.heads[1].w_out)


def test_divergence_is_reported(small_cfg, rng):
    params = init_params(small_cfg, rng, head_targets=(2,))
    hot = TrainConfig(learning_rate=1e30, momentum=0.0, grad_clip_norm=None, batch_size=4, batches_per_epoch=5)
    with np.errstate(all="ignore"):
        with pytest.raises(DivergedTrainingError) as info:
            train_epoch(params.replace(w_rec=params.w_rec * 50), small_cfg, hot, SPEC, OptimizerState.zeros_like(params), rng, epoch=7)
    assert info.value.epoch == 7


def test_fit_heads_stops_at_budget(small_params, small_cfg, rng):
    cfg = TrainConfig(batch_size=4, batches_per_epoch=1, eval_sequences=10, accuracy_threshold=0.999)
    _, accuracies, epochs = fit_heads(small_params, small_cfg, cfg, SPEC, rng, np.random.default_rng(1), max_epochs=2)
    assert epochs <= 2
    assert len(accuracies) == 2


@pytest.mark.slow
def test_fit_heads_solves_two_parity():
    cfg = NetConfig(n=16)
    params = init_params(cfg, np.random.default_rng(0), head_targets=(2,))
    train = TrainConfig(learning_rate=0.05, batch_size=32, batches_per_epoch=20, eval_sequences=100, accuracy_threshold=0.95)
    _, accuracies, epochs = fit_heads(
        params, cfg, train, SPEC, np.random.default_rng(1), np.random.default_rng(2), max_epochs=60
    )
    assert accuracies[0] >= 0.95, f"after {epochs} epochs"


def test_task_for_heads(small_params):
    base = TaskSpec(kind=TaskKind.DMS, n=2, k=2)
    assert task_for_heads(small_params, [0], base) is base
    grown = task_for_heads(small_params, [0, 1], base)
    assert grown.n == 3 and grown.k == 2 and grown.kind == TaskKind.DMS


def test_epoch_record_row_round_trip():
    record = EpochRecord(epoch=3, head_targets=(2, 3), loss=0.25, accuracies=(0.99, 0.5), mean_tau=1.2, std_tau=0.1, wall_seconds=0.0)
    assert EpochRecord.from_row(record.as_row()) == record
