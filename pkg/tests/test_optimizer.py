import numpy as np
import pytest

from core.config_models import NetConfig, TrainConfig
from core.errors import StructuralError
from network.leaky_rnn import init_head
from training.bptt import GradientSet
from training.optimizer import OptimizerState, lookahead, sgd_nesterov_step


def constant_grads(params, value):
    zeros = GradientSet.zeros_like(params)
    return GradientSet(
        w_rec=np.full_like(zeros.w_rec, value),
        w_in=np.full_like(zeros.w_in, value),
        b_rec=np.full_like(zeros.b_rec, value),
        b_in=np.full_like(zeros.b_in, value),
        tau=np.full_like(zeros.tau, value),
        heads=tuple((np.full_like(w, value), np.full_like(b, value)) for w, b in zeros.heads),
    )


def test_plain_sgd_step(small_params, small_cfg):
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0)
    updated, state = sgd_nesterov_step(
        small_params, constant_grads(small_params, -1.0), OptimizerState.zeros_like(small_params), cfg, small_cfg
    )
    off_diagonal = ~np.eye(small_params.n, dtype=bool)
    assert np.allclose(updated.w_rec[off_diagonal], small_params.w_rec[off_diagonal] + 0.1)
    assert np.allclose(updated.tau, np.clip(small_params.tau + 0.1, 1.0, small_cfg.tau_max))
    assert np.allclose(state.velocity["w_in"], 0.1)


def test_momentum_accumulates(small_params, small_cfg):
    cfg = TrainConfig(learning_rate=0.1, momentum=0.5)
    grads = constant_grads(small_params, -1.0)
    params, state = sgd_nesterov_step(small_params, grads, OptimizerState.zeros_like(small_params), cfg, small_cfg)
    params, state = sgd_nesterov_step(params, grads, state, cfg, small_cfg)
    assert np.allclose(state.velocity["w_in"], 0.5 * 0.1 + 0.1)
    assert np.allclose(params.w_in, small_params.w_in + 0.1 + 0.15)


def test_lookahead_point(small_params, small_cfg):
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    _, state = sgd_nesterov_step(
        small_params, constant_grads(small_params, -1.0), OptimizerState.zeros_like(small_params), cfg, small_cfg
    )
    ahead = lookahead(small_params, state, cfg, small_cfg)
    assert np.allclose(ahead.w_in, small_params.w_in + 0.9 * 0.1)
    assert lookahead(small_params, state, TrainConfig(momentum=0.0), small_cfg) is small_params


def test_projections(small_params, small_cfg):
    cfg = TrainConfig(learning_rate=1.0, momentum=0.0)
    params, _ = sgd_nesterov_step(
        small_params, constant_grads(small_params, 1e4), OptimizerState.zeros_like(small_params), cfg, small_cfg
    )
    assert np.all(params.tau == 1.0)
    assert np.all(np.diagonal(params.w_rec) == 0.0)
    params, _ = sgd_nesterov_step(
        small_params, constant_grads(small_params, -1e4), OptimizerState.zeros_like(small_params), cfg, small_cfg
    )
    assert np.all(params.tau == small_cfg.tau_max)


def test_frozen_tau_never_moves(small_params, small_cfg):
    cfg = TrainConfig(learning_rate=0.1, train_tau=False, fixed_tau_value=1.0)
    params, state = sgd_nesterov_step(
        small_params, constant_grads(small_params, -1.0), OptimizerState.zeros_like(small_params), cfg, small_cfg
    )
    assert np.array_equal(params.tau, small_params.tau)
    assert not state.velocity["tau"].any()


def test_layout_mismatch(small_params, small_cfg, rng):
    grown = small_params.with_heads(list(small_params.heads) + [init_head(small_params.n, 4, rng)])
    with pytest.raises(StructuralError):
        sgd_nesterov_step(
            grown, constant_grads(grown, 0.0), OptimizerState.zeros_like(small_params), TrainConfig(), small_cfg
        )


def test_heads_keep_targets(small_params, small_cfg):
    params, _ = sgd_nesterov_step(
        small_params,
        constant_grads(small_params, 0.5),
        OptimizerState.zeros_like(small_params),
        TrainConfig(),
        NetConfig(n=small_params.n),
    )
    assert params.head_targets == small_params.head_targets
