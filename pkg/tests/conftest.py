import numpy as np
import pytest

from core.config_models import (
    BudgetConfig,
    CurriculumConfig,
    ExperimentConfig,
    NetConfig,
    OutputConfig,
    TaskConfig,
    TrainConfig,
)
from network.leaky_rnn import NetworkParams, ReadoutHead, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return NetConfig(n=8)


@pytest.fixture
def small_params(small_cfg, rng):
    return init_params(small_cfg, rng, head_targets=(2, 3))


@pytest.fixture
def tiny_config(tmp_path):
    """A multi-head run small enough to train in seconds."""
    return ExperimentConfig(
        name="tiny",
        seeds=[0, 1],
        network=NetConfig(n=12),
        training=TrainConfig(batch_size=8, batches_per_epoch=3, eval_sequences=20),
        task=TaskConfig(),
        curriculum=CurriculumConfig(mode="multi"),
        budget=BudgetConfig(max_epochs=4, max_n=4),
        output=OutputConfig(directory=str(tmp_path / "runs"), record_wall_time=False),
    )


@pytest.fixture
def xor_net():
    """
    Hand-wired 2-parity solver with memoryless neurons:
    r0 = s(t), r1 = s(t-1), r2 = phi(s(t) + s(t-1) - 1); neuron 3 is unused.
    """
    w_rec = np.zeros((4, 4))
    w_rec[1, 0] = 1.0
    w_rec[2, 0] = 1.0
    head = ReadoutHead(w_out=np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, -2.0, 0.0]]), b_out=np.array([0.0, -0.5]), target_n=2)
    return NetworkParams(
        w_rec=w_rec,
        w_in=np.array([1.0, 0.0, 1.0, 0.0]),
        b_rec=np.array([0.0, 0.0, -1.0, 0.0]),
        b_in=np.zeros(4),
        tau=np.array([1.0, 1.0, 1.0, 5.0]),
        heads=(head,),
    )
