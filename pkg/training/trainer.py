"""
Epoch-level training loop.

An epoch is train_cfg.batches_per_epoch minibatches. Each minibatch draws
fresh sequences, evaluates the gradient at the Nesterov lookahead point,
optionally clips it by global norm and applies the update.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config_models import NetConfig, TaskSpec, TrainConfig
from core.errors import DivergedTrainingError
from network.leaky_rnn import NetworkParams
from tasks.sequence_tasks import sample_batch
from training.bptt import loss_and_grads
from training.evaluation import evaluate_heads
from training.optimizer import OptimizerState, lookahead, sgd_nesterov_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    """One row of the training log."""

    epoch: int
    head_targets: Tuple[int, ...]
    loss: float
    accuracies: Tuple[float, ...]
    mean_tau: float
    std_tau: float
    wall_seconds: float

    def as_row(self) -> Dict[str, object]:
        return {
            "epoch": self.epoch,
            "head_targets": ";".join(str(n) for n in self.head_targets),
            "loss": self.loss,
            "accuracies": ";".join(repr(float(a)) for a in self.accuracies),
            "mean_tau": self.mean_tau,
            "std_tau": self.std_tau,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_row(cls, row: Dict[str, object]) -> "EpochRecord":
        targets = str(row["head_targets"])
        accuracies = str(row["accuracies"])
        return cls(
            epoch=int(row["epoch"]),
            head_targets=tuple(int(n) for n in targets.split(";") if n),
            loss=float(row["loss"]),
            accuracies=tuple(float(a) for a in accuracies.split(";") if a),
            mean_tau=float(row["mean_tau"]),
            std_tau=float(row["std_tau"]),
            wall_seconds=float(row["wall_seconds"]),
        )


def task_for_heads(params: NetworkParams, active_heads: Sequence[int], base: TaskSpec) -> TaskSpec:
    """Task spec long enough for the largest active head (default lengths for that N if base is shorter)."""
    largest = max(params.heads[i].target_n for i in active_heads)
    if largest <= base.n:
        return base
    return TaskSpec(kind=base.kind, n=largest, k=base.k)


def train_epoch(
    params: NetworkParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    spec: TaskSpec,
    opt_state: OptimizerState,
    rng: np.random.Generator,
    active_heads: Optional[Sequence[int]] = None,
    readout_heads: Optional[Sequence[int]] = None,
    epoch: int = 0,
) -> Tuple[NetworkParams, OptimizerState, float]:
    """
    Run one epoch of minibatch Nesterov SGD.

    Args:
        spec: task whose sequences are drawn; must be long enough for every active head
        active_heads: heads in the summed loss (all when None)
        readout_heads: when given, only these heads' readouts are updated
        epoch: index used in divergence errors

    Returns:
        (params, opt_state, mean loss over the epoch's minibatches)

    Raises:
        DivergedTrainingError: If a loss or updated parameter is not finite
    """
    active = list(range(len(params.heads))) if active_heads is None else list(active_heads)
    losses: List[float] = []
    for batch_index in range(train_cfg.batches_per_epoch):
        batch = sample_batch(spec, train_cfg.batch_size, rng)
        probe = lookahead(params, opt_state, train_cfg, net_cfg)
        try:
            loss, grads = loss_and_grads(probe, net_cfg, batch, active, train_tau=train_cfg.train_tau)
        except DivergedTrainingError as e:
            raise DivergedTrainingError(epoch, batch_index, e.loss) from e
        if readout_heads is not None:
            grads = grads.readout_only(readout_heads)
        if not grads.is_finite():
            raise DivergedTrainingError(epoch, batch_index, loss)
        grads = grads.clipped(train_cfg.grad_clip_norm)
        params, opt_state = sgd_nesterov_step(params, grads, opt_state, train_cfg, net_cfg)
        if not params.is_finite():
            raise DivergedTrainingError(epoch, batch_index, loss)
        losses.append(loss)
    return params, opt_state, float(np.mean(losses))


def fit_heads(
    params: NetworkParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
    eval_rng: np.random.Generator,
    max_epochs: int,
    readout_only: bool = False,
    head_indices: Optional[Sequence[int]] = None,
) -> Tuple[NetworkParams, List[float], int]:
    """
    Train until every listed head reaches the threshold or max_epochs run out.

    Returns:
        (params, final accuracies, epochs used)
    """
    heads = list(range(len(params.heads))) if head_indices is None else list(head_indices)
    task = task_for_heads(params, heads, spec)
    opt_state = OptimizerState.zeros_like(params)
    accuracies = evaluate_heads(params, net_cfg, task, heads, train_cfg.eval_sequences, eval_rng)
    epochs = 0
    while epochs < max_epochs and min(accuracies) < train_cfg.accuracy_threshold:
        params, opt_state, loss = train_epoch(
            params,
            net_cfg,
            train_cfg,
            task,
            opt_state,
            rng,
            active_heads=heads,
            readout_heads=heads if readout_only else None,
            epoch=epochs,
        )
        epochs += 1
        accuracies = evaluate_heads(params, net_cfg, task, heads, train_cfg.eval_sequences, eval_rng)
        logger.debug(f"fit epoch {epochs}: loss={loss:.4f} accuracies={accuracies}")
    return params, accuracies, epochs
