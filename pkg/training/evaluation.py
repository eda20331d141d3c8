"""
Accuracy evaluation of readout heads.

Two protocols:
- "sequences": fresh task sequences, every valid time step scored
- "stream":    one long input stream, 100-step burn-in, 1000 scored steps
"""

import logging
from typing import Tuple

import numpy as np

from core.config_models import NetConfig, TaskSpec
from core.errors import StructuralError
from network.leaky_rnn import NetworkParams, forward, simulate
from tasks.sequence_tasks import Batch, sample_batch, sample_stream

logger = logging.getLogger(__name__)

BURN_IN_STEPS = 100
SCORED_STEPS = 1000
_EVAL_CHUNK = 250


def _check_head(params: NetworkParams, head_index: int) -> None:
    if not 0 <= head_index < len(params.heads):
        raise StructuralError(f"Invalid head index {head_index} for {len(params.heads)} heads")


def predictions(params: NetworkParams, states: np.ndarray, head_index: int) -> np.ndarray:
    """Argmax class per state; ties go to class 0."""
    head = params.heads[head_index]
    logits = states @ head.w_out.T + head.b_out
    return np.argmax(logits, axis=-1)


def batch_hits(params: NetworkParams, cfg: NetConfig, batch: Batch, head_index: int) -> Tuple[int, int]:
    """(correct, scored) valid time steps of one head on one batch."""
    traj = forward(params, cfg, batch.inputs)
    targets, mask = batch.targets_for(params.heads[head_index].target_n)
    predicted = predictions(params, traj.states, head_index)
    return int(np.sum((predicted == targets) & mask)), int(mask.sum())


def stream_accuracy(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    head_index: int,
    rng: np.random.Generator,
    burn_in: int = BURN_IN_STEPS,
    n_steps: int = SCORED_STEPS,
) -> float:
    """Accuracy over n_steps scored steps of one stream after a burn-in."""
    _check_head(params, head_index)
    target_n = params.heads[head_index].target_n
    stream = sample_stream(spec, burn_in + n_steps, rng)
    activity = simulate(params, cfg, stream.inputs[0], burn_in=burn_in)
    targets, mask = stream.targets_for(target_n)
    targets, mask = targets[0, burn_in:], mask[0, burn_in:]
    predicted = predictions(params, activity, head_index)
    scored = int(mask.sum())
    if scored == 0:
        raise StructuralError(f"No scored steps for N={target_n} after burn-in {burn_in}")
    return float(np.sum((predicted == targets) & mask) / scored)


def evaluate_accuracy(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    head_index: int,
    n_sequences: int,
    rng: np.random.Generator,
    mode: str = "sequences",
) -> float:
    """
    Fraction of valid time steps where the head's argmax matches the target.

    Args:
        spec: task used to draw fresh sequences (its len_range and k)
        head_index: head to score; targets use that head's own N
        n_sequences: sequences ("sequences" mode) or streams ("stream" mode)
        mode: "sequences" or "stream"
    """
    _check_head(params, head_index)
    if mode == "stream":
        scores = [stream_accuracy(params, cfg, spec, head_index, rng) for _ in range(n_sequences)]
        return float(np.mean(scores))
    if mode != "sequences":
        raise StructuralError(f"Unknown evaluation mode '{mode}'")
    target_n = params.heads[head_index].target_n
    if spec.lengths[1] < target_n:
        raise StructuralError(f"Task lengths {spec.lengths} cannot score N={target_n}")
    correct = scored = 0
    remaining = n_sequences
    while remaining > 0:
        size = min(_EVAL_CHUNK, remaining)
        hits, count = batch_hits(params, cfg, sample_batch(spec, size, rng), head_index)
        correct += hits
        scored += count
        remaining -= size
    return correct / scored if scored else 0.0


def evaluate_heads(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    head_indices,
    n_sequences: int,
    rng: np.random.Generator,
):
    """Accuracy of several heads scored on the same fresh sequences."""
    head_indices = list(head_indices)
    correct = np.zeros(len(head_indices))
    scored = np.zeros(len(head_indices))
    remaining = n_sequences
    while remaining > 0:
        size = min(_EVAL_CHUNK, remaining)
        batch = sample_batch(spec, size, rng)
        traj = forward(params, cfg, batch.inputs)
        for slot, index in enumerate(head_indices):
            targets, mask = batch.targets_for(params.heads[index].target_n)
            predicted = predictions(params, traj.states, index)
            correct[slot] += np.sum((predicted == targets) & mask)
            scored[slot] += mask.sum()
        remaining -= size
    return [float(c / s) if s else 0.0 for c, s in zip(correct, scored)]
