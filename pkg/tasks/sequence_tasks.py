"""
N-parity and N-DMS Sequence Generation

Creates binary input streams and per-time-step targets:
- N-parity: XOR of the last N digits
- N-DMS:    whether the current digit matches the digit N-1 positions back

Each digit is held for k time steps. The target at time step t is the
digit-level target of digit floor(t / k); it is defined once N digits have
started, i.e. from digit index N-1 on, and never past a sequence's own length.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config_models import TaskKind, TaskSpec
from core.errors import StructuralError

logger = logging.getLogger(__name__)

INVALID = -1


def target_at(kind: TaskKind, digits: Sequence[int], index: int, n: int) -> Optional[int]:
    """
    Digit-level target at one position, or None while fewer than n digits exist.

    Args:
        kind: parity or dms
        digits: binary digit sequence
        index: position in digits (0-based)
        n: memory depth N
    """
    if not 0 <= index < len(digits):
        raise StructuralError(f"index {index} outside sequence of length {len(digits)}")
    if index < n - 1:
        return None
    if TaskKind(kind) == TaskKind.PARITY:
        return int(sum(int(d) for d in digits[index - n + 1 : index + 1]) % 2)
    return int(int(digits[index]) == int(digits[index - n + 1]))


def digit_targets(kind: TaskKind, digits: np.ndarray, n: int) -> np.ndarray:
    """Vectorized target_at over a (B, L) digit array; INVALID where undefined."""
    digits = np.asarray(digits, dtype=np.int64)
    batch, length = digits.shape
    targets = np.full((batch, length), INVALID, dtype=np.int64)
    if length < n:
        return targets
    if TaskKind(kind) == TaskKind.PARITY:
        prefix = np.concatenate([np.zeros((batch, 1), dtype=np.int64), np.cumsum(digits, axis=1)], axis=1)
        targets[:, n - 1 :] = (prefix[:, n:] - prefix[:, : length - n + 1]) % 2
    else:
        targets[:, n - 1 :] = (digits[:, n - 1 :] == digits[:, : length - n + 1]).astype(np.int64)
    return targets


@dataclass(frozen=True)
class Batch:
    """
    A batch of held-digit input sequences.

    inputs:     (B, T) input bits, T = max length * k, zero past each sequence's end
    digits:     (B, L) digit sequences (entries past a sequence's length are unused)
    lengths:    (B,) digit counts
    targets:    (B, T) targets for the batch's own N, INVALID where undefined
    valid_mask: (B, T) True where targets are defined
    """

    kind: TaskKind
    n: int
    k: int
    inputs: np.ndarray
    digits: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray
    valid_mask: np.ndarray

    @property
    def steps(self) -> int:
        return self.inputs.shape[1]

    def targets_for(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Time-step targets and validity mask for memory depth n on the same inputs."""
        return _time_targets(self.kind, self.digits, self.lengths, n, self.k, self.steps)


def _time_targets(kind, digits, lengths, n, k, steps) -> Tuple[np.ndarray, np.ndarray]:
    per_digit = digit_targets(kind, digits, n)
    digit_index = np.arange(steps) // k
    targets = per_digit[:, digit_index]
    valid = (digit_index[None, :] >= n - 1) & (digit_index[None, :] < lengths[:, None])
    targets = np.where(valid, targets, INVALID)
    return targets, valid


def _assemble(spec: TaskSpec, digits: np.ndarray, lengths: np.ndarray, steps: int) -> Batch:
    k = spec.k
    held = np.repeat(digits, k, axis=1)[:, :steps].astype(np.float64)
    digit_index = np.arange(steps) // k
    held[digit_index[None, :] >= lengths[:, None]] = 0.0
    targets, valid = _time_targets(spec.kind, digits, lengths, spec.n, k, steps)
    return Batch(
        kind=spec.kind,
        n=spec.n,
        k=k,
        inputs=held,
        digits=digits,
        lengths=lengths,
        targets=targets,
        valid_mask=valid,
    )


def sample_batch(spec: TaskSpec, batch_size: int, rng: np.random.Generator) -> Batch:
    """
    Draw a training batch: L uniform on spec.lengths, digits i.i.d. Bernoulli(0.5).

    Raises:
        StructuralError: If batch_size < 1 or the length range is empty
    """
    if batch_size < 1:
        raise StructuralError(f"batch_size must be >= 1, got {batch_size}")
    low, high = spec.lengths
    if low < 1 or high < low:
        raise StructuralError(f"empty len_range ({low}, {high})")
    lengths = rng.integers(low, high + 1, size=batch_size)
    max_len = int(lengths.max())
    digits = rng.integers(0, 2, size=(batch_size, max_len))
    return _assemble(spec, digits, lengths, max_len * spec.k)


def sample_stream(spec: TaskSpec, n_steps: int, rng: np.random.Generator, n_streams: int = 1) -> Batch:
    """Long uninterrupted input streams (no padding) of exactly n_steps time steps."""
    if n_steps < 1 or n_streams < 1:
        raise StructuralError("sample_stream needs n_steps >= 1 and n_streams >= 1")
    n_digits = -(-n_steps // spec.k)
    digits = rng.integers(0, 2, size=(n_streams, n_digits))
    lengths = np.full(n_streams, n_digits)
    return _assemble(spec, digits, lengths, n_steps)


def batch_to_frame(batch: Batch) -> pd.DataFrame:
    """Long-format table: one row per (sequence, time step)."""
    batch_size, steps = batch.inputs.shape
    targets = pd.array(batch.targets.ravel(), dtype="Int64")
    targets[~batch.valid_mask.ravel()] = pd.NA
    return pd.DataFrame(
        {
            "sequence_id": np.repeat(np.arange(batch_size), steps),
            "step": np.tile(np.arange(steps), batch_size),
            "input": batch.inputs.ravel().astype(np.int64),
            "target": targets,
            "valid": batch.valid_mask.ravel(),
        }
    )
