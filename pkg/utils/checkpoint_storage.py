"""
Checkpoint Storage Module

Binary checkpoint container for trained networks and resumable runs.

Layout (all integers little-endian):
    magic        8 bytes   b"TAULAB01"
    version      uint32
    header_len   uint64
    header       UTF-8 JSON (config, seed, curriculum state, RNG states,
                 epoch log, array manifest)
    arrays       per array: uint16 name length, name, uint8 ndim,
                 uint64 per dim, row-major float64 data
    digest       32 bytes  sha256 of everything above

Arrays are written in the order w_rec, w_in, b_rec, b_in, tau, then
head{i}/w_out and head{i}/b_out per head, then velocity/<group> per optimizer
group. Floats go through unchanged, so load(save(x)) is bit-exact.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core import __version__
from core.config_models import ExperimentConfig
from core.errors import CheckpointError, CheckpointVersionError, ChecksumError
from network.leaky_rnn import NetworkParams, ReadoutHead
from training.curricula import CurriculumState, TrainedRun
from training.optimizer import OptimizerState
from training.trainer import EpochRecord
from utils.rng_streams import export_states, restore_states

logger = logging.getLogger(__name__)

MAGIC = b"TAULAB01"
FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".tlb"
_DIGEST_SIZE = 32
_CORE_ARRAYS = ("w_rec", "w_in", "b_rec", "b_in", "tau")


@dataclass
class Checkpoint:
    """Everything needed to analyze a network or resume its training run."""

    config: ExperimentConfig
    seed: int
    params: NetworkParams
    opt_state: Optional[OptimizerState] = None
    curriculum: Optional[CurriculumState] = None
    rng_states: Dict[str, Any] = field(default_factory=dict)
    epoch_log: List[EpochRecord] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_run(cls, config: ExperimentConfig, seed: int, run: TrainedRun, **metadata) -> "Checkpoint":
        return cls(
            config=config,
            seed=seed,
            params=run.params,
            opt_state=run.opt_state,
            curriculum=run.state,
            rng_states=export_states(run.streams),
            epoch_log=list(run.epoch_log),
            metadata=dict(metadata),
        )

    def to_run(self) -> TrainedRun:
        """Rebuild a resumable run; requires curriculum, optimizer and RNG state."""
        if self.curriculum is None or self.opt_state is None or not self.rng_states:
            raise CheckpointError("Checkpoint has no training state to resume from")
        return TrainedRun(
            params=self.params,
            state=self.curriculum,
            opt_state=self.opt_state,
            epoch_log=list(self.epoch_log),
            streams=restore_states(self.rng_states),
        )


# =====================================
# ENCODING
# =====================================


def _named_arrays(checkpoint: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    params = checkpoint.params
    arrays = [(name, getattr(params, name)) for name in _CORE_ARRAYS]
    for index, head in enumerate(params.heads):
        arrays.append((f"head{index}/w_out", head.w_out))
        arrays.append((f"head{index}/b_out", head.b_out))
    if checkpoint.opt_state is not None:
        for group, values in checkpoint.opt_state.velocity.items():
            arrays.append((f"velocity/{group}", values))
    return arrays


def _encode_array(name: str, values: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    encoded_name = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded_name)), encoded_name, struct.pack("<B", values.ndim)]
    parts.extend(struct.pack("<Q", dim) for dim in values.shape)
    parts.append(values.tobytes(order="C"))
    return b"".join(parts)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    arrays = _named_arrays(checkpoint)
    header = {
        "taulab_version": __version__,
        "config": checkpoint.config.model_dump(mode="json"),
        "seed": checkpoint.seed,
        "head_targets": checkpoint.params.head_targets,
        "curriculum": checkpoint.curriculum.to_dict() if checkpoint.curriculum is not None else None,
        "rng_states": checkpoint.rng_states,
        "epoch_log": [record.as_row() for record in checkpoint.epoch_log],
        "metadata": checkpoint.metadata,
        "arrays": [name for name, _ in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(
        [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(header_bytes)), header_bytes]
        + [_encode_array(name, values) for name, values in arrays]
    )
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointError("Checkpoint is truncated")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def _split(data: bytes) -> Tuple[Dict[str, Any], _Reader]:
    if len(data) < len(MAGIC) + 12 + _DIGEST_SIZE:
        raise CheckpointError("Checkpoint is truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("Not a taulab checkpoint (bad magic)")
    reader = _Reader(data, len(MAGIC))
    version = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("Checkpoint checksum mismatch; the file is corrupt")
    header_len = reader.unpack("<Q")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint header is unreadable: {e}") from e
    return header, _Reader(body, reader.offset)


def _decode_arrays(reader: _Reader, names: List[str]) -> Dict[str, np.ndarray]:
    arrays = {}
    for expected in names:
        name = reader.take(reader.unpack("<H")).decode("utf-8")
        if name != expected:
            raise CheckpointError(f"Expected array '{expected}', found '{name}'")
        ndim = reader.unpack("<B")
        shape = tuple(reader.unpack("<Q") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(reader.data):
        raise CheckpointError("Checkpoint has trailing bytes after its arrays")
    return arrays


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Raises:
        CheckpointVersionError: If written by another format version
        ChecksumError: If the payload does not match its digest
        CheckpointError: For any other malformed content
    """
    header, reader = _split(data)
    arrays = _decode_arrays(reader, header["arrays"])
    heads = tuple(
        ReadoutHead(w_out=arrays[f"head{i}/w_out"], b_out=arrays[f"head{i}/b_out"], target_n=target)
        for i, target in enumerate(header["head_targets"])
    )
    params = NetworkParams(heads=heads, **{name: arrays[name] for name in _CORE_ARRAYS})
    velocity = {name.split("/", 1)[1]: values for name, values in arrays.items() if name.startswith("velocity/")}
    return Checkpoint(
        config=ExperimentConfig.model_validate(header["config"]),
        seed=int(header["seed"]),
        params=params,
        opt_state=OptimizerState(velocity) if velocity else None,
        curriculum=CurriculumState.from_dict(header["curriculum"]) if header["curriculum"] else None,
        rng_states=header["rng_states"],
        epoch_log=[EpochRecord.from_row(row) for row in header["epoch_log"]],
        metadata=header["metadata"],
    )


# =====================================
# FILES
# =====================================


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write atomically (temporary file, then rename) and return the path."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(encode_checkpoint(checkpoint))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"Could not write checkpoint {path}: {e}") from e
    logger.debug(f"Checkpoint written: {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {e}") from e
    return decode_checkpoint(data)


def read_header(path: Union[str, Path]) -> Dict[str, Any]:
    """Verified JSON header of a checkpoint without building arrays."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {e}") from e
    header, _ = _split(data)
    return header
