"""
Configuration Models for taulab Experiments

This module defines the validated configuration blocks shared by every part of
the lab. These are NOT network parameters or training results - they describe
how a network is built, trained, driven and stopped.

Sections (one per YAML section in config.yaml):
- network:    NetConfig         (size, nonlinearity, leak placement)
- training:   TrainConfig       (optimizer, threshold, tau handling)
- task:       TaskConfig        (parity or DMS, hold factor, length rule)
- curriculum: CurriculumConfig  (none, single, multi, sliding, all_at_once)
- budget:     BudgetConfig      (stop conditions)
- output:     OutputConfig      (directories, determinism switches)
"""

import hashlib
import json
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# =====================================
# ENUMERATIONS
# =====================================


class Nonlinearity(str, Enum):
    LEAKY_RELU = "leaky-relu"
    RELU = "relu"
    TANH = "tanh"


class TauPlacement(str, Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"


class BiasMode(str, Enum):
    PER_NEURON = "per_neuron"
    SCALAR = "scalar"


class TaskKind(str, Enum):
    PARITY = "parity"
    DMS = "dms"


class CurriculumMode(str, Enum):
    NONE = "none"
    SINGLE = "single"
    MULTI = "multi"
    SLIDING = "sliding"
    ALL_AT_ONCE = "all_at_once"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)


# =====================================
# NETWORK / TASK / TRAINING SECTIONS
# =====================================


class NetConfig(_Section):
    """Shape and dynamics of the leaky RNN."""

    n: int = Field(128, ge=2, description="Number of recurrent neurons")
    alpha: float = Field(0.1, ge=0.0, lt=1.0, description="Negative slope of the leaky ReLU")
    nonlinearity: Nonlinearity = Field(Nonlinearity.LEAKY_RELU, description="Activation function")
    tau_placement: TauPlacement = Field(
        TauPlacement.INSIDE, description="Leak term inside or outside the nonlinearity"
    )
    tau_max: float = Field(200.0, gt=1.0, description="Upper clamp for trainable timescales")
    bias_mode: BiasMode = Field(BiasMode.PER_NEURON, description="Per-neuron or shared biases")
    init_gain: float = Field(0.5, gt=0.0, description="Recurrent weight std is init_gain/sqrt(n)")


class TaskSpec(_Section):
    """One concrete task: kind, memory depth N, hold factor k and digit-count range."""

    kind: TaskKind = Field(..., description="parity or dms")
    n: int = Field(..., ge=2, description="Memory depth N")
    k: int = Field(1, ge=1, description="Time steps each digit is held")
    len_range: Optional[Tuple[int, int]] = Field(
        None, description="Inclusive digit-count range; defaults to [N+2, 4N]"
    )

    @field_validator("len_range")
    @classmethod
    def _non_empty(cls, value: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if value is not None:
            low, high = value
            if low < 1 or high < low:
                raise ValueError(f"empty len_range {value}")
        return value

    @property
    def lengths(self) -> Tuple[int, int]:
        if self.len_range is not None:
            return self.len_range
        return (self.n + 2, 4 * self.n)


class TaskConfig(_Section):
    """Task family used by a whole curriculum run; N is chosen by the curriculum."""

    kind: TaskKind = Field(TaskKind.PARITY, description="parity or dms")
    k: int = Field(1, ge=1, description="Input hold factor in time steps")
    min_len_offset: int = Field(2, ge=1, description="Shortest sequence has N + offset digits")
    max_len_factor: int = Field(4, ge=1, description="Longest sequence has factor * N digits")

    def spec_for(self, n: int) -> TaskSpec:
        low = n + self.min_len_offset
        high = max(low, self.max_len_factor * n)
        return TaskSpec(kind=self.kind, n=n, k=self.k, len_range=(low, high))


class TrainConfig(_Section):
    """Optimizer and evaluation settings."""

    learning_rate: float = Field(0.01, gt=0.0, description="SGD step size")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="Nesterov momentum coefficient")
    batch_size: int = Field(64, ge=1, description="Sequences per minibatch")
    batches_per_epoch: int = Field(100, ge=1, description="Minibatches per epoch")
    accuracy_threshold: float = Field(0.98, gt=0.0, lt=1.0, description="Solve criterion")
    train_tau: bool = Field(True, description="Whether tau receives gradient updates")
    fixed_tau_value: Optional[float] = Field(None, ge=1.0, description="Shared frozen tau")
    grad_clip_norm: Optional[float] = Field(10.0, gt=0.0, description="Global norm clip, null disables")
    eval_sequences: int = Field(500, ge=1, description="Fresh sequences per threshold check")

    @model_validator(mode="after")
    def _fixed_tau_is_frozen(self) -> "TrainConfig":
        if self.fixed_tau_value is not None and self.train_tau:
            raise ValueError("fixed_tau_value requires train_tau: false")
        if self.fixed_tau_value is None and not self.train_tau:
            raise ValueError("train_tau: false requires fixed_tau_value")
        return self


# =====================================
# CURRICULUM / BUDGET / OUTPUT SECTIONS
# =====================================


class CurriculumConfig(_Section):
    """Which training regime to run and its regime-specific parameters."""

    mode: CurriculumMode = Field(CurriculumMode.MULTI, description="Training regime")
    start_n: int = Field(2, ge=2, description="First N trained by single/multi/sliding")
    target_n: int = Field(10, ge=2, description="Fixed N trained in mode 'none'")
    sliding_heads: int = Field(10, ge=1, description="H: heads in the sliding window")
    sliding_shift: int = Field(1, ge=1, description="w: window shift per advance")
    all_at_once_max_n: int = Field(20, ge=2, description="Heads for N in [2..max] in all_at_once")


class BudgetConfig(_Section):
    """Stop conditions; whichever triggers first ends the run."""

    max_epochs: int = Field(1000, ge=0, description="Epoch budget")
    max_wall_seconds: Optional[float] = Field(None, gt=0.0, description="Wall-clock budget")
    max_n: int = Field(101, ge=2, description="Stop after solving this N")


class OutputConfig(_Section):
    """Where artifacts go and how they are written."""

    directory: str = Field("runs", description="Root output directory")
    record_wall_time: bool = Field(True, description="False writes 0.0 for reproducible files")
    save_step_snapshots: bool = Field(True, description="Checkpoint each solved curriculum step")
    checkpoint_every_epochs: int = Field(1, ge=1, description="Resume checkpoint cadence")


class ExperimentConfig(_Section):
    """Complete, serializable description of a training experiment."""

    name: str = Field("experiment", description="Human-readable experiment name")
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1, description="Seed list")
    workers: int = Field(1, ge=1, description="Parallel seeds")
    network: NetConfig = Field(default_factory=NetConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _cross_field(self) -> "ExperimentConfig":
        fixed = self.training.fixed_tau_value
        if fixed is not None and fixed > self.network.tau_max:
            raise ValueError(f"training.fixed_tau_value {fixed} exceeds network.tau_max")
        if self.curriculum.start_n > self.budget.max_n:
            raise ValueError("curriculum.start_n exceeds budget.max_n")
        if self.curriculum.mode == CurriculumMode.ALL_AT_ONCE and self.curriculum.all_at_once_max_n < 2:
            raise ValueError("all_at_once requires all_at_once_max_n >= 2")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        return self


def config_hash(config: BaseModel) -> str:
    """Short stable hash of a configuration's canonical JSON form."""
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
