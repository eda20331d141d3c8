"""
Exception hierarchy for taulab.

Every error raised on purpose by the library derives from TauLabError so the
CLI can map failures onto exit codes without catching unrelated exceptions.
"""

from typing import Dict, List, Optional


class TauLabError(Exception):
    """Base class for all taulab errors."""


class StructuralError(TauLabError, ValueError):
    """Shape, index or precondition violation."""


class NumericOverflowError(TauLabError, ArithmeticError):
    """A network state became non-finite."""

    def __init__(self, neuron: int, time_index: Optional[int] = None, value: float = float("nan")):
        self.neuron = neuron
        self.time_index = time_index
        self.value = value
        where = f"neuron {neuron}"
        if time_index is not None:
            where += f" at time step {time_index}"
        super().__init__(f"Non-finite activity ({value}) in {where}")

    def at_time(self, time_index: int) -> "NumericOverflowError":
        return NumericOverflowError(self.neuron, time_index, self.value)


class DivergedTrainingError(TauLabError, ArithmeticError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")


class ConfigError(TauLabError):
    """Invalid experiment configuration, with one message per offending field."""

    def __init__(self, message: str, field_errors: Optional[Dict[str, str]] = None):
        self.field_errors = field_errors or {}
        lines: List[str] = [message]
        lines.extend(f"  {field}: {msg}" for field, msg in self.field_errors.items())
        super().__init__("\n".join(lines))


class CheckpointError(TauLabError):
    """A checkpoint could not be read or written."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its stored digest."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class DeadNeuronError(TauLabError):
    """Activity trace has (numerically) zero variance."""


class InsufficientDataError(TauLabError):
    """Too few live neurons or samples for a population statistic."""


class IllConditionedMetricError(TauLabError):
    """Relative accuracy requested for a network that performs near chance."""


class MissingRunError(TauLabError):
    """A reproduction step expected pre-trained runs that are not on disk."""


class ExportError(TauLabError, OSError):
    """A CSV, JSON or figure file could not be written."""
