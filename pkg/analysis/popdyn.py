"""
Population-level analyses of a network: dimensionality of its activity and
the balance of its recurrent weights.
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from core.config_models import NetConfig, TaskSpec
from core.errors import StructuralError
from network.leaky_rnn import NetworkParams, simulate
from tasks.sequence_tasks import sample_stream

logger = logging.getLogger(__name__)

ACTIVITY_STEPS = 10_000
BURN_IN_STEPS = 100
_EIG_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ActivityMatrix:
    """Time steps x neurons, recorded after burn-in."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise StructuralError(f"Activity must be 2-D (time, neurons), got shape {values.shape}")
        if np.isnan(values).any():
            raise StructuralError("Activity contains NaN")
        if values.shape[0] < 10 * values.shape[1]:
            logger.debug(f"Only {values.shape[0]} steps for {values.shape[1]} neurons; covariance may be noisy")
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def collect_activity(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
    steps: int = ACTIVITY_STEPS,
    burn_in: int = BURN_IN_STEPS,
    source: str = "",
) -> ActivityMatrix:
    """Activity under Bernoulli(0.5) digits held k steps, the drive used for timescales."""
    stream = sample_stream(spec, burn_in + steps, rng)
    return ActivityMatrix(simulate(params, cfg, stream.inputs[0], burn_in=burn_in), source)


def covariance_spectrum(activity: ActivityMatrix) -> np.ndarray:
    """Eigenvalues of the covariance of mean-centered activity, descending."""
    if activity.steps < 2:
        raise StructuralError(f"Need at least 2 time steps, got {activity.steps}")
    centered = activity.values - activity.values.mean(axis=0)
    cov = centered.T @ centered / activity.steps
    eigs = np.linalg.eigvalsh(cov)[::-1]
    return np.clip(eigs, 0.0, None)


def dimensionality(activity: ActivityMatrix, variance_fraction: float = 0.9) -> int:
    """
    Number of principal components that together explain variance_fraction of
    the total variance. Constant activity has dimensionality 0.
    """
    if not 0.0 < variance_fraction <= 1.0:
        raise StructuralError(f"variance_fraction must be in (0, 1], got {variance_fraction}")
    eigs = covariance_spectrum(activity)
    total = eigs.sum()
    if total <= 0.0:
        return 0
    eigs = np.where(eigs < _EIG_TOLERANCE * total, 0.0, eigs)
    total = eigs.sum()
    explained = np.cumsum(eigs) / total
    return int(np.argmax(explained >= variance_fraction * (1.0 - 1e-12)) + 1)


@dataclass(frozen=True)
class WeightBalance:
    """Mean incoming recurrent weight per neuron and its population mean/STD."""

    per_neuron: np.ndarray
    mean: float
    std: float

    def as_row(self) -> Dict[str, float]:
        return {"mean_incoming_weight": self.mean, "std_incoming_weight": self.std}


def weight_balance(params: NetworkParams) -> WeightBalance:
    incoming = params.w_rec.mean(axis=1)
    return WeightBalance(per_neuron=incoming, mean=float(incoming.mean()), std=float(incoming.std()))
