"""
Network-mediated timescales from activity autocorrelations.

Each neuron's trial-averaged autocorrelation is fitted with a single and a
double exponential decay; the Akaike Information Criterion picks the model and
the slowest selected timescale is the neuron's network-mediated timescale.

Fitted timescales use the exponential convention AC(t') ~ exp(-t'/tau). The
network report can also express them in the leak convention of the network
update, tau_leak = 1 / (1 - exp(-1/tau_exp)), in which an isolated neuron with
single-neuron timescale tau recovers tau exactly.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import fft as sp_fft
from scipy.optimize import least_squares

from core.config_models import NetConfig, TaskSpec
from core.errors import DeadNeuronError, InsufficientDataError, StructuralError
from network.leaky_rnn import NetworkParams, simulate
from tasks.sequence_tasks import sample_stream
from utils.rng_streams import spawn

logger = logging.getLogger(__name__)

DEAD_VARIANCE = 1e-12
MIN_FIT_LAGS = 10
MIN_LIVE_NEURONS = 10
N_STARTS = 8
DEGENERATE_LEVEL = 0.05
BURN_IN_STEPS = 100
# The double model must beat the single one by this much AIC, with separated and weighted components.
AIC_MARGIN = 10.0
MIN_TAU_RATIO = 1.5
MIN_COMPONENT_WEIGHT = 0.05
_RSS_FLOOR_PER_LAG = 1e-20
_TAU_FLOOR = 1e-6
_NEURON_CHUNK = 32


class FitModel(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


class Convention(str, Enum):
    EXPONENTIAL = "exponential"
    LEAK = "leak"


def to_leak_convention(tau_exp):
    """Exponential decay constant -> equivalent leak timescale of the network update."""
    tau_exp = np.asarray(tau_exp, dtype=np.float64)
    return 1.0 / -np.expm1(-1.0 / tau_exp)


def default_max_lag(steps: int, k: int = 1) -> int:
    return int(min(200 * k, steps // 100))


# =====================================
# AUTOCORRELATION
# =====================================


@dataclass(frozen=True)
class AcCurve:
    """Mean autocorrelation per lag 0..max_lag, averaged over n_trials traces of `steps` steps."""

    lags: np.ndarray
    values: np.ndarray
    n_trials: int
    steps: int

    @property
    def max_lag(self) -> int:
        return int(self.lags[-1])


def _check_trace_length(steps: int, max_lag: int) -> None:
    if max_lag < 1:
        raise StructuralError(f"max_lag must be >= 1, got {max_lag}")
    if steps < 10 * max_lag:
        raise StructuralError(f"Trace of {steps} steps is too short for max_lag {max_lag} (need >= {10 * max_lag})")


def _autocovariance_fft(centered: np.ndarray, max_lag: int) -> np.ndarray:
    """Lagged sums sum_t x(t) x(t - lag) for lags 0..max_lag along axis 0."""
    steps = centered.shape[0]
    size = sp_fft.next_fast_len(2 * steps, real=True)
    spectrum = sp_fft.rfft(centered, n=size, axis=0)
    return sp_fft.irfft(spectrum * np.conj(spectrum), n=size, axis=0)[: max_lag + 1]


def _autocovariance_direct(centered: np.ndarray, max_lag: int) -> np.ndarray:
    steps = centered.shape[0]
    sums = np.empty((max_lag + 1,) + centered.shape[1:])
    for lag in range(max_lag + 1):
        sums[lag] = np.sum(centered[lag:] * centered[: steps - lag], axis=0)
    return sums


def autocorrelation_matrix(activity: np.ndarray, max_lag: int, method: str = "fft") -> Tuple[np.ndarray, np.ndarray]:
    """
    Autocorrelation of every column of a (T, n) activity matrix.

    Returns:
        (values of shape (max_lag + 1, n), dead mask of shape (n,)); dead columns are NaN
    """
    activity = np.asarray(activity, dtype=np.float64)
    if activity.ndim == 1:
        activity = activity[:, None]
    steps = activity.shape[0]
    _check_trace_length(steps, max_lag)
    variance = activity.var(axis=0)
    dead = variance < DEAD_VARIANCE
    centered = activity - activity.mean(axis=0)
    if method == "fft":
        sums = _autocovariance_fft(centered, max_lag)
    elif method == "direct":
        sums = _autocovariance_direct(centered, max_lag)
    else:
        raise StructuralError(f"Unknown autocorrelation method '{method}'")
    norm = steps - np.arange(max_lag + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = sums / norm[:, None] / variance
    values[:, dead] = np.nan
    return values, dead


def autocorrelation(trace: np.ndarray, max_lag: int, method: str = "fft") -> AcCurve:
    """
    Sample autocorrelation of one activity trace.

    AC(t') = sum_t (r(t) - mean)(r(t - t') - mean) / (var * (T - t')), with the
    variance taken over the whole trace, so AC(0) = 1.

    Raises:
        StructuralError: If T < 10 * max_lag
        DeadNeuronError: If the trace variance is below DEAD_VARIANCE
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 1:
        raise StructuralError(f"autocorrelation expects a 1-D trace, got shape {trace.shape}")
    values, dead = autocorrelation_matrix(trace, max_lag, method)
    if dead[0]:
        raise DeadNeuronError(f"Trace variance {trace.var():.3e} is below {DEAD_VARIANCE}")
    return AcCurve(lags=np.arange(max_lag + 1), values=values[:, 0], n_trials=1, steps=trace.shape[0])


def average_curves(curves: Sequence[AcCurve]) -> AcCurve:
    """Trial average of curves sharing lags and trace length."""
    if not curves:
        raise InsufficientDataError("No autocorrelation curves to average")
    first = curves[0]
    for curve in curves[1:]:
        if curve.max_lag != first.max_lag or curve.steps != first.steps:
            raise StructuralError("Curves to average must share max_lag and trace length")
    weights = np.array([c.n_trials for c in curves], dtype=np.float64)
    values = np.average(np.stack([c.values for c in curves]), axis=0, weights=weights)
    return AcCurve(lags=first.lags, values=values, n_trials=int(weights.sum()), steps=first.steps)


# =====================================
# EXPONENTIAL FITS
# =====================================


@dataclass(frozen=True)
class AcFitReport:
    """Single/double exponential fit of one autocorrelation curve."""

    model: FitModel
    timescales: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    aic_single: float
    aic_double: float
    r_squared: float
    converged_single: bool
    converged_double: bool
    near_degenerate: bool = False

    @property
    def tau_net(self) -> float:
        return max(self.timescales)

    @property
    def converged(self) -> bool:
        return self.converged_single if self.model == FitModel.SINGLE else self.converged_double

    def tau_net_in(self, convention: Convention) -> float:
        if Convention(convention) == Convention.LEAK:
            return float(to_leak_convention(self.tau_net))
        return self.tau_net


@dataclass(frozen=True)
class _Fit:
    params: np.ndarray
    rss: float
    converged: bool


def _single(theta: np.ndarray, lags: np.ndarray) -> np.ndarray:
    return theta[0] ** 2 * np.exp(-lags / (theta[1] ** 2 + _TAU_FLOOR))


def _double(theta: np.ndarray, lags: np.ndarray) -> np.ndarray:
    return _single(theta[:2], lags) + _single(theta[2:], lags)


def _best_fit(model, starts: List[np.ndarray], lags: np.ndarray, y: np.ndarray) -> _Fit:
    best: Optional[_Fit] = None
    for x0 in starts:
        try:
            result = least_squares(lambda th: model(th, lags) - y, x0, method="lm", max_nfev=200 * (len(x0) + 1))
        except (ValueError, FloatingPointError) as e:
            logger.debug(f"fit start {x0} failed: {e}")
            continue
        rss = float(np.sum(result.fun**2))
        if not np.isfinite(rss):
            continue
        fit = _Fit(result.x, rss, bool(result.success))
        if (
            best is None
            or (fit.converged and not best.converged)
            or (fit.converged == best.converged and fit.rss < best.rss)
        ):
            best = fit
    if best is None:
        return _Fit(starts[0], float(np.sum((model(starts[0], lags) - y) ** 2)), False)
    return best


def _aic(rss: float, m: int, p: int, floor: float) -> float:
    return m * np.log(max(rss, floor) / m) + 2 * p


def _double_is_degenerate(pairs: List[Tuple[float, float]]) -> bool:
    """Two components that collapse onto one timescale, or one component that carries no weight."""
    (tau_fast, amp_fast), (tau_slow, amp_slow) = pairs
    total = amp_fast + amp_slow
    if total <= 0:
        return True
    return tau_slow < MIN_TAU_RATIO * tau_fast or min(amp_fast, amp_slow) < MIN_COMPONENT_WEIGHT * total


def _degenerate_report(values: np.ndarray) -> AcFitReport:
    """Curve with no correlation beyond lag 0: timescale from the lag-1 value alone."""
    lag1 = max(float(values[1]), 1e-12)
    tau = -1.0 / np.log(min(lag1, 1.0 - 1e-12))
    return AcFitReport(
        model=FitModel.SINGLE,
        timescales=(float(tau),),
        amplitudes=(1.0,),
        aic_single=float("nan"),
        aic_double=float("nan"),
        r_squared=0.0,
        converged_single=False,
        converged_double=False,
        near_degenerate=True,
    )


def fit_timescales(curve: AcCurve, n_starts: int = N_STARTS) -> AcFitReport:
    """
    Fit A exp(-t/tau1) and A exp(-t/tau1) + B exp(-t/tau2) to lags 1..max_lag.

    Amplitudes and timescales are squared internally so they stay positive.
    Every fit is started from n_starts timescales log-spaced in [1, max_lag]
    (all pairs of them for the double model) and the curve is normalized by
    its peak first, which makes recovered timescales independent of the
    curve's overall scale. AIC is m ln(RSS/m) + 2p. The double model is
    selected only when its AIC is lower by more than AIC_MARGIN and its fit is
    not degenerate: the slower timescale must exceed the faster one by
    MIN_TAU_RATIO and each amplitude must carry at least MIN_COMPONENT_WEIGHT
    of the total. Otherwise the single model is kept.

    Raises:
        StructuralError: If the curve is not finite or has fewer than 10 fit lags
    """
    lags = np.asarray(curve.lags[1:], dtype=np.float64)
    values = np.asarray(curve.values[1:], dtype=np.float64)
    if lags.size < MIN_FIT_LAGS:
        raise StructuralError(f"Need at least {MIN_FIT_LAGS} lags to fit, got {lags.size}")
    if not np.all(np.isfinite(values)):
        raise StructuralError("Autocorrelation curve contains non-finite values")

    scale = float(np.max(np.abs(values)))
    if scale < DEGENERATE_LEVEL:
        return _degenerate_report(curve.values)
    y = values / scale
    m = y.size

    taus = np.geomspace(1.0, max(float(lags[-1]), 1.0 + 1e-9), n_starts)
    single_starts = []
    for tau in taus:
        amplitude = max(y[0] * np.exp(lags[0] / tau), 1e-3)
        single_starts.append(np.sqrt([amplitude, tau]))
    double_starts = []
    for tau_a, tau_b in combinations(taus, 2):
        amplitude = max(y[0], 1e-3) / 2.0
        double_starts.append(np.sqrt([amplitude, tau_a, amplitude, tau_b]))

    single = _best_fit(_single, single_starts, lags, y)
    double = _best_fit(_double, double_starts, lags, y)

    floor = _RSS_FLOOR_PER_LAG * m
    aic_single = _aic(single.rss, m, 2, floor)
    aic_double = _aic(double.rss, m, 4, floor)
    pairs = sorted(
        [(double.params[1] ** 2 + _TAU_FLOOR, double.params[0] ** 2), (double.params[3] ** 2 + _TAU_FLOOR, double.params[2] ** 2)]
    )
    use_double = aic_double < aic_single - AIC_MARGIN and not _double_is_degenerate(pairs)

    if use_double:
        timescales = tuple(float(t) for t, _ in pairs)
        amplitudes = tuple(float(a * scale) for _, a in pairs)
        rss = double.rss
    else:
        timescales = (float(single.params[1] ** 2 + _TAU_FLOOR),)
        amplitudes = (float(single.params[0] ** 2 * scale),)
        rss = single.rss

    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - rss / total if total > 0 else 1.0
    # Normalization shifts every AIC by the same m ln(scale^2); reported in curve units.
    shift = m * np.log(scale**2)
    return AcFitReport(
        model=FitModel.DOUBLE if use_double else FitModel.SINGLE,
        timescales=timescales,
        amplitudes=amplitudes,
        aic_single=float(aic_single + shift),
        aic_double=float(aic_double + shift),
        r_squared=float(min(r_squared, 1.0)),
        converged_single=single.converged,
        converged_double=double.converged,
        near_degenerate=False,
    )


# =====================================
# NETWORK REPORT
# =====================================


@dataclass(frozen=True)
class NeuronTimescale:
    neuron_id: int
    fit: Optional[AcFitReport]
    dead: bool

    def as_row(self, convention: Convention) -> Dict[str, object]:
        if self.fit is None:
            nan = float("nan")
            return {
                "neuron_id": self.neuron_id,
                "model": "",
                "tau1": nan,
                "tau2": nan,
                "tau_net": nan,
                "aic_single": nan,
                "aic_double": nan,
                "r2": nan,
                "converged": False,
                "dead": self.dead,
            }
        taus = [float(t) for t in self.fit.timescales]
        if Convention(convention) == Convention.LEAK:
            taus = [float(to_leak_convention(t)) for t in taus]
        return {
            "neuron_id": self.neuron_id,
            "model": self.fit.model.value,
            "tau1": taus[0],
            "tau2": taus[1] if len(taus) > 1 else float("nan"),
            "tau_net": max(taus),
            "aic_single": self.fit.aic_single,
            "aic_double": self.fit.aic_double,
            "r2": self.fit.r_squared,
            "converged": self.fit.converged,
            "dead": self.dead,
        }


@dataclass(frozen=True)
class NetworkTimescaleReport:
    """Per-neuron fits plus population statistics over live neurons."""

    neurons: Tuple[NeuronTimescale, ...]
    convention: Convention
    mean_tau_net: float
    std_tau_net: float
    n_trials: int
    steps: int
    max_lag: int

    @property
    def live(self) -> List[NeuronTimescale]:
        return [n for n in self.neurons if not n.dead]

    @property
    def tau_net(self) -> np.ndarray:
        return np.array([n.fit.tau_net_in(self.convention) for n in self.live])

    @property
    def min_r_squared(self) -> float:
        fitted = [n.fit.r_squared for n in self.live if not n.fit.near_degenerate]
        return float(min(fitted)) if fitted else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([n.as_row(self.convention) for n in self.neurons])


def trial_curves(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    steps: int,
    max_lag: int,
    rng: np.random.Generator,
    burn_in: int = BURN_IN_STEPS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Autocorrelation of every neuron in one trial driven by Bernoulli(0.5) digits held k steps."""
    stream = sample_stream(spec, burn_in + steps, rng)
    activity = simulate(params, cfg, stream.inputs[0], burn_in=burn_in)
    values = np.empty((max_lag + 1, params.n))
    dead = np.zeros(params.n, dtype=bool)
    for start in range(0, params.n, _NEURON_CHUNK):
        cols = slice(start, start + _NEURON_CHUNK)
        values[:, cols], dead[cols] = autocorrelation_matrix(activity[:, cols], max_lag)
    return values, dead


def network_timescale_report(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
    n_trials: int = 10,
    steps: int = 100_000,
    max_lag: Optional[int] = None,
    convention: Convention = Convention.LEAK,
    require_population: bool = True,
) -> NetworkTimescaleReport:
    """
    Simulate the network for n_trials independent input streams, average each
    neuron's autocorrelation over the trials in which it is live, fit it, and
    aggregate mean/STD of the network-mediated timescale across live neurons.

    A neuron is dead when its activity variance is below DEAD_VARIANCE in
    every trial.

    Raises:
        InsufficientDataError: If fewer than 10 neurons are live and
            require_population is set
    """
    if n_trials < 1:
        raise StructuralError(f"n_trials must be >= 1, got {n_trials}")
    max_lag = default_max_lag(steps, spec.k) if max_lag is None else max_lag
    _check_trace_length(steps, max_lag)

    sums = np.zeros((max_lag + 1, params.n))
    live_trials = np.zeros(params.n, dtype=int)
    for trial, trial_rng in enumerate(spawn(rng, n_trials)):
        values, dead = trial_curves(params, cfg, spec, steps, max_lag, trial_rng)
        sums[:, ~dead] += values[:, ~dead]
        live_trials += ~dead
        logger.debug(f"timescale trial {trial + 1}/{n_trials}: {int((~dead).sum())} live neurons")

    lags = np.arange(max_lag + 1)
    neurons = []
    for i in range(params.n):
        if live_trials[i] == 0:
            neurons.append(NeuronTimescale(i, None, True))
            continue
        curve = AcCurve(lags=lags, values=sums[:, i] / live_trials[i], n_trials=int(live_trials[i]), steps=steps)
        neurons.append(NeuronTimescale(i, fit_timescales(curve), False))

    live = [n for n in neurons if not n.dead]
    if len(live) < MIN_LIVE_NEURONS:
        message = f"Only {len(live)} live neurons; population statistics need {MIN_LIVE_NEURONS}"
        if require_population:
            raise InsufficientDataError(message)
        logger.warning(f"⚠️ {message}")
    taus = np.array([n.fit.tau_net_in(convention) for n in live])
    mean = float(taus.mean()) if taus.size else float("nan")
    std = float(taus.std()) if taus.size else float("nan")
    logger.info(f"✅ Timescales: {len(live)}/{params.n} live neurons, mean tau_net={mean:.3f} ± {std:.3f} ({Convention(convention).value})")
    return NetworkTimescaleReport(
        neurons=tuple(neurons),
        convention=Convention(convention),
        mean_tau_net=mean,
        std_tau_net=std,
        n_trials=n_trials,
        steps=steps,
        max_lag=max_lag,
    )
