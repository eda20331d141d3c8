"""
Leaky RNN with trainable per-neuron timescales.

Each neuron i evolves over discrete time steps as

    inside:  r_i(t) = phi((1 - 1/tau_i) r_i(t-1) + (1/tau_i) u_i(t))
    outside: r_i(t) = (1 - 1/tau_i) r_i(t-1) + phi((1/tau_i) u_i(t))

with drive u_i(t) = sum_{j != i} W^R_ij r_j(t-1) + W^I_i S(t) + b^R_i + b^I_i.
tau_i = 1 makes a neuron memory-less; large tau_i freezes its activity.

All arrays are float64 and read-only; every transformation returns new values.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.config_models import BiasMode, NetConfig, Nonlinearity, TauPlacement
from core.errors import NumericOverflowError, StructuralError

logger = logging.getLogger(__name__)


def _frozen(values, shape: Optional[Tuple[int, ...]] = None, name: str = "array") -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if shape is not None and arr.shape != shape:
        raise StructuralError(f"{name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


# =====================================
# PARAMETER AND STATE VALUES
# =====================================


@dataclass(frozen=True)
class ReadoutHead:
    """Linear two-logit classifier dedicated to one memory depth N."""

    w_out: np.ndarray
    b_out: np.ndarray
    target_n: int

    def __post_init__(self):
        if int(self.target_n) < 2:
            raise StructuralError(f"Readout head target_n must be >= 2, got {self.target_n}")
        w_out = np.asarray(self.w_out)
        if w_out.ndim != 2 or w_out.shape[0] != 2:
            raise StructuralError(f"w_out must have shape (2, n), got {w_out.shape}")
        object.__setattr__(self, "w_out", _frozen(w_out, name="w_out"))
        object.__setattr__(self, "b_out", _frozen(self.b_out, (2,), "b_out"))
        object.__setattr__(self, "target_n", int(self.target_n))


@dataclass(frozen=True)
class NetworkParams:
    """All trainable tensors of one network."""

    w_rec: np.ndarray
    w_in: np.ndarray
    b_rec: np.ndarray
    b_in: np.ndarray
    tau: np.ndarray
    heads: Tuple[ReadoutHead, ...] = field(default_factory=tuple)

    def __post_init__(self):
        w_rec = np.asarray(self.w_rec)
        if w_rec.ndim != 2 or w_rec.shape[0] != w_rec.shape[1]:
            raise StructuralError(f"w_rec must be square, got {w_rec.shape}")
        n = w_rec.shape[0]
        if np.any(np.diagonal(w_rec) != 0.0):
            raise StructuralError("w_rec diagonal must be zero (no self-connections)")
        object.__setattr__(self, "w_rec", _frozen(w_rec, name="w_rec"))
        object.__setattr__(self, "w_in", _frozen(self.w_in, (n,), "w_in"))
        for name in ("b_rec", "b_in"):
            bias = _frozen(getattr(self, name), name=name)
            if bias.shape not in ((n,), (1,)):
                raise StructuralError(f"{name} must have shape ({n},) or (1,), got {bias.shape}")
            object.__setattr__(self, name, bias)
        tau = _frozen(self.tau, (n,), "tau")
        if np.any(tau <= 0.0):
            raise StructuralError("tau must be positive")
        object.__setattr__(self, "tau", tau)

        heads = tuple(self.heads)
        if not heads:
            raise StructuralError("A network needs at least one readout head")
        targets = [h.target_n for h in heads]
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise StructuralError(f"Head targets must be strictly increasing, got {targets}")
        for head in heads:
            if head.w_out.shape[1] != n:
                raise StructuralError(f"Head for N={head.target_n} has width {head.w_out.shape[1]}, expected {n}")
        object.__setattr__(self, "heads", heads)

    @property
    def n(self) -> int:
        return self.w_rec.shape[0]

    @property
    def head_targets(self) -> List[int]:
        return [h.target_n for h in self.heads]

    def head_index(self, target_n: int) -> Optional[int]:
        for index, head in enumerate(self.heads):
            if head.target_n == target_n:
                return index
        return None

    def replace(self, **changes) -> "NetworkParams":
        return replace(self, **changes)

    def with_heads(self, heads: Iterable[ReadoutHead]) -> "NetworkParams":
        return replace(self, heads=tuple(heads))

    def is_finite(self) -> bool:
        arrays = [self.w_rec, self.w_in, self.b_rec, self.b_in, self.tau]
        arrays += [a for h in self.heads for a in (h.w_out, h.b_out)]
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass(frozen=True)
class NetState:
    """Neuron activities r(t); shape (n,) or (batch, n)."""

    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", _frozen(self.r, name="r"))

    @classmethod
    def zeros(cls, n: int, batch: Optional[int] = None) -> "NetState":
        return cls(np.zeros(n if batch is None else (batch, n)))


@dataclass(frozen=True)
class Trajectory:
    """Batched forward pass record kept for backpropagation through time."""

    initial: np.ndarray  # (B, n)
    drive: np.ndarray  # (B, T, n) u(t)
    pre: np.ndarray  # (B, T, n) argument of the nonlinearity
    states: np.ndarray  # (B, T, n) r(t)


# =====================================
# NONLINEARITY
# =====================================


def activate(x: np.ndarray, cfg: NetConfig) -> np.ndarray:
    if cfg.nonlinearity == Nonlinearity.TANH:
        return np.tanh(x)
    slope = cfg.alpha if cfg.nonlinearity == Nonlinearity.LEAKY_RELU else 0.0
    return np.where(x >= 0.0, x, slope * x)


def activate_grad(x: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """Derivative of the nonlinearity; the kink at 0 takes the positive-branch slope."""
    if cfg.nonlinearity == Nonlinearity.TANH:
        return 1.0 - np.tanh(x) ** 2
    slope = cfg.alpha if cfg.nonlinearity == Nonlinearity.LEAKY_RELU else 0.0
    return np.where(x >= 0.0, 1.0, slope)


# =====================================
# INITIALIZATION
# =====================================


def init_head(n: int, target_n: int, rng: np.random.Generator) -> ReadoutHead:
    return ReadoutHead(
        w_out=rng.normal(0.0, 1.0 / np.sqrt(n), size=(2, n)),
        b_out=np.zeros(2),
        target_n=target_n,
    )


def init_params(
    cfg: NetConfig,
    rng: np.random.Generator,
    head_targets: Sequence[int] = (2,),
    fixed_tau: Optional[float] = None,
) -> NetworkParams:
    """
    Draw a fresh network.

    W^R ~ N(0, (g/sqrt(n))^2) with zero diagonal, W^I ~ N(0, 1/n), biases 0,
    tau = 1 + |N(0, 0.1^2)| clamped to tau_max, or the shared fixed_tau.
    """
    n = cfg.n
    w_rec = rng.normal(0.0, cfg.init_gain / np.sqrt(n), size=(n, n))
    np.fill_diagonal(w_rec, 0.0)
    w_in = rng.normal(0.0, 1.0 / np.sqrt(n), size=n)
    bias_shape = n if cfg.bias_mode == BiasMode.PER_NEURON else 1
    if fixed_tau is None:
        tau = np.clip(1.0 + np.abs(rng.normal(0.0, 0.1, size=n)), 1.0, cfg.tau_max)
    else:
        tau = np.full(n, float(fixed_tau))
    heads = [init_head(n, target, rng) for target in head_targets]
    return NetworkParams(
        w_rec=w_rec,
        w_in=w_in,
        b_rec=np.zeros(bias_shape),
        b_in=np.zeros(bias_shape),
        tau=tau,
        heads=tuple(heads),
    )


# =====================================
# DYNAMICS
# =====================================


def _check_dims(params: NetworkParams, cfg: NetConfig, r: np.ndarray) -> None:
    if cfg.n != params.n:
        raise StructuralError(f"Config has n={cfg.n} but parameters have n={params.n}")
    if r.shape[-1] != params.n:
        raise StructuralError(f"State has {r.shape[-1]} neurons, network has {params.n}")


def _raise_non_finite(r: np.ndarray, time_index: Optional[int] = None) -> None:
    bad = np.argwhere(~np.isfinite(np.atleast_2d(r)))[0]
    neuron = int(bad[-1])
    raise NumericOverflowError(neuron, time_index, float(np.atleast_2d(r)[tuple(bad)]))


def _advance(params: NetworkParams, cfg: NetConfig, r_prev: np.ndarray, s: np.ndarray):
    """One leaky update for arrays; s broadcasts against r_prev's leading axes."""
    inv_tau = 1.0 / params.tau
    leak = 1.0 - inv_tau
    drive = r_prev @ params.w_rec.T + np.multiply.outer(s, params.w_in) + params.b_rec + params.b_in
    if cfg.tau_placement == TauPlacement.INSIDE:
        pre = leak * r_prev + inv_tau * drive
        r = activate(pre, cfg)
    else:
        pre = inv_tau * drive
        r = leak * r_prev + activate(pre, cfg)
    return drive, pre, r


def step(params: NetworkParams, cfg: NetConfig, state: NetState, input_bit) -> NetState:
    """
    Advance the network one time step.

    Raises:
        StructuralError: If the state size does not match the network
        NumericOverflowError: If any resulting activity is not finite
    """
    _check_dims(params, cfg, state.r)
    s = np.asarray(input_bit, dtype=np.float64)
    _, _, r = _advance(params, cfg, state.r, s)
    if not np.all(np.isfinite(r)):
        _raise_non_finite(r)
    return NetState(r)


def rollout(params: NetworkParams, cfg: NetConfig, initial_state: NetState, inputs) -> List[NetState]:
    """Iterate step over an input sequence; returns one state per input."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise StructuralError("rollout needs at least one input")
    states: List[NetState] = []
    state = initial_state
    for t, s in enumerate(inputs):
        try:
            state = step(params, cfg, state, s)
        except NumericOverflowError as e:
            raise e.at_time(t) from e
        states.append(state)
    return states


def readout(params: NetworkParams, state: NetState, head_index: int) -> np.ndarray:
    """Two class logits of one head: w_out . r + b_out."""
    if not 0 <= head_index < len(params.heads):
        raise StructuralError(f"Invalid head index {head_index} for {len(params.heads)} heads")
    head = params.heads[head_index]
    return state.r @ head.w_out.T + head.b_out


def forward(params: NetworkParams, cfg: NetConfig, inputs: np.ndarray) -> Trajectory:
    """
    Batched rollout from r(0) = 0 keeping drives and pre-activations.

    Args:
        inputs: (B, T) array of input bits

    Returns:
        Trajectory with (B, T, n) arrays
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] == 0:
        raise StructuralError(f"forward expects a non-empty (batch, time) input array, got {inputs.shape}")
    _check_dims(params, cfg, np.zeros(params.n))
    batch, steps = inputs.shape
    n = params.n
    drive = np.empty((batch, steps, n))
    pre = np.empty((batch, steps, n))
    states = np.empty((batch, steps, n))
    r = np.zeros((batch, n))
    initial = r.copy()
    for t in range(steps):
        drive[:, t], pre[:, t], r = _advance(params, cfg, r, inputs[:, t])
        if not np.all(np.isfinite(r)):
            _raise_non_finite(r, t)
        states[:, t] = r
    return Trajectory(initial=initial, drive=drive, pre=pre, states=states)


def simulate(params: NetworkParams, cfg: NetConfig, inputs: np.ndarray, burn_in: int = 0) -> np.ndarray:
    """
    Drive one network with a long input stream and keep only activities.

    Returns:
        (T - burn_in, n) activity matrix
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    _check_dims(params, cfg, np.zeros(params.n))
    steps = inputs.shape[0]
    if burn_in >= steps:
        raise StructuralError(f"burn_in {burn_in} leaves no steps out of {steps}")
    activity = np.empty((steps - burn_in, params.n))
    r = np.zeros(params.n)
    for t in range(steps):
        _, _, r = _advance(params, cfg, r, inputs[t])
        if t >= burn_in:
            activity[t - burn_in] = r
    if not np.all(np.isfinite(activity)):
        bad_t = int(np.argwhere(~np.isfinite(activity))[0][0])
        _raise_non_finite(activity[bad_t], bad_t + burn_in)
    return activity
