"""
Backpropagation Through Time for the Leaky RNN

Reverse-mode gradients of the summed multi-head cross-entropy loss with
respect to W^R, W^I, b^R, b^I, tau and every readout head, plus a central
finite-difference harness that checks them coordinate by coordinate.

Loss:
    L = sum over active heads h of  mean over valid steps of  CE(softmax(z_h), y_h)

Each head uses the validity mask of its own target N.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.config_models import NetConfig, TaskKind, TaskSpec, TauPlacement
from core.errors import DivergedTrainingError, NumericOverflowError, StructuralError
from network.leaky_rnn import NetworkParams, ReadoutHead, Trajectory, activate_grad, forward, init_head
from tasks.sequence_tasks import Batch, sample_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientSet:
    """Gradients with the same layout as NetworkParams."""

    w_rec: np.ndarray
    w_in: np.ndarray
    b_rec: np.ndarray
    b_in: np.ndarray
    tau: np.ndarray
    heads: Tuple[Tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientSet":
        return cls(
            w_rec=np.zeros_like(params.w_rec),
            w_in=np.zeros_like(params.w_in),
            b_rec=np.zeros_like(params.b_rec),
            b_in=np.zeros_like(params.b_in),
            tau=np.zeros_like(params.tau),
            heads=tuple((np.zeros_like(h.w_out), np.zeros_like(h.b_out)) for h in params.heads),
        )

    def groups(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield "w_rec", self.w_rec
        yield "w_in", self.w_in
        yield "b_rec", self.b_rec
        yield "b_in", self.b_in
        yield "tau", self.tau
        for index, (w_out, b_out) in enumerate(self.heads):
            yield f"head{index}.w_out", w_out
            yield f"head{index}.b_out", b_out

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for _, g in self.groups())))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            w_rec=self.w_rec * factor,
            w_in=self.w_in * factor,
            b_rec=self.b_rec * factor,
            b_in=self.b_in * factor,
            tau=self.tau * factor,
            heads=tuple((w * factor, b * factor) for w, b in self.heads),
        )

    def clipped(self, max_norm: Optional[float]) -> "GradientSet":
        if max_norm is None:
            return self
        norm = self.global_norm()
        if norm <= max_norm:
            return self
        return self.scaled(max_norm / norm)

    def readout_only(self, head_indices: Sequence[int]) -> "GradientSet":
        """Zero everything except the listed heads' readout gradients."""
        keep = set(head_indices)
        return GradientSet(
            w_rec=np.zeros_like(self.w_rec),
            w_in=np.zeros_like(self.w_in),
            b_rec=np.zeros_like(self.b_rec),
            b_in=np.zeros_like(self.b_in),
            tau=np.zeros_like(self.tau),
            heads=tuple(
                (w, b) if i in keep else (np.zeros_like(w), np.zeros_like(b))
                for i, (w, b) in enumerate(self.heads)
            ),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for _, g in self.groups())


# =====================================
# LOSS
# =====================================


def _resolve_heads(params: NetworkParams, batch: Batch, active_heads: Optional[Sequence[int]]) -> List[int]:
    active = list(range(len(params.heads))) if active_heads is None else list(active_heads)
    if not active:
        raise StructuralError("At least one active head is required")
    longest = int(batch.lengths.max())
    for index in active:
        if not 0 <= index < len(params.heads):
            raise StructuralError(f"Invalid head index {index}")
        target_n = params.heads[index].target_n
        if target_n > longest:
            raise StructuralError(f"Head for N={target_n} needs sequences of >= {target_n} digits, longest is {longest}")
    return active


def _head_terms(head: ReadoutHead, states: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Cross-entropy of one head and the gradient w.r.t. its logits."""
    count = int(mask.sum())
    if count == 0:
        raise StructuralError(f"No valid time steps for head N={head.target_n}")
    logits = states @ head.w_out.T + head.b_out
    shift = logits.max(axis=-1, keepdims=True)
    exp = np.exp(logits - shift)
    norm = exp.sum(axis=-1, keepdims=True)
    log_norm = np.log(norm) + shift
    safe_targets = np.where(mask, targets, 0)
    picked = np.take_along_axis(logits, safe_targets[..., None], axis=-1)
    ce = (log_norm - picked)[..., 0]
    loss = float(np.sum(ce * mask) / count)

    probs = exp / norm
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, safe_targets[..., None], 1.0, axis=-1)
    dlogits = (probs - onehot) * (mask[..., None] / count)
    return loss, dlogits


def multi_head_loss(
    params: NetworkParams, batch: Batch, trajectory: Trajectory, active_heads: Sequence[int]
) -> float:
    total = 0.0
    for index in active_heads:
        head = params.heads[index]
        targets, mask = batch.targets_for(head.target_n)
        loss, _ = _head_terms(head, trajectory.states, targets, mask)
        total += loss
    return total


def loss_and_grads(
    params: NetworkParams,
    cfg: NetConfig,
    batch: Batch,
    active_heads: Optional[Sequence[int]] = None,
    train_tau: bool = True,
) -> Tuple[float, GradientSet]:
    """
    Summed cross-entropy over active heads and its exact gradient.

    Args:
        params: network parameters
        cfg: network configuration
        batch: task batch; each head reads targets for its own N
        active_heads: head indices in the loss, all heads when None
        train_tau: when False the tau gradient is returned as zeros

    Returns:
        (loss, GradientSet); inactive heads receive zero gradients

    Raises:
        StructuralError: If a head cannot be scored on this batch
        DivergedTrainingError: If the loss is not finite
    """
    active = _resolve_heads(params, batch, active_heads)
    try:
        traj = forward(params, cfg, batch.inputs)
    except NumericOverflowError as e:
        raise DivergedTrainingError(-1, -1, float("nan")) from e
    states = traj.states

    loss = 0.0
    d_states = np.zeros_like(states)
    head_grads = [(np.zeros_like(h.w_out), np.zeros_like(h.b_out)) for h in params.heads]
    for index in active:
        head = params.heads[index]
        targets, mask = batch.targets_for(head.target_n)
        head_loss, dlogits = _head_terms(head, states, targets, mask)
        loss += head_loss
        head_grads[index] = (
            np.einsum("btc,btn->cn", dlogits, states),
            dlogits.sum(axis=(0, 1)),
        )
        d_states += dlogits @ head.w_out
    if not np.isfinite(loss):
        raise DivergedTrainingError(-1, -1, loss)

    inv_tau = 1.0 / params.tau
    leak = 1.0 - inv_tau
    inside = cfg.tau_placement == TauPlacement.INSIDE
    g_w = np.zeros_like(params.w_rec)
    g_in = np.zeros(params.n)
    g_b = np.zeros(params.n)
    g_tau = np.zeros(params.n)
    dr = np.zeros_like(traj.initial)
    inputs = batch.inputs
    for t in range(states.shape[1] - 1, -1, -1):
        dr = dr + d_states[:, t]
        r_prev = states[:, t - 1] if t > 0 else traj.initial
        dx = dr * activate_grad(traj.pre[:, t], cfg)
        du = dx * inv_tau
        if inside:
            g_tau += np.sum(dx * (r_prev - traj.drive[:, t]), axis=0) * inv_tau**2
            dr_prev = dx * leak
        else:
            g_tau += np.sum(dr * r_prev - dx * traj.drive[:, t], axis=0) * inv_tau**2
            dr_prev = dr * leak
        g_w += du.T @ r_prev
        g_in += du.T @ inputs[:, t]
        g_b += du.sum(axis=0)
        dr = dr_prev + du @ params.w_rec
    np.fill_diagonal(g_w, 0.0)

    def _bias(grad: np.ndarray, like: np.ndarray) -> np.ndarray:
        return grad if like.shape == grad.shape else np.array([grad.sum()])

    grads = GradientSet(
        w_rec=g_w,
        w_in=g_in,
        b_rec=_bias(g_b, params.b_rec),
        b_in=_bias(g_b.copy(), params.b_in),
        tau=g_tau if train_tau else np.zeros_like(g_tau),
        heads=tuple(head_grads),
    )
    return loss, grads


# =====================================
# FINITE-DIFFERENCE VERIFICATION
# =====================================


@dataclass
class GradCheckReport:
    """Max relative error per parameter group and the coordinates that failed."""

    tolerance: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    excluded: Dict[str, int] = field(default_factory=dict)
    failures: List[Tuple[str, Tuple[int, ...], float, float, float]] = field(default_factory=list)
    tau_block_zero: bool = False

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _perturbed(params: NetworkParams, group: str, index: Tuple[int, ...], delta: float) -> NetworkParams:
    if group.startswith("head"):
        head_no, attr = group[4:].split(".")
        heads = list(params.heads)
        head = heads[int(head_no)]
        arr = np.array(getattr(head, attr))
        arr[index] += delta
        heads[int(head_no)] = ReadoutHead(
            w_out=arr if attr == "w_out" else head.w_out,
            b_out=arr if attr == "b_out" else head.b_out,
            target_n=head.target_n,
        )
        return params.with_heads(heads)
    arr = np.array(getattr(params, group))
    arr[index] += delta
    return params.replace(**{group: arr})


def _evaluate(params: NetworkParams, cfg: NetConfig, batch: Batch, active: Sequence[int]):
    traj = forward(params, cfg, batch.inputs)
    return multi_head_loss(params, batch, traj, active), traj.pre >= 0.0


def gradient_check(
    params: NetworkParams,
    cfg: NetConfig,
    batch: Batch,
    tolerance: float = 1e-4,
    h: float = 1e-6,
    train_tau: bool = True,
    active_heads: Optional[Sequence[int]] = None,
    scale_floor: float = 1e-3,
) -> GradCheckReport:
    """
    Compare loss_and_grads against central differences for every coordinate.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
    Coordinates whose +-h evaluations put any pre-activation on different sides
    of the ReLU kink are excluded. The w_rec diagonal is structurally zero and
    is not checked. Failures are reported, not raised.
    """
    if params.n > 10 or batch.steps > 20:
        logger.warning(f"gradient_check on n={params.n}, T={batch.steps} will be slow")
    active = _resolve_heads(params, batch, active_heads)
    _, grads = loss_and_grads(params, cfg, batch, active, train_tau=train_tau)
    report = GradCheckReport(tolerance=tolerance)
    smooth = cfg.nonlinearity.value == "tanh"

    for group, analytic in grads.groups():
        if group == "tau" and not train_tau:
            report.tau_block_zero = bool(np.all(analytic == 0.0))
            report.max_rel_error[group] = 0.0
            report.checked[group] = 0
            report.excluded[group] = 0
            continue
        worst, checked, excluded = 0.0, 0, 0
        for index in np.ndindex(analytic.shape):
            if group == "w_rec" and index[0] == index[1]:
                continue
            loss_plus, branch_plus = _evaluate(_perturbed(params, group, index, h), cfg, batch, active)
            loss_minus, branch_minus = _evaluate(_perturbed(params, group, index, -h), cfg, batch, active)
            if not smooth and np.any(branch_plus != branch_minus):
                excluded += 1
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            value = float(analytic[index])
            rel = abs(value - numeric) / max(abs(value), abs(numeric), scale_floor)
            worst = max(worst, rel)
            checked += 1
            if rel > tolerance:
                report.failures.append((group, tuple(int(i) for i in index), value, numeric, rel))
        report.max_rel_error[group] = worst
        report.checked[group] = checked
        report.excluded[group] = excluded
    logger.debug(f"Gradient check worst relative error {report.worst:.3e}, {len(report.failures)} failures")
    return report


def random_check_instance(
    rng: np.random.Generator, cfg: NetConfig, max_len: int = 12, batch_size: int = 3
) -> Tuple[NetworkParams, Batch]:
    """
    Small random network and batch for gradient checking.

    Timescales are drawn in [1, 5] and biases are non-zero so every parameter
    group receives a non-trivial gradient.
    """
    n = cfg.n
    w_rec = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, n))
    np.fill_diagonal(w_rec, 0.0)
    bias_shape = n if cfg.bias_mode.value == "per_neuron" else 1
    params = NetworkParams(
        w_rec=w_rec,
        w_in=rng.normal(0.0, 1.0, size=n),
        b_rec=rng.normal(0.0, 0.3, size=bias_shape),
        b_in=rng.normal(0.0, 0.3, size=bias_shape),
        tau=rng.uniform(1.0, 5.0, size=n),
        heads=tuple(init_head(n, target, rng) for target in (2, 3)),
    )
    spec = TaskSpec(kind=TaskKind.PARITY, n=3, len_range=(3, max_len))
    return params, sample_batch(spec, batch_size, rng)
