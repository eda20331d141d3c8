"""
SGD with Nesterov momentum, followed by the parameter projections.

The gradient is taken at the lookahead point theta + mu * v (see lookahead());
the update is then

    v     <- mu * v - lr * grad
    theta <- theta + v

after which tau is clamped into [1, tau_max] and the W^R diagonal is re-zeroed.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from core.config_models import NetConfig, TrainConfig
from core.errors import StructuralError
from network.leaky_rnn import NetworkParams, ReadoutHead
from training.bptt import GradientSet

logger = logging.getLogger(__name__)

_CORE_GROUPS = ("w_rec", "w_in", "b_rec", "b_in", "tau")


@dataclass(frozen=True)
class OptimizerState:
    """Velocity per parameter group, keyed like GradientSet.groups()."""

    velocity: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "OptimizerState":
        return cls(dict(GradientSet.zeros_like(params).groups()))


def _param_groups(params: NetworkParams) -> Dict[str, np.ndarray]:
    groups = {name: getattr(params, name) for name in _CORE_GROUPS}
    for index, head in enumerate(params.heads):
        groups[f"head{index}.w_out"] = head.w_out
        groups[f"head{index}.b_out"] = head.b_out
    return groups


def _rebuild(params: NetworkParams, groups: Dict[str, np.ndarray], net_cfg: NetConfig) -> NetworkParams:
    w_rec = np.array(groups["w_rec"])
    np.fill_diagonal(w_rec, 0.0)
    tau = np.clip(groups["tau"], 1.0, net_cfg.tau_max)
    heads = [
        ReadoutHead(w_out=groups[f"head{i}.w_out"], b_out=groups[f"head{i}.b_out"], target_n=h.target_n)
        for i, h in enumerate(params.heads)
    ]
    return NetworkParams(
        w_rec=w_rec,
        w_in=groups["w_in"],
        b_rec=groups["b_rec"],
        b_in=groups["b_in"],
        tau=tau,
        heads=tuple(heads),
    )


def _check_layout(groups: Dict[str, np.ndarray], other: Dict[str, np.ndarray], what: str) -> None:
    if groups.keys() != other.keys():
        raise StructuralError(f"{what} groups {sorted(other)} do not match parameters {sorted(groups)}")
    for name, values in groups.items():
        if values.shape != other[name].shape:
            raise StructuralError(f"{what} for {name} has shape {other[name].shape}, expected {values.shape}")


def lookahead(
    params: NetworkParams, opt_state: OptimizerState, train_cfg: TrainConfig, net_cfg: NetConfig
) -> NetworkParams:
    """Parameters at theta + mu * v, projected, where the Nesterov gradient is evaluated."""
    if train_cfg.momentum == 0.0:
        return params
    groups = _param_groups(params)
    _check_layout(groups, opt_state.velocity, "Velocity")
    shifted = {name: values + train_cfg.momentum * opt_state.velocity[name] for name, values in groups.items()}
    return _rebuild(params, shifted, net_cfg)


def sgd_nesterov_step(
    params: NetworkParams,
    grads: GradientSet,
    opt_state: OptimizerState,
    train_cfg: TrainConfig,
    net_cfg: NetConfig,
    lr: Optional[float] = None,
):
    """
    One Nesterov update.

    Args:
        grads: gradient evaluated at lookahead(params, opt_state, ...)
        lr: overrides train_cfg.learning_rate when given

    Returns:
        (updated params, updated OptimizerState)
    """
    groups = _param_groups(params)
    grad_groups = dict(grads.groups())
    _check_layout(groups, grad_groups, "Gradient")
    _check_layout(groups, opt_state.velocity, "Velocity")
    step_size = train_cfg.learning_rate if lr is None else lr
    mu = train_cfg.momentum

    velocity = {}
    updated = {}
    for name, values in groups.items():
        v = mu * opt_state.velocity[name] - step_size * grad_groups[name]
        if name == "tau" and not train_cfg.train_tau:
            v = np.zeros_like(v)
        velocity[name] = v
        updated[name] = values + v
    return _rebuild(params, updated, net_cfg), OptimizerState(velocity)
