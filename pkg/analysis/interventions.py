"""
Interventions on trained networks, scored by relative accuracy

    acc_rel = (acc - 0.5) / (acc_base - 0.5)

where acc_base is the unmodified network's accuracy and 0.5 is chance. Every
trial scores one long input stream (100-step burn-in, 1000 scored steps); the
base and intervened networks see the same stream within a trial. Accuracies
are measured on the maximal trained N unless another head is requested.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config_models import NetConfig, TaskConfig, TaskSpec, TrainConfig
from core.errors import IllConditionedMetricError, StructuralError
from network.leaky_rnn import NetworkParams, ReadoutHead, init_head
from training.evaluation import BURN_IN_STEPS, SCORED_STEPS, stream_accuracy
from training.optimizer import OptimizerState
from training.trainer import train_epoch
from utils.rng_streams import spawn

logger = logging.getLogger(__name__)

CHANCE = 0.5
MIN_BASE_ACCURACY = 0.55
ABLATION_FRACTION = 0.04
DEFAULT_EPSILONS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)


class InterventionKind(str, Enum):
    ABLATE = "ablate"
    PERTURB_W = "perturb_w"
    PERTURB_TAU = "perturb_tau"
    RETRAIN = "retrain"


class PerturbTarget(str, Enum):
    WEIGHTS = "weights"
    TAU = "tau"


@dataclass(frozen=True)
class TrialResult:
    trial: int
    acc_base: float
    acc: float
    acc_rel: float


@dataclass(frozen=True)
class InterventionResult:
    """Per-trial and summary relative accuracy of one intervention setting."""

    kind: InterventionKind
    parameter: str
    trials: Tuple[TrialResult, ...]
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def acc_base(self) -> float:
        return float(np.mean([t.acc_base for t in self.trials]))

    @property
    def acc(self) -> float:
        return float(np.mean([t.acc for t in self.trials]))

    @property
    def acc_rel(self) -> float:
        return float(np.mean([t.acc_rel for t in self.trials]))

    @property
    def acc_rel_std(self) -> float:
        return float(np.std([t.acc_rel for t in self.trials]))

    def to_frame(self, run_id: str = "") -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "run_id": run_id,
                    "kind": self.kind.value,
                    "param": self.parameter,
                    "trial": t.trial,
                    "acc_base": t.acc_base,
                    "acc": t.acc,
                    "acc_rel": t.acc_rel,
                }
                for t in self.trials
            ]
        )


def check_base_accuracy(acc_base: float) -> None:
    if acc_base <= MIN_BASE_ACCURACY:
        raise IllConditionedMetricError(
            f"Base accuracy {acc_base:.3f} <= {MIN_BASE_ACCURACY}; relative accuracy is ill-conditioned near chance"
        )


def relative_accuracy_value(acc: float, acc_base: float) -> float:
    """(acc - 0.5) / (acc_base - 0.5), refusing bases too close to chance."""
    check_base_accuracy(acc_base)
    return (acc - CHANCE) / (acc_base - CHANCE)


# =====================================
# NETWORK EDITS
# =====================================


def _neuron_indices(params: NetworkParams, neuron_set: Iterable[int]) -> np.ndarray:
    indices = np.unique(np.asarray(list(neuron_set), dtype=int))
    if indices.size and (indices.min() < 0 or indices.max() >= params.n):
        raise StructuralError(f"Neuron indices {indices.tolist()} out of range for n={params.n}")
    return indices


def ablate(params: NetworkParams, neuron_set: Iterable[int]) -> NetworkParams:
    """
    Silence neurons by zeroing all their incoming and outgoing weights: row and
    column of W^R, their input weight and their column in every readout.
    Biases are left untouched.
    """
    idx = _neuron_indices(params, neuron_set)
    w_rec = np.array(params.w_rec)
    w_rec[idx, :] = 0.0
    w_rec[:, idx] = 0.0
    w_in = np.array(params.w_in)
    w_in[idx] = 0.0
    heads = []
    for head in params.heads:
        w_out = np.array(head.w_out)
        w_out[:, idx] = 0.0
        heads.append(ReadoutHead(w_out=w_out, b_out=head.b_out, target_n=head.target_n))
    return params.replace(w_rec=w_rec, w_in=w_in, heads=tuple(heads))


def default_ablation_count(n: int) -> int:
    return int(math.ceil(ABLATION_FRACTION * n))


def select_by_tau(params: NetworkParams, count: Optional[int] = None, which: str = "longest") -> List[int]:
    """
    Indices of the `count` longest or shortest timescale neurons, ties broken
    by lower neuron index. count defaults to 4% of the network, rounded up.
    """
    count = default_ablation_count(params.n) if count is None else count
    if not 0 <= count <= params.n:
        raise StructuralError(f"count must be in [0, {params.n}], got {count}")
    index = np.arange(params.n)
    if which == "longest":
        order = np.lexsort((index, -params.tau))
    elif which == "shortest":
        order = np.lexsort((index, params.tau))
    else:
        raise StructuralError(f"which must be 'longest' or 'shortest', got '{which}'")
    return sorted(int(i) for i in order[:count])


def perturb(params: NetworkParams, target: PerturbTarget, epsilon: float, rng: np.random.Generator) -> NetworkParams:
    """
    Random-direction perturbation of strength epsilon relative to the norm:

        weights: W~ = W + eps * (xi / ||xi||_F) * ||W||_F
        tau:     tau~ = tau + eps * |(xi / ||xi||) * ||tau|||

    xi is standard normal; its diagonal is zeroed for weights so the
    displacement keeps W's zero diagonal and has norm exactly eps * ||W||_F.
    """
    if epsilon < 0:
        raise StructuralError(f"epsilon must be >= 0, got {epsilon}")
    target = PerturbTarget(target)
    if target == PerturbTarget.WEIGHTS:
        xi = rng.standard_normal(params.w_rec.shape)
        np.fill_diagonal(xi, 0.0)
        if epsilon == 0.0:
            return params
        shift = epsilon * xi / np.linalg.norm(xi) * np.linalg.norm(params.w_rec)
        return params.replace(w_rec=params.w_rec + shift)
    xi = rng.standard_normal(params.tau.shape)
    if epsilon == 0.0:
        return params
    shift = epsilon * np.abs(xi / np.linalg.norm(xi) * np.linalg.norm(params.tau))
    return params.replace(tau=params.tau + shift)


# =====================================
# SCORING
# =====================================


def _head_for(params: NetworkParams, target_n: Optional[int]) -> Tuple[int, int]:
    target_n = max(params.head_targets) if target_n is None else target_n
    index = params.head_index(target_n)
    if index is None:
        raise StructuralError(f"No readout head for N={target_n}; heads are {params.head_targets}")
    return index, target_n


def relative_accuracy(
    params_base: NetworkParams,
    params_intervened: Union[NetworkParams, Sequence[NetworkParams]],
    cfg: NetConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
    n_trials: int = 10,
    target_n: Optional[int] = None,
    intervened_target_n: Optional[int] = None,
    kind: InterventionKind = InterventionKind.ABLATE,
    parameter: str = "",
) -> InterventionResult:
    """
    Score an intervention over n_trials long-stream trials.

    Args:
        params_intervened: one network, or one per trial (fresh perturbation each trial)
        target_n: head scored on the base network (maximal trained N by default)
        intervened_target_n: head scored on the intervened network (target_n by default)

    Raises:
        IllConditionedMetricError: If the mean base accuracy is <= 0.55
    """
    if n_trials < 1:
        raise StructuralError(f"n_trials must be >= 1, got {n_trials}")
    if isinstance(params_intervened, NetworkParams):
        intervened = [params_intervened] * n_trials
    else:
        intervened = list(params_intervened)
        if len(intervened) != n_trials:
            raise StructuralError(f"Got {len(intervened)} intervened networks for {n_trials} trials")

    base_head, base_n = _head_for(params_base, target_n)
    base_spec = TaskSpec(kind=spec.kind, n=base_n, k=spec.k)
    other_n = base_n if intervened_target_n is None else intervened_target_n
    other_spec = TaskSpec(kind=spec.kind, n=other_n, k=spec.k)

    base_accs: List[float] = []
    accs: List[float] = []
    for trial_rng, network in zip(spawn(rng, n_trials), intervened):
        head, _ = _head_for(network, other_n)
        twin = copy.deepcopy(trial_rng)
        base_accs.append(stream_accuracy(params_base, cfg, base_spec, base_head, trial_rng, BURN_IN_STEPS, SCORED_STEPS))
        accs.append(stream_accuracy(network, cfg, other_spec, head, twin, BURN_IN_STEPS, SCORED_STEPS))

    acc_base = float(np.mean(base_accs))
    check_base_accuracy(acc_base)
    trials = tuple(
        TrialResult(trial=i, acc_base=b, acc=a, acc_rel=relative_accuracy_value(a, acc_base))
        for i, (b, a) in enumerate(zip(base_accs, accs))
    )
    result = InterventionResult(kind=InterventionKind(kind), parameter=parameter, trials=trials)
    logger.info(f"📋 {result.kind.value} {parameter}: acc_rel={result.acc_rel:.3f} ± {result.acc_rel_std:.3f}")
    return result


def ablation_result(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
    which: str = "longest",
    count: Optional[int] = None,
    n_trials: int = 10,
) -> InterventionResult:
    """Relative accuracy after ablating the longest or shortest timescale neurons."""
    neurons = select_by_tau(params, count, which)
    return relative_accuracy(
        params,
        ablate(params, neurons),
        cfg,
        spec,
        rng,
        n_trials,
        kind=InterventionKind.ABLATE,
        parameter=f"{which}:{len(neurons)}",
    )


def perturbation_sweep(
    params: NetworkParams,
    cfg: NetConfig,
    spec: TaskSpec,
    target: PerturbTarget,
    rng: np.random.Generator,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    n_trials: int = 10,
    eval_rng: Optional[np.random.Generator] = None,
) -> List[InterventionResult]:
    """
    One result per epsilon. Each trial draws a fresh perturbation direction;
    every epsilon is scored on the same evaluation streams.
    """
    target = PerturbTarget(target)
    kind = InterventionKind.PERTURB_W if target == PerturbTarget.WEIGHTS else InterventionKind.PERTURB_TAU
    eval_rng = rng if eval_rng is None else eval_rng
    eval_state = copy.deepcopy(eval_rng.bit_generator.state)
    results = []
    for epsilon, eps_rng in zip(epsilons, spawn(rng, len(epsilons))):
        networks = [perturb(params, target, epsilon, trial_rng) for trial_rng in spawn(eps_rng, n_trials)]
        stream_rng = np.random.Generator(np.random.PCG64())
        stream_rng.bit_generator.state = eval_state
        result = relative_accuracy(params, networks, cfg, spec, stream_rng, n_trials, kind=kind, parameter=repr(float(epsilon)))
        results.append(
            InterventionResult(result.kind, result.parameter, result.trials, {"xi": "fresh direction per trial"})
        )
    return results


def retrain_to_higher_n(
    params: NetworkParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    task_cfg: TaskConfig,
    new_n: int,
    rng: np.random.Generator,
    eval_rng: np.random.Generator,
    epochs: int = 20,
    n_trials: int = 10,
) -> Tuple[InterventionResult, NetworkParams]:
    """
    Re-train a network for a higher N without intermediate steps.

    The network keeps one head: its existing head for new_n if it has one,
    otherwise a fresh head. All parameters are then trained single-head style
    for exactly `epochs` epochs and scored against the base accuracy on the
    originally maximal N. Works for networks from any curriculum.

    Returns:
        (result, re-trained params); the input params are not modified
    """
    base_n = max(params.head_targets)
    if new_n < base_n:
        raise StructuralError(f"new_n={new_n} is below the trained N={base_n}")
    existing = params.head_index(new_n)
    head = params.heads[existing] if existing is not None else init_head(params.n, new_n, rng)
    retrained = params.with_heads([head])

    spec = task_cfg.spec_for(new_n)
    opt_state = OptimizerState.zeros_like(retrained)
    for epoch in range(epochs):
        retrained, opt_state, loss = train_epoch(retrained, net_cfg, train_cfg, spec, opt_state, rng, epoch=epoch)
        logger.debug(f"retrain N={new_n} epoch {epoch + 1}/{epochs}: loss={loss:.4f}")

    result = relative_accuracy(
        params,
        retrained,
        net_cfg,
        task_cfg.spec_for(base_n),
        eval_rng,
        n_trials,
        target_n=base_n,
        intervened_target_n=new_n,
        kind=InterventionKind.RETRAIN,
        parameter=str(new_n),
    )
    return result, retrained
