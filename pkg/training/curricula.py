"""
Training Curricula

State machines for the five training regimes:

- none:        one head at a fixed N, trained until solved or out of budget
- single:      one head; once solved it is replaced by a fresh head for N + 1
- multi:       heads accumulate; a fresh head for N + 1 joins the summed loss
- sliding:     H heads on consecutive N; once all are solved every target moves by w
- all_at_once: heads for N in [2..N_max] trained together from the start

Advancement requires every active head to reach the accuracy threshold on
freshly sampled sequences. Recurrent weights, input weights, biases and tau
are never touched by an advance; only the head structure changes. Optimizer
momentum is reset at every advance.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config_models import (
    BudgetConfig,
    CurriculumConfig,
    CurriculumMode,
    NetConfig,
    TaskConfig,
    TrainConfig,
)
from core.errors import DivergedTrainingError, NumericOverflowError, StructuralError
from network.leaky_rnn import NetworkParams, init_head, init_params
from training.evaluation import evaluate_accuracy, evaluate_heads
from training.optimizer import OptimizerState
from training.trainer import EpochRecord, fit_heads, train_epoch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepRecord:
    """One solved curriculum step."""

    step: int
    targets: Tuple[int, ...]
    epochs_used: int
    accuracies: Tuple[float, ...]
    mean_tau: float
    std_tau: float
    mean_tau_over_k: float
    wall_seconds: float

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["targets"] = list(self.targets)
        data["accuracies"] = list(self.accuracies)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "StepRecord":
        return cls(
            step=int(data["step"]),
            targets=tuple(int(n) for n in data["targets"]),
            epochs_used=int(data["epochs_used"]),
            accuracies=tuple(float(a) for a in data["accuracies"]),
            mean_tau=float(data["mean_tau"]),
            std_tau=float(data["std_tau"]),
            mean_tau_over_k=float(data["mean_tau_over_k"]),
            wall_seconds=float(data["wall_seconds"]),
        )


@dataclass(frozen=True)
class CurriculumState:
    """Bookkeeping of one curriculum run."""

    mode: CurriculumMode
    active_head_targets: Tuple[int, ...]
    budget: BudgetConfig
    threshold: float
    current_step: int = 0
    history: Tuple[StepRecord, ...] = ()
    sliding_heads: int = 10
    sliding_shift: int = 1
    all_at_once_max_n: int = 20
    epochs_total: int = 0
    step_start_epoch: int = 0
    wall_seconds: float = 0.0
    solve_epochs: Dict[int, int] = field(default_factory=dict)
    finished: bool = False
    diverged: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "mode": self.mode.value,
            "active_head_targets": list(self.active_head_targets),
            "budget": self.budget.model_dump(mode="json"),
            "threshold": self.threshold,
            "current_step": self.current_step,
            "history": [record.to_dict() for record in self.history],
            "sliding_heads": self.sliding_heads,
            "sliding_shift": self.sliding_shift,
            "all_at_once_max_n": self.all_at_once_max_n,
            "epochs_total": self.epochs_total,
            "step_start_epoch": self.step_start_epoch,
            "wall_seconds": self.wall_seconds,
            "solve_epochs": {str(n): e for n, e in sorted(self.solve_epochs.items())},
            "finished": self.finished,
            "diverged": self.diverged,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "CurriculumState":
        return cls(
            mode=CurriculumMode(data["mode"]),
            active_head_targets=tuple(int(n) for n in data["active_head_targets"]),
            budget=BudgetConfig.model_validate(data["budget"]),
            threshold=float(data["threshold"]),
            current_step=int(data["current_step"]),
            history=tuple(StepRecord.from_dict(r) for r in data["history"]),
            sliding_heads=int(data["sliding_heads"]),
            sliding_shift=int(data["sliding_shift"]),
            all_at_once_max_n=int(data["all_at_once_max_n"]),
            epochs_total=int(data["epochs_total"]),
            step_start_epoch=int(data["step_start_epoch"]),
            wall_seconds=float(data["wall_seconds"]),
            solve_epochs={int(n): int(e) for n, e in dict(data["solve_epochs"]).items()},
            finished=bool(data["finished"]),
            diverged=data.get("diverged"),
        )

    @property
    def max_solved_n(self) -> Optional[int]:
        """Largest N solved with all then-active heads at threshold; None if nothing solved."""
        if self.mode == CurriculumMode.ALL_AT_ONCE:
            solved = None
            for n in range(2, self.all_at_once_max_n + 1):
                if n not in self.solve_epochs:
                    break
                solved = n
            return solved
        if not self.history:
            return None
        return max(max(record.targets) for record in self.history)


def initial_targets(cfg: CurriculumConfig) -> Tuple[int, ...]:
    if cfg.mode == CurriculumMode.NONE:
        return (cfg.target_n,)
    if cfg.mode == CurriculumMode.SLIDING:
        return tuple(range(cfg.start_n, cfg.start_n + cfg.sliding_heads))
    if cfg.mode == CurriculumMode.ALL_AT_ONCE:
        return tuple(range(2, cfg.all_at_once_max_n + 1))
    return (cfg.start_n,)


def init_state(cfg: CurriculumConfig, budget: BudgetConfig, threshold: float) -> CurriculumState:
    return CurriculumState(
        mode=cfg.mode,
        active_head_targets=initial_targets(cfg),
        budget=budget,
        threshold=threshold,
        sliding_heads=cfg.sliding_heads,
        sliding_shift=cfg.sliding_shift,
        all_at_once_max_n=cfg.all_at_once_max_n,
    )


def tau_stats(params: NetworkParams, k: int = 1) -> Tuple[float, float, float]:
    mean = float(np.mean(params.tau))
    return mean, float(np.std(params.tau)), mean / k


def record_solves(state: CurriculumState, accuracies: Sequence[float]) -> CurriculumState:
    """Note the first epoch at which each head reached the threshold."""
    solve_epochs = dict(state.solve_epochs)
    for target, accuracy in zip(state.active_head_targets, accuracies):
        if accuracy >= state.threshold and target not in solve_epochs:
            solve_epochs[target] = state.epochs_total
    return replace(state, solve_epochs=solve_epochs)


def advance(
    state: CurriculumState,
    params: NetworkParams,
    accuracies: Sequence[float],
    rng: Optional[np.random.Generator] = None,
    k: int = 1,
    wall_seconds: float = 0.0,
) -> Tuple[CurriculumState, NetworkParams]:
    """
    Apply the curriculum transition if every active head is at threshold.

    Args:
        accuracies: one value per active head, in head order
        rng: source for fresh readout heads
        k: hold factor, for the tau/k statistic
        wall_seconds: elapsed wall time to record

    Returns:
        (state', params'); both unchanged when the guard fails or the run is finished
    """
    if state.finished:
        return state, params
    if len(accuracies) != len(state.active_head_targets):
        raise StructuralError(
            f"Got {len(accuracies)} accuracies for {len(state.active_head_targets)} active heads"
        )
    if list(params.head_targets) != list(state.active_head_targets):
        raise StructuralError(f"Network heads {params.head_targets} differ from curriculum {state.active_head_targets}")
    if min(accuracies) < state.threshold:
        return state, params

    mean_tau, std_tau, tau_over_k = tau_stats(params, k)
    record = StepRecord(
        step=state.current_step,
        targets=state.active_head_targets,
        epochs_used=state.epochs_total - state.step_start_epoch,
        accuracies=tuple(float(a) for a in accuracies),
        mean_tau=mean_tau,
        std_tau=std_tau,
        mean_tau_over_k=tau_over_k,
        wall_seconds=wall_seconds,
    )
    solved = replace(
        state,
        history=state.history + (record,),
        current_step=state.current_step + 1,
        step_start_epoch=state.epochs_total,
    )
    largest = max(state.active_head_targets)
    logger.info(f"✅ {state.mode.value}: solved N={list(state.active_head_targets)} after {record.epochs_used} epochs")

    if state.mode in (CurriculumMode.NONE, CurriculumMode.ALL_AT_ONCE) or largest >= state.budget.max_n:
        return replace(solved, finished=True), params
    if rng is None:
        raise StructuralError("advance needs an rng to initialize new readout heads")

    if state.mode == CurriculumMode.SINGLE:
        heads = [init_head(params.n, largest + 1, rng)]
    elif state.mode == CurriculumMode.MULTI:
        heads = list(params.heads) + [init_head(params.n, largest + 1, rng)]
    else:
        shifted = [target + state.sliding_shift for target in state.active_head_targets]
        kept = {head.target_n: head for head in params.heads}
        heads = [kept[t] if t in kept else init_head(params.n, t, rng) for t in shifted]
    new_params = params.with_heads(heads)
    return replace(solved, active_head_targets=tuple(new_params.head_targets)), new_params


# =====================================
# CURRICULUM RUN
# =====================================


@dataclass
class TrainedRun:
    """Final parameters and bookkeeping of a curriculum run."""

    params: NetworkParams
    state: CurriculumState
    opt_state: OptimizerState
    epoch_log: List[EpochRecord]
    streams: Dict[str, np.random.Generator]

    @property
    def history(self) -> Tuple[StepRecord, ...]:
        return self.state.history

    @property
    def max_solved_n(self) -> Optional[int]:
        return self.state.max_solved_n


EpochCallback = Callable[[TrainedRun], None]
StepCallback = Callable[[TrainedRun, StepRecord], None]


def run_curriculum(
    curriculum_cfg: CurriculumConfig,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    task_cfg: TaskConfig,
    streams: Dict[str, np.random.Generator],
    budget: BudgetConfig,
    record_wall_time: bool = True,
    resume: Optional[TrainedRun] = None,
    on_epoch: Optional[EpochCallback] = None,
    on_step: Optional[StepCallback] = None,
) -> TrainedRun:
    """
    Train epochs, evaluate, advance; repeat until the budget or max N is reached.

    Args:
        streams: named generators ("init", "data", "eval") owned by this run
        record_wall_time: when False all wall-clock fields are 0.0 and the
            wall-time budget is ignored, making runs byte-reproducible
        resume: a previously checkpointed run to continue
        on_epoch: called after every epoch (checkpointing)
        on_step: called after every solved curriculum step (snapshots)

    Returns:
        TrainedRun; a diverged run is returned with state.diverged set
    """
    if resume is not None:
        run = resume
        logger.info(f"🔄 Resuming {run.state.mode.value} run at epoch {run.state.epochs_total}")
    else:
        state = init_state(curriculum_cfg, budget, train_cfg.accuracy_threshold)
        params = init_params(
            net_cfg, streams["init"], state.active_head_targets, fixed_tau=train_cfg.fixed_tau_value
        )
        run = TrainedRun(params, state, OptimizerState.zeros_like(params), [], streams)
        logger.info(f"🚀 Starting {state.mode.value} curriculum on {task_cfg.kind.value}, heads {list(state.active_head_targets)}")

    streams = run.streams

    clock_origin = time.perf_counter() - run.state.wall_seconds
    while not run.state.finished and run.state.epochs_total < budget.max_epochs:
        elapsed = time.perf_counter() - clock_origin if record_wall_time else 0.0
        if record_wall_time and budget.max_wall_seconds is not None and elapsed >= budget.max_wall_seconds:
            logger.info(f"⏱️ Wall-time budget of {budget.max_wall_seconds}s reached")
            break

        state = run.state
        spec = task_cfg.spec_for(max(state.active_head_targets))
        try:
            params, opt_state, loss = train_epoch(
                run.params, net_cfg, train_cfg, spec, run.opt_state, streams["data"], epoch=state.epochs_total
            )
        except DivergedTrainingError as e:
            logger.error(f"❌ {e}")
            run.state = replace(state, diverged=str(e), finished=True)
            break

        heads = list(range(len(params.heads)))
        try:
            accuracies = evaluate_heads(params, net_cfg, spec, heads, train_cfg.eval_sequences, streams["eval"])
        except NumericOverflowError as e:
            logger.error(f"❌ Evaluation after epoch {state.epochs_total} overflowed: {e}")
            run.state = replace(state, diverged=str(DivergedTrainingError(state.epochs_total, -1, loss)), finished=True)
            break
        elapsed = time.perf_counter() - clock_origin if record_wall_time else 0.0
        state = replace(state, epochs_total=state.epochs_total + 1, wall_seconds=elapsed)
        mean_tau, std_tau, _ = tau_stats(params, task_cfg.k)
        run.epoch_log.append(
            EpochRecord(
                epoch=state.epochs_total,
                head_targets=tuple(params.head_targets),
                loss=loss,
                accuracies=tuple(accuracies),
                mean_tau=mean_tau,
                std_tau=std_tau,
                wall_seconds=elapsed,
            )
        )
        logger.debug(f"epoch {state.epochs_total}: loss={loss:.4f} acc={[round(a, 3) for a in accuracies]}")

        if state.mode == CurriculumMode.ALL_AT_ONCE:
            state = record_solves(state, accuracies)
        new_state, new_params = advance(state, params, accuracies, streams["init"], task_cfg.k, elapsed)
        solved_step = len(new_state.history) > len(state.history)
        if solved_step:
            opt_state = OptimizerState.zeros_like(new_params)
        run.params, run.state, run.opt_state = new_params, new_state, opt_state
        if solved_step and on_step is not None:
            on_step(TrainedRun(params, new_state, opt_state, run.epoch_log, streams), new_state.history[-1])
        if on_epoch is not None:
            on_epoch(run)

    logger.info(
        f"📋 {run.state.mode.value} run ended after {run.state.epochs_total} epochs, max solved N={run.max_solved_n}"
    )
    return run


# =====================================
# FORGETTING PROBE
# =====================================


def forgetting_probe(
    params: NetworkParams,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    task_cfg: TaskConfig,
    earlier_n: int,
    retrain_readout_only: bool,
    rng: np.random.Generator,
    eval_rng: np.random.Generator,
    max_epochs: int = 20,
    use_existing_head: bool = True,
) -> float:
    """
    Accuracy of a trained network on an earlier N.

    An existing head for earlier_n is used as-is unless retraining is requested
    or use_existing_head is False; otherwise a fresh head is attached and, with
    retrain_readout_only, only that readout is trained (recurrent part frozen)
    until threshold or max_epochs.
    """
    spec = task_cfg.spec_for(earlier_n)
    existing = params.head_index(earlier_n)
    if existing is not None and use_existing_head and not retrain_readout_only:
        return evaluate_accuracy(params, net_cfg, spec, existing, train_cfg.eval_sequences, eval_rng)

    probe = params.with_heads([init_head(params.n, earlier_n, rng)])
    if retrain_readout_only:
        probe, _, epochs = fit_heads(
            probe, net_cfg, train_cfg, spec, rng, eval_rng, max_epochs, readout_only=True
        )
        logger.info(f"🔍 Readout for N={earlier_n} retrained for {epochs} epochs")
    return evaluate_accuracy(probe, net_cfg, spec, 0, train_cfg.eval_sequences, eval_rng)
