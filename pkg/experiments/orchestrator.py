"""
Experiment Orchestrator

Runs one curriculum training per seed and writes its artifacts:

    <output.directory>/<name>/seed_<seed>/
        checkpoint.tlb          latest resumable checkpoint
        history.json            solved curriculum steps
        training_log.csv        one row per epoch
        snapshots/step_<i>_N<n>.tlb   network at every solved step

Seeds run in parallel worker processes; each seed only writes its own files.
A seed whose training diverges is recorded and the others continue.

Usage:
    python -m experiments.orchestrator config.yaml

Or programmatically:
    from experiments.orchestrator import run_experiment
    run_experiment(load_config("config.yaml"))
"""

import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from core.config_models import CurriculumConfig, CurriculumMode, ExperimentConfig, config_hash
from core.errors import CheckpointError, ConfigError, MissingRunError, TauLabError
from training.curricula import StepRecord, TrainedRun, run_curriculum
from utils.checkpoint_storage import CHECKPOINT_SUFFIX, Checkpoint, load_checkpoint, save_checkpoint
from utils.exports import write_csv, write_json
from utils.logging_setup import configure_logging
from utils.rng_streams import make_streams

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = f"checkpoint{CHECKPOINT_SUFFIX}"
HISTORY_NAME = "history.json"
TRAINING_LOG_NAME = "training_log.csv"
SNAPSHOT_DIR = "snapshots"
_SNAPSHOT_PATTERN = re.compile(r"step_(\d+)_N(\d+)" + re.escape(CHECKPOINT_SUFFIX) + "$")


@dataclass(frozen=True)
class SeedOutcome:
    """Result of one seed's run."""

    seed: int
    status: str
    max_solved_n: Optional[int]
    epochs: int
    message: str = ""
    run_dir: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "completed"


def experiment_dir(config: ExperimentConfig) -> Path:
    return Path(config.output.directory) / config.name


def run_dir(config: ExperimentConfig, seed: int) -> Path:
    return experiment_dir(config) / f"seed_{seed}"


def snapshot_path(directory: Path, record: StepRecord) -> Path:
    return directory / SNAPSHOT_DIR / f"step_{record.step:03d}_N{max(record.targets)}{CHECKPOINT_SUFFIX}"


def list_snapshots(directory: Path) -> List[Tuple[int, int, Path]]:
    """(step, N, path) of every step snapshot in a run directory, by step."""
    found = []
    for path in (directory / SNAPSHOT_DIR).glob(f"*{CHECKPOINT_SUFFIX}"):
        match = _SNAPSHOT_PATTERN.search(path.name)
        if match:
            found.append((int(match.group(1)), int(match.group(2)), path))
    return sorted(found)


# =====================================
# ARTIFACTS
# =====================================


def history_payload(config: ExperimentConfig, seed: int, run: TrainedRun) -> dict:
    return {
        "name": config.name,
        "seed": seed,
        "config_hash": config_hash(config),
        "mode": run.state.mode.value,
        "task": config.task.kind.value,
        "max_solved_n": run.max_solved_n,
        "epochs_total": run.state.epochs_total,
        "diverged": run.state.diverged,
        "solve_epochs": {str(n): e for n, e in sorted(run.state.solve_epochs.items())},
        "history": [record.to_dict() for record in run.history],
    }


def write_run_artifacts(config: ExperimentConfig, seed: int, run: TrainedRun, directory: Path) -> None:
    chash = config_hash(config)
    save_checkpoint(Checkpoint.from_run(config, seed, run), directory / CHECKPOINT_NAME)
    write_json(history_payload(config, seed, run), directory / HISTORY_NAME)
    log = pd.DataFrame([record.as_row() for record in run.epoch_log])
    write_csv(log, directory / TRAINING_LOG_NAME, chash, seed=seed, mode=run.state.mode.value)


def load_run(config: ExperimentConfig, seed: int) -> Checkpoint:
    """
    Final checkpoint of a trained seed.

    Raises:
        MissingRunError: If the seed has not been trained with this config
    """
    path = run_dir(config, seed) / CHECKPOINT_NAME
    if not path.exists():
        raise MissingRunError(
            f"No checkpoint at {path}; run `python -m cli train --config <file> --seeds {seed}` for '{config.name}' first"
        )
    return load_checkpoint(path)


# =====================================
# SINGLE SEED
# =====================================


def _resume_point(config: ExperimentConfig, seed: int, directory: Path) -> Optional[TrainedRun]:
    path = directory / CHECKPOINT_NAME
    if not path.exists():
        return None
    checkpoint = load_checkpoint(path)
    if config_hash(checkpoint.config) != config_hash(config):
        raise ConfigError(
            f"Checkpoint {path} was written with a different configuration",
            {"config_hash": f"{config_hash(checkpoint.config)} != {config_hash(config)}"},
        )
    return checkpoint.to_run()


def run_seed(config: ExperimentConfig, seed: int, resume: bool = True) -> SeedOutcome:
    """
    Train one seed, resuming from its latest checkpoint when present.

    Returns:
        SeedOutcome: status is "completed", "diverged" or "failed"
    """
    directory = run_dir(config, seed)
    try:
        previous = _resume_point(config, seed, directory) if resume else None
        if previous is not None and previous.state.finished:
            logger.info(f"✅ Seed {seed} already finished; nothing to resume")
            write_run_artifacts(config, seed, previous, directory)
            return _outcome(seed, previous, directory)

        every = config.output.checkpoint_every_epochs

        def on_epoch(run: TrainedRun) -> None:
            if every and run.state.epochs_total % every == 0:
                save_checkpoint(Checkpoint.from_run(config, seed, run), directory / CHECKPOINT_NAME)

        def on_step(run: TrainedRun, record: StepRecord) -> None:
            if config.output.save_step_snapshots:
                save_checkpoint(
                    Checkpoint.from_run(config, seed, run, step=record.step, n=max(record.targets)),
                    snapshot_path(directory, record),
                )

        run = run_curriculum(
            config.curriculum,
            config.network,
            config.training,
            config.task,
            make_streams(seed),
            config.budget,
            record_wall_time=config.output.record_wall_time,
            resume=previous,
            on_epoch=on_epoch,
            on_step=on_step,
        )
        write_run_artifacts(config, seed, run, directory)
        return _outcome(seed, run, directory)
    except (CheckpointError, ConfigError):
        raise
    except TauLabError as e:
        logger.error(f"❌ Seed {seed} failed: {e}")
        return SeedOutcome(seed, "failed", None, 0, str(e), str(directory))


def _outcome(seed: int, run: TrainedRun, directory: Path) -> SeedOutcome:
    status = "diverged" if run.state.diverged else "completed"
    return SeedOutcome(seed, status, run.max_solved_n, run.state.epochs_total, run.state.diverged or "", str(directory))


def _run_seed_job(config: ExperimentConfig, seed: int, resume: bool) -> SeedOutcome:
    if not logging.getLogger().handlers:
        configure_logging()
    return run_seed(config, seed, resume)


# =====================================
# MANY SEEDS
# =====================================


def run_experiment(
    config: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
    resume: bool = True,
) -> List[SeedOutcome]:
    """
    Train every seed, in parallel worker processes when workers > 1.

    Results depend only on (config, seed), never on scheduling.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    workers = config.workers if workers is None else workers
    logger.info(f"🚀 Experiment '{config.name}': {len(seeds)} seed(s), {workers} worker(s)")
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            futures = [pool.submit(_run_seed_job, config, seed, resume) for seed in seeds]
            outcomes = [future.result() for future in futures]
    else:
        outcomes = [run_seed(config, seed, resume) for seed in seeds]
    solved = [o.max_solved_n for o in outcomes if o.max_solved_n is not None]
    logger.info(f"📋 Experiment '{config.name}' done; max solved N per seed: {[o.max_solved_n for o in outcomes]}")
    if solved:
        logger.info(f"✅ Median max solved N: {float(np.median(solved))}")
    return outcomes


def no_curriculum_sweep(
    config: ExperimentConfig,
    seed: int,
    n_values: Optional[Sequence[int]] = None,
    max_epochs_per_n: int = 50,
    stop_after_failures: int = 2,
) -> pd.DataFrame:
    """
    Train a fresh single-head network directly on each N without a curriculum.

    Stops after `stop_after_failures` consecutive unsolved N.

    Returns:
        DataFrame with columns N, solved, epochs_to_solve, best_accuracy
    """
    n_values = list(range(2, config.budget.max_n + 1) if n_values is None else n_values)
    budget = config.budget.model_copy(update={"max_epochs": max_epochs_per_n})
    rows = []
    failures = 0
    for n in n_values:
        curriculum = CurriculumConfig(mode=CurriculumMode.NONE, target_n=n)
        run = run_curriculum(
            curriculum,
            config.network,
            config.training,
            config.task,
            make_streams(seed, n),
            budget,
            record_wall_time=False,
        )
        solved = run.max_solved_n is not None
        best = max((max(r.accuracies) for r in run.epoch_log), default=float("nan"))
        rows.append(
            {
                "N": n,
                "solved": solved,
                "epochs_to_solve": run.history[0].epochs_used if solved else -1,
                "best_accuracy": best,
            }
        )
        logger.info(f"{'✅' if solved else '❌'} no curriculum N={n}: best accuracy {best:.3f}")
        failures = 0 if solved else failures + 1
        if failures >= stop_after_failures:
            break
    return pd.DataFrame(rows, columns=["N", "solved", "epochs_to_solve", "best_accuracy"])


def summarize_outcomes(outcomes: Sequence[SeedOutcome]) -> None:
    """Print a table of seed outcomes."""
    table = Table(title="Run summary")
    for column in ("seed", "status", "max solved N", "epochs", "directory"):
        table.add_column(column)
    for o in outcomes:
        table.add_row(str(o.seed), o.status, str(o.max_solved_n), str(o.epochs), o.run_dir)
    Console().print(table)


if __name__ == "__main__":
    from utils.config_loader import load_config

    configure_logging()
    outcomes = run_experiment(load_config(sys.argv[1] if len(sys.argv) > 1 else None))
    summarize_outcomes(outcomes)
    if not all(o.ok for o in outcomes):
        print("\n❌ Some seeds did not complete. Check logs for details.")
        sys.exit(1)
    print("\n✅ All seeds completed.")
