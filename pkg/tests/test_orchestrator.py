import shutil

import numpy as np

import pytest

from core.errors import ConfigError, MissingRunError
from experiments import orchestrator
from experiments.orchestrator import (
    CHECKPOINT_NAME,
    HISTORY_NAME,
    TRAINING_LOG_NAME,
    list_snapshots,
    load_run,
    no_curriculum_sweep,
    run_dir,
    run_experiment,
    run_seed,
)
from utils.checkpoint_storage import read_header
from utils.exports import read_csv, read_json, read_metadata


class Interrupted(Exception):
    pass


def crash_after(epochs, real):
    """run_curriculum replacement that dies right after the given epoch was checkpointed."""

    def wrapper(*args, on_epoch=None, **kwargs):
        def hook(run):
            on_epoch(run)
            if run.state.epochs_total == epochs:
                raise Interrupted

        return real(*args, on_epoch=hook, **kwargs)

    return wrapper


def artifact_bytes(config, seed):
    directory = run_dir(config, seed)
    return {name: (directory / name).read_bytes() for name in (HISTORY_NAME, TRAINING_LOG_NAME)}


def test_seed_artifacts(tiny_config):
    outcome = run_seed(tiny_config, 0)
    directory = run_dir(tiny_config, 0)
    assert outcome.ok
    assert outcome.run_dir == str(directory)
    for name in (CHECKPOINT_NAME, HISTORY_NAME, TRAINING_LOG_NAME):
        assert (directory / name).exists()

    history = read_json(directory / HISTORY_NAME)
    assert history["seed"] == 0 and history["mode"] == "multi"
    log = read_csv(directory / TRAINING_LOG_NAME)
    assert len(log) == outcome.epochs
    assert set(log["wall_seconds"]) == {0.0}
    assert read_metadata(directory / TRAINING_LOG_NAME)["seed"] == "0"
    assert read_header(directory / CHECKPOINT_NAME)["seed"] == 0
    assert load_run(tiny_config, 0).config == tiny_config


def test_rerun_is_byte_identical(tiny_config):
    run_seed(tiny_config, 1, resume=False)
    first = artifact_bytes(tiny_config, 1)
    shutil.rmtree(run_dir(tiny_config, 1))
    run_seed(tiny_config, 1, resume=False)
    assert artifact_bytes(tiny_config, 1) == first


def test_resume_after_crash_matches_uninterrupted(tiny_config, monkeypatch):
    run_seed(tiny_config, 0)
    uninterrupted = artifact_bytes(tiny_config, 0)
    shutil.rmtree(run_dir(tiny_config, 0))

    with monkeypatch.context() as patch:
        patch.setattr(orchestrator, "run_curriculum", crash_after(2, orchestrator.run_curriculum))
        with pytest.raises(Interrupted):
            run_seed(tiny_config, 0)
    assert (run_dir(tiny_config, 0) / CHECKPOINT_NAME).exists()
    assert not (run_dir(tiny_config, 0) / HISTORY_NAME).exists()

    run_seed(tiny_config, 0)
    assert artifact_bytes(tiny_config, 0) == uninterrupted


def test_resume_refuses_changed_config(tiny_config):
    run_seed(tiny_config, 0)
    changed = tiny_config.model_copy(update={"training": tiny_config.training.model_copy(update={"learning_rate": 0.02})})
    with pytest.raises(ConfigError):
        run_seed(changed, 0)
    assert run_seed(changed, 0, resume=False).ok


def test_parallel_matches_serial(tiny_config):
    run_experiment(tiny_config, workers=1, resume=False)
    serial = {seed: artifact_bytes(tiny_config, seed) for seed in tiny_config.seeds}
    shutil.rmtree(run_dir(tiny_config, 0).parent)
    outcomes = run_experiment(tiny_config, workers=2, resume=False)
    assert [o.seed for o in outcomes] == tiny_config.seeds
    assert {seed: artifact_bytes(tiny_config, seed) for seed in tiny_config.seeds} == serial


def test_load_missing_run(tiny_config):
    with pytest.raises(MissingRunError):
        load_run(tiny_config, 7)


def test_list_snapshots(tmp_path):
    snapshots = tmp_path / "snapshots"
    snapshots.mkdir()
    for name in ("step_001_N3.tlb", "step_000_N2.tlb", "notes.tlb", "step_002_N4.txt"):
        (snapshots / name).write_bytes(b"")
    assert [(step, n) for step, n, _ in list_snapshots(tmp_path)] == [(0, 2), (1, 3)]
    assert list_snapshots(tmp_path / "absent") == []


def test_no_curriculum_sweep(tiny_config):
    frame = no_curriculum_sweep(tiny_config, 0, n_values=[2, 3], max_epochs_per_n=1, stop_after_failures=5)
    assert list(frame.columns) == ["N", "solved", "epochs_to_solve", "best_accuracy"]
    assert frame["N"].tolist() == [2, 3]
    assert frame["best_accuracy"].between(0.0, 1.0).all()
    assert all(e == -1 for e, s in zip(frame["epochs_to_solve"], frame["solved"]) if not s)


def hot(config):
    training = config.training.model_copy(update={"learning_rate": 1e300, "momentum": 0.0, "grad_clip_norm": None})
    return config.model_copy(update={"training": training})


def test_diverged_seed_keeps_its_artifacts(tiny_config):
    config = hot(tiny_config)
    with np.errstate(all="ignore"):
        outcome = run_seed(config, 0)
    assert outcome.status == "diverged"
    assert outcome.message
    assert read_json(run_dir(config, 0) / HISTORY_NAME)["diverged"]
    assert load_run(config, 0).params.is_finite()
