import copy

import numpy as np
import pandas as pd

from core.config_models import BudgetConfig, CurriculumMode, ExperimentConfig, NetConfig, TrainConfig
from experiments.reproduce import FigureReproducer, curriculum_ordering, load_presets
from network.leaky_rnn import init_params
from training.curricula import CurriculumState, StepRecord
from utils.checkpoint_storage import Checkpoint
from utils.exports import read_csv

SMALL_TRAINING = {"batch_size": 8, "batches_per_epoch": 2, "eval_sequences": 20, "grad_clip_norm": None}


def tiny_presets():
    presets = copy.deepcopy(load_presets())
    presets["desk"] = {
        "seeds": [0],
        "workers": 1,
        "network": {"n": 8},
        "training": dict(SMALL_TRAINING),
        "task": {"kind": "parity", "k": 1},
        "budget": {"max_epochs": 2, "max_n": 12},
        "output": {"record_wall_time": False, "save_step_snapshots": True},
    }
    presets["figures"]["fig3"].update(
        experiments=["parity_single", "parity_sliding_w1", "dms_sliding_w3"],
        no_curriculum_epochs=1,
        forgetting_epochs=1,
    )
    return presets


def solved_checkpoint(mode, heads, solved_targets):
    config = ExperimentConfig(network=NetConfig(n=8), training=TrainConfig(**SMALL_TRAINING))
    params = init_params(config.network, np.random.default_rng(0), heads)
    history = tuple(StepRecord(i, targets, 1, (0.99,) * len(targets), 1.0, 0.0, 1.0, 0.0) for i, targets in enumerate(solved_targets))
    state = CurriculumState(
        mode=mode,
        active_head_targets=tuple(heads),
        budget=BudgetConfig(),
        threshold=0.98,
        current_step=len(history),
        history=history,
        epochs_total=len(history),
    )
    return Checkpoint(config=config, seed=0, params=params, curriculum=state)


def test_reproduction_runs_are_not_clipped(tmp_path):
    reproducer = FigureReproducer(tmp_path)
    for name in reproducer.presets["experiments"]:
        assert reproducer.config_for(name).training.grad_clip_norm is None


def test_fig3_covers_every_task_and_curriculum():
    presets = load_presets()
    fig3 = presets["figures"]["fig3"]["experiments"]
    reproducer = FigureReproducer("unused", presets=presets)
    covered = {(reproducer.config_for(name).task.kind.value, reproducer.config_for(name).curriculum.mode.value) for name in fig3}
    for task in ("parity", "dms"):
        for mode in ("single", "multi", "sliding"):
            assert (task, mode) in covered
    shifts = {reproducer.config_for(name).curriculum.sliding_shift for name in fig3 if "sliding" in name}
    assert shifts == {1, 3, 5}


class TestCurriculumOrdering:
    def frame(self, medians):
        rows = []
        for task, per_mode in medians.items():
            for mode, values in per_mode.items():
                rows += [{"task": task, "mode": mode, "max_solved_n": v} for v in values]
        return pd.DataFrame(rows)

    def test_holds(self):
        ordering = curriculum_ordering(
            self.frame({"parity": {"multi": [12, 14], "sliding": [11, 12], "single": [8, 9], "none": [4, None]}})
        )
        assert ordering["mode"].tolist() == ["multi", "sliding", "single", "none"]
        assert ordering["median_max_solved_n"].tolist() == [13.0, 11.5, 8.5, 2.5]
        assert ordering["ordering_holds"].all()

    def test_violated_per_task(self):
        ordering = curriculum_ordering(
            self.frame({"dms": {"multi": [6], "single": [9]}, "parity": {"multi": [10], "single": [7]}})
        )
        holds = ordering.groupby("task")["ordering_holds"].first()
        assert not holds["dms"]
        assert holds["parity"]


def test_forgetting_uses_own_heads_or_retrained_readouts(tmp_path):
    multi = solved_checkpoint(CurriculumMode.MULTI, (2, 3, 4), [(2,), (2, 3), (2, 3, 4)])
    single = solved_checkpoint(CurriculumMode.SINGLE, (5,), [(2,), (3,), (4,)])
    frame = FigureReproducer(tmp_path).forgetting({"multi": [multi], "single": [single]}, {"forgetting_epochs": 1})
    assert frame["N"].tolist() == [2, 3, 2, 3]
    assert frame["readout"].tolist() == ["own head", "own head", "retrained", "retrained"]
    assert set(frame["final_N"]) == {4}
    assert frame["accuracy"].between(0.0, 1.0).all()


def test_fig3_end_to_end_with_sliding_and_dms(tmp_path):
    out = FigureReproducer(tmp_path, presets=tiny_presets()).reproduce("fig3")
    for name in ("max_solved.csv", "epochs_to_solve.csv", "ordering.csv", "forgetting.csv", "README.md", "max_solved_n.svg"):
        assert (out / name).exists()

    solved = read_csv(out / "max_solved.csv")
    assert set(solved["task"]) == {"parity", "dms"}
    assert set(solved["mode"]) == {"single", "sliding", "none"}
    assert set(solved["curriculum"]) >= {"parity_sliding_w1", "dms_sliding_w3", "parity_no_curriculum", "dms_no_curriculum"}

    ordering = read_csv(out / "ordering.csv")
    assert set(ordering["task"]) == {"parity", "dms"}
    assert list(ordering.columns) == ["task", "mode", "median_max_solved_n", "ordering_holds"]
