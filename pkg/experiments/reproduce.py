#!/usr/bin/env python3
"""
Figure Reproduction

Desk-scale end-to-end pipelines, one per figure id:

    fig3  max solved N and epochs-to-solve per task and curriculum (plus no
          curriculum), the curriculum ordering and accuracy on earlier N
    fig4  mean/STD of trained tau vs N; fixed-tau comparison
    fig6  network-mediated timescales vs N
    fig7  activity dimensionality and recurrent weight balance vs N
    fig8  ablation of longest vs shortest timescale neurons
    fig9  perturbation robustness and re-training to higher N
    s5    epochs-to-solve per head in all-at-once training

Each pipeline runs in three phases:
1. Runs (reuse checkpoints on disk, or train the missing seeds)
2. Analysis (CSV tables)
3. Figures and README (SVG panels, markdown summary with caveats)
"""

import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from tabulate import tabulate

from analysis.interventions import (
    ablation_result,
    perturbation_sweep,
    PerturbTarget,
    retrain_to_higher_n,
)
from analysis.popdyn import collect_activity, dimensionality, weight_balance
from analysis.timescales import Convention, network_timescale_report
from core.config_models import CurriculumMode, ExperimentConfig
from core.errors import IllConditionedMetricError, InsufficientDataError, MissingRunError
from experiments.orchestrator import list_snapshots, load_run, no_curriculum_sweep, run_dir, run_experiment
from training.curricula import forgetting_probe
from utils.checkpoint_storage import Checkpoint, load_checkpoint
from utils.config_loader import PROJECT_ROOT, save_config, validate_config
from utils.exports import write_csv
from utils import plots
from utils.rng_streams import make_rng

logger = logging.getLogger(__name__)

PRESETS_PATH = PROJECT_ROOT / "core" / "reference_data" / "figure_presets.yaml"
FIGURES = ("fig3", "fig4", "fig6", "fig7", "fig8", "fig9", "s5")


def load_presets(path: Optional[Path] = None) -> Dict[str, Any]:
    with open(path or PRESETS_PATH) as f:
        return yaml.safe_load(f)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _mean_std(frame: pd.DataFrame, by: str, value: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    grouped = frame.groupby(by)[value]
    mean = grouped.mean()
    std = grouped.std(ddof=0).fillna(0.0)
    return mean.index.to_numpy(dtype=float), mean.to_numpy(), std.to_numpy()


ORDERED_MODES = ("multi", "sliding", "single", "none")


def curriculum_ordering(max_solved: pd.DataFrame) -> pd.DataFrame:
    """
    Median max solved N per task and curriculum mode (unsolved runs count as
    N = 1), and whether multi >= sliding >= single >= none holds for the task.
    Modes without runs are skipped in the comparison.
    """
    rows = []
    for task, part in max_solved.groupby("task", sort=True):
        values = part["max_solved_n"].astype(float).fillna(1.0)
        medians = {mode: float(values[part["mode"] == mode].median()) for mode in ORDERED_MODES if (part["mode"] == mode).any()}
        present = [medians[mode] for mode in ORDERED_MODES if mode in medians]
        holds = all(a >= b for a, b in zip(present, present[1:]))
        for mode, median in medians.items():
            rows.append({"task": task, "mode": mode, "median_max_solved_n": median, "ordering_holds": holds})
    return pd.DataFrame(rows, columns=["task", "mode", "median_max_solved_n", "ordering_holds"])


class FigureReproducer:
    """Runs, analyzes and plots one figure at desk scale."""

    def __init__(
        self,
        output_dir: Path,
        runs_dir: Optional[Path] = None,
        presets: Optional[Dict[str, Any]] = None,
        train_missing: bool = True,
        workers: Optional[int] = None,
    ):
        self.output_dir = Path(output_dir)
        self.runs_dir = Path(runs_dir) if runs_dir else self.output_dir / "runs"
        self.presets = presets or load_presets()
        self.train_missing = train_missing
        self.workers = workers

    # -------------------------------------
    # Configs and runs
    # -------------------------------------

    def config_for(self, experiment: str) -> ExperimentConfig:
        overrides = self.presets["experiments"][experiment]
        data = deep_merge(self.presets["desk"], overrides)
        data = deep_merge(data, {"name": experiment, "output": {"directory": str(self.runs_dir)}})
        if self.workers is not None:
            data["workers"] = self.workers
        return validate_config(data)

    def presets_hash(self, figure: str) -> str:
        payload = json.dumps({"desk": self.presets["desk"], "figure": self.presets["figures"][figure]}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def phase1_runs(self, figure: str) -> Dict[str, List[Checkpoint]]:
        """Load every seed's final checkpoint, training missing seeds when allowed."""
        logger.info(f"📋 PHASE 1: Runs for {figure}")
        spec = self.presets["figures"][figure]
        names = list(spec.get("experiments", [])) + list(spec.get("fixed_tau", []))
        runs: Dict[str, List[Checkpoint]] = {}
        for name in names:
            config = self.config_for(name)
            config_path = self.output_dir / "configs" / f"{name}.yaml"
            save_config(config, config_path)
            missing = [seed for seed in config.seeds if not (run_dir(config, seed) / "checkpoint.tlb").exists()]
            if missing and not self.train_missing:
                raise MissingRunError(
                    f"Experiment '{name}' has no runs for seeds {missing}. "
                    f"Run `python -m cli train --config {config_path}` first, or reproduce with training enabled."
                )
            if missing:
                logger.info(f"🚀 Training '{name}' for seeds {missing}")
                run_experiment(config, seeds=missing)
            runs[name] = [load_run(config, seed) for seed in config.seeds]
        return runs

    def snapshots(self, checkpoint: Checkpoint) -> List[Tuple[int, Checkpoint]]:
        """(N, snapshot) per solved step of one run."""
        directory = run_dir(checkpoint.config, checkpoint.seed)
        return [(n, load_checkpoint(path)) for _, n, path in list_snapshots(directory)]

    # -------------------------------------
    # Analyses
    # -------------------------------------

    def analyze_fig3(self, runs, spec) -> Dict[str, pd.DataFrame]:
        solved_rows, epoch_rows = [], []
        bases: Dict[str, ExperimentConfig] = {}
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                task = ckpt.config.task.kind.value
                mode = ckpt.config.curriculum.mode.value
                bases.setdefault(task, ckpt.config)
                solved_rows.append(
                    {"curriculum": name, "task": task, "mode": mode, "seed": ckpt.seed, "max_solved_n": ckpt.curriculum.max_solved_n}
                )
                for record in ckpt.curriculum.history:
                    epoch_rows.append(
                        {"curriculum": name, "task": task, "seed": ckpt.seed, "N": max(record.targets), "epochs": record.epochs_used}
                    )
        for task, base in bases.items():
            name = f"{task}_no_curriculum"
            for seed in base.seeds:
                sweep = no_curriculum_sweep(base, seed, max_epochs_per_n=spec.get("no_curriculum_epochs", 50))
                solved = sweep[sweep["solved"]]
                solved_rows.append(
                    {
                        "curriculum": name,
                        "task": task,
                        "mode": CurriculumMode.NONE.value,
                        "seed": seed,
                        "max_solved_n": int(solved["N"].max()) if len(solved) else None,
                    }
                )
                for _, row in solved.iterrows():
                    epoch_rows.append(
                        {"curriculum": name, "task": task, "seed": seed, "N": int(row["N"]), "epochs": int(row["epochs_to_solve"])}
                    )
        max_solved = pd.DataFrame(solved_rows)
        return {
            "max_solved": max_solved,
            "epochs_to_solve": pd.DataFrame(epoch_rows, columns=["curriculum", "task", "seed", "N", "epochs"]),
            "ordering": curriculum_ordering(max_solved),
            "forgetting": self.forgetting(runs, spec),
        }

    def forgetting(self, runs, spec) -> pd.DataFrame:
        """Accuracy of each run's final network on every earlier N, through its own head or a retrained readout."""
        rows = []
        epochs = spec.get("forgetting_epochs", 10)
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                final_n = ckpt.curriculum.max_solved_n
                if final_n is None:
                    continue
                cfg = ckpt.config
                for earlier in range(2, final_n):
                    own_head = ckpt.params.head_index(earlier) is not None
                    accuracy = forgetting_probe(
                        ckpt.params,
                        cfg.network,
                        cfg.training,
                        cfg.task,
                        earlier,
                        retrain_readout_only=not own_head,
                        rng=make_rng(ckpt.seed, "probe", final_n, earlier),
                        eval_rng=make_rng(ckpt.seed, "eval", final_n, earlier),
                        max_epochs=epochs,
                    )
                    rows.append(
                        {
                            "curriculum": name,
                            "seed": ckpt.seed,
                            "final_N": final_n,
                            "N": earlier,
                            "readout": "own head" if own_head else "retrained",
                            "accuracy": accuracy,
                        }
                    )
        return pd.DataFrame(rows, columns=["curriculum", "seed", "final_N", "N", "readout", "accuracy"])

    def analyze_fig4(self, runs, spec) -> Dict[str, pd.DataFrame]:
        tau_rows, fixed_rows = [], []
        for name in spec["experiments"]:
            for ckpt in runs[name]:
                for record in ckpt.curriculum.history:
                    tau_rows.append(
                        {
                            "curriculum": name,
                            "seed": ckpt.seed,
                            "N": max(record.targets),
                            "mean_tau": record.mean_tau,
                            "std_tau": record.std_tau,
                            "mean_tau_over_k": record.mean_tau_over_k,
                        }
                    )
        for name in list(spec["experiments"]) + list(spec.get("fixed_tau", [])):
            for ckpt in runs[name]:
                fixed_rows.append({"experiment": name, "seed": ckpt.seed, "max_solved_n": ckpt.curriculum.max_solved_n})
        return {"tau_vs_n": pd.DataFrame(tau_rows), "fixed_tau": pd.DataFrame(fixed_rows)}

    def analyze_fig6(self, runs, spec) -> Dict[str, pd.DataFrame]:
        rows = []
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                for n, snap in self.snapshots(ckpt):
                    cfg = snap.config
                    try:
                        report = network_timescale_report(
                            snap.params,
                            cfg.network,
                            cfg.task.spec_for(n),
                            make_rng(ckpt.seed, "analysis", n),
                            n_trials=spec.get("timescale_trials", 10),
                            steps=spec.get("timescale_steps", 100_000),
                            convention=Convention.LEAK,
                        )
                    except InsufficientDataError as e:
                        logger.warning(f"⚠️ {name} seed {ckpt.seed} N={n}: {e}")
                        continue
                    rows.append(
                        {
                            "curriculum": name,
                            "seed": ckpt.seed,
                            "N": n,
                            "mean_tau": float(np.mean(snap.params.tau)),
                            "mean_tau_net": report.mean_tau_net,
                            "std_tau_net": report.std_tau_net,
                            "min_r2": report.min_r_squared,
                            "live_neurons": len(report.live),
                        }
                    )
        return {"tau_net_vs_n": pd.DataFrame(rows)}

    def analyze_fig7(self, runs, spec) -> Dict[str, pd.DataFrame]:
        rows = []
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                for n, snap in self.snapshots(ckpt):
                    cfg = snap.config
                    activity = collect_activity(
                        snap.params,
                        cfg.network,
                        cfg.task.spec_for(n),
                        make_rng(ckpt.seed, "analysis", n),
                        steps=spec.get("activity_steps", 10_000),
                    )
                    balance = weight_balance(snap.params)
                    rows.append(
                        {
                            "network_id": f"{name}/seed_{ckpt.seed}",
                            "curriculum": name,
                            "N": n,
                            "dimensionality": dimensionality(activity),
                            **balance.as_row(),
                        }
                    )
        return {"dimensionality_balance": pd.DataFrame(rows)}

    def analyze_fig8(self, runs, spec) -> Dict[str, pd.DataFrame]:
        rows = []
        small_n = spec.get("small_n", 3)
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                networks = {}
                small = [snap for n, snap in self.snapshots(ckpt) if n == small_n]
                if small:
                    networks[f"N={small_n}"] = small[0]
                if ckpt.curriculum.max_solved_n is not None:
                    final = self.snapshots(ckpt)
                    networks["largest N"] = final[-1][1] if final else ckpt
                for label, snap in networks.items():
                    cfg = snap.config
                    n = max(snap.params.head_targets)
                    for which in ("longest", "shortest"):
                        try:
                            result = ablation_result(
                                snap.params,
                                cfg.network,
                                cfg.task.spec_for(n),
                                make_rng(ckpt.seed, "perturb", n),
                                which=which,
                                n_trials=spec.get("trials", 10),
                            )
                        except IllConditionedMetricError as e:
                            logger.warning(f"⚠️ {name} seed {ckpt.seed} {label}: {e}")
                            continue
                        frame = result.to_frame(f"{name}/seed_{ckpt.seed}")
                        frame.insert(1, "stage", label)
                        frame.insert(2, "N", n)
                        frame.insert(3, "curriculum", name)
                        rows.append(frame)
        return {"ablation": pd.concat(rows, ignore_index=True) if rows else pd.DataFrame()}

    def analyze_fig9(self, runs, spec) -> Dict[str, pd.DataFrame]:
        perturb_rows, retrain_rows = [], []
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                if ckpt.curriculum.max_solved_n is None:
                    continue
                snaps = self.snapshots(ckpt)
                base = snaps[-1][1] if snaps else ckpt
                cfg = base.config
                n0 = max(base.params.head_targets)
                run_id = f"{name}/seed_{ckpt.seed}"
                try:
                    for target in (PerturbTarget.WEIGHTS, PerturbTarget.TAU):
                        results = perturbation_sweep(
                            base.params,
                            cfg.network,
                            cfg.task.spec_for(n0),
                            target,
                            make_rng(ckpt.seed, "perturb", n0),
                            epsilons=spec.get("epsilons", (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)),
                            n_trials=spec.get("trials", 10),
                            eval_rng=make_rng(ckpt.seed, "eval", n0),
                        )
                        for result in results:
                            frame = result.to_frame(run_id)
                            frame.insert(1, "curriculum", name)
                            perturb_rows.append(frame)
                    for new_n in range(n0 + 1, n0 + 1 + spec.get("retrain_steps", 5)):
                        result, _ = retrain_to_higher_n(
                            base.params,
                            cfg.network,
                            cfg.training,
                            cfg.task,
                            new_n,
                            make_rng(ckpt.seed, "probe", new_n),
                            make_rng(ckpt.seed, "eval", new_n),
                            epochs=spec.get("retrain_epochs", 20),
                            n_trials=spec.get("trials", 10),
                        )
                        frame = result.to_frame(run_id)
                        frame.insert(1, "curriculum", name)
                        retrain_rows.append(frame)
                except IllConditionedMetricError as e:
                    logger.warning(f"⚠️ {run_id}: {e}")
        return {
            "perturbation": pd.concat(perturb_rows, ignore_index=True) if perturb_rows else pd.DataFrame(),
            "retrain": pd.concat(retrain_rows, ignore_index=True) if retrain_rows else pd.DataFrame(),
        }

    def analyze_s5(self, runs, spec) -> Dict[str, pd.DataFrame]:
        rows = []
        for name, checkpoints in runs.items():
            for ckpt in checkpoints:
                for n, epoch in sorted(ckpt.curriculum.solve_epochs.items()):
                    rows.append({"experiment": name, "seed": ckpt.seed, "N": n, "solve_epoch": epoch})
        return {"solve_epochs": pd.DataFrame(rows, columns=["experiment", "seed", "N", "solve_epoch"])}

    # -------------------------------------
    # Figures
    # -------------------------------------

    def _lines(self, frame: pd.DataFrame, group: str, x: str, y: str, path: Path, ylabel: str, **kw) -> None:
        if frame.empty:
            return
        series = {label: _mean_std(part, x, y) for label, part in frame.groupby(group)}
        plots.mean_std_lines(series, path, x, ylabel, **kw)

    def plot(self, figure: str, tables: Dict[str, pd.DataFrame], spec: Dict[str, Any]) -> None:
        out = self.output_dir / figure
        if figure == "fig3":
            solved = tables["max_solved"].fillna({"max_solved_n": 0})
            labels = list(dict.fromkeys(solved["curriculum"]))
            means = [solved[solved["curriculum"] == c]["max_solved_n"].mean() for c in labels]
            stds = [solved[solved["curriculum"] == c]["max_solved_n"].std(ddof=0) for c in labels]
            points = {"max solved N": [solved[solved["curriculum"] == c]["max_solved_n"].tolist() for c in labels]}
            plots.grouped_bars(labels, {"max solved N": (means, stds)}, out / "max_solved_n.svg", "max solved N", points)
            self._lines(tables["epochs_to_solve"], "curriculum", "N", "epochs", out / "epochs_to_solve.svg", "epochs", logy=True)
            self._lines(tables["forgetting"], "curriculum", "N", "accuracy", out / "forgetting.svg", "accuracy on earlier N")
        elif figure == "fig4":
            self._lines(tables["tau_vs_n"], "curriculum", "N", "mean_tau", out / "mean_tau.svg", "mean tau")
            self._lines(tables["tau_vs_n"], "curriculum", "N", "std_tau", out / "std_tau.svg", "STD of tau")
            fixed = tables["fixed_tau"].fillna({"max_solved_n": 0})
            labels = list(dict.fromkeys(fixed["experiment"]))
            means = [fixed[fixed["experiment"] == e]["max_solved_n"].mean() for e in labels]
            stds = [fixed[fixed["experiment"] == e]["max_solved_n"].std(ddof=0) for e in labels]
            plots.grouped_bars(labels, {"max solved N": (means, stds)}, out / "fixed_tau.svg", "max solved N")
        elif figure == "fig6":
            self._lines(tables["tau_net_vs_n"], "curriculum", "N", "mean_tau_net", out / "tau_net.svg", "mean tau_net")
            self._lines(tables["tau_net_vs_n"], "curriculum", "N", "std_tau_net", out / "tau_net_std.svg", "STD of tau_net")
        elif figure == "fig7":
            frame = tables["dimensionality_balance"]
            if not frame.empty:
                groups = {c: (part["N"], part["dimensionality"]) for c, part in frame.groupby("curriculum")}
                plots.scatter_groups(groups, out / "dimensionality.svg", "N", "dimensionality", fit_up_to=spec.get("fit_up_to"))
                self._lines(frame, "curriculum", "N", "mean_incoming_weight", out / "balance.svg", "mean incoming weight")
        elif figure == "fig8":
            frame = tables["ablation"]
            if not frame.empty:
                stages = (f"N={spec.get('small_n', 3)}", "largest N")
                categories = [f"{stage} {which}" for stage in stages for which in ("longest", "shortest")]
                frame = frame.assign(category=frame["stage"] + " " + frame["param"].str.split(":").str[0])
                groups, points = {}, {}
                for curriculum, part in frame.groupby("curriculum"):
                    per_net = part.groupby(["category", "run_id"])["acc_rel"].mean()
                    means, stds, dots = [], [], []
                    for category in categories:
                        values = per_net[per_net.index.get_level_values(0) == category].to_numpy()
                        means.append(float(values.mean()) if values.size else 0.0)
                        stds.append(float(values.std()) if values.size else 0.0)
                        dots.append(values.tolist())
                    groups[curriculum], points[curriculum] = (means, stds), dots
                plots.grouped_bars(categories, groups, out / "ablation.svg", "relative accuracy", points)
        elif figure == "fig9":
            perturb = tables["perturbation"]
            if not perturb.empty:
                perturb = perturb.assign(epsilon=perturb["param"].astype(float))
                for kind, part in perturb.groupby("kind"):
                    self._lines(part, "curriculum", "epsilon", "acc_rel", out / f"{kind}.svg", "relative accuracy")
            retrain = tables["retrain"]
            if not retrain.empty:
                retrain = retrain.assign(new_n=retrain["param"].astype(int))
                self._lines(retrain, "curriculum", "new_n", "acc_rel", out / "retrain.svg", "relative accuracy")
        elif figure == "s5":
            self._lines(tables["solve_epochs"], "experiment", "N", "solve_epoch", out / "solve_epochs.svg", "epochs to 98%")

    def write_readme(self, figure: str, tables: Dict[str, pd.DataFrame], caveat: str) -> Path:
        lines = [f"# {figure} (desk scale)", "", caveat.strip(), ""]
        for name, frame in tables.items():
            lines.append(f"## {name}.csv")
            lines.append("")
            if frame.empty:
                lines.append("_no rows_")
            else:
                preview = frame.head(20)
                lines.append(tabulate(preview, headers="keys", tablefmt="github", showindex=False, floatfmt=".4g"))
                if len(frame) > len(preview):
                    lines.append(f"\n({len(frame) - len(preview)} more rows in the CSV)")
            lines.append("")
        path = self.output_dir / figure / "README.md"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines))
        return path

    # -------------------------------------
    # Pipeline
    # -------------------------------------

    def reproduce(self, figure: str) -> Path:
        """
        Run all phases for one figure.

        Returns:
            Path: directory holding the figure's CSV, SVG and README files

        Raises:
            MissingRunError: If runs are missing and training is disabled
        """
        if figure not in FIGURES:
            raise KeyError(f"Unknown figure '{figure}'; choose from {', '.join(FIGURES)}")
        spec = self.presets["figures"][figure]
        logger.info(f"🚀 Reproducing {figure} into {self.output_dir / figure}")
        runs = self.phase1_runs(figure)

        logger.info(f"📋 PHASE 2: Analysis for {figure}")
        analyze: Callable = getattr(self, f"analyze_{figure}")
        tables = analyze(runs, spec)
        chash = self.presets_hash(figure)
        for name, frame in tables.items():
            write_csv(frame, self.output_dir / figure / f"{name}.csv", chash, figure=figure)

        logger.info(f"📋 PHASE 3: Figures for {figure}")
        self.plot(figure, tables, spec)
        self.write_readme(figure, tables, spec.get("caveat", ""))
        logger.info(f"✅ {figure} written to {self.output_dir / figure}")
        return self.output_dir / figure


def main():
    from utils.logging_setup import configure_logging

    configure_logging()
    figure = sys.argv[1] if len(sys.argv) > 1 else "fig3"
    try:
        FigureReproducer(Path("reproductions")).reproduce(figure)
    except MissingRunError as e:
        print(f"\n❌ {e}")
        sys.exit(4)


if __name__ == "__main__":
    main()
