"""
Command-line interface.

    python -m cli train --config parity_multi.yaml --seeds 4
    python -m cli analyze runs/parity_multi/seed_0/checkpoint.tlb --analysis timescales
    python -m cli intervene runs/.../checkpoint.tlb ablate --which longest --frac 0.04
    python -m cli reproduce fig4
    python -m cli grad-check
    python -m cli info runs/.../checkpoint.tlb

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 I/O or checkpoint error, 1 any other failure.
"""

import functools
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from analysis.interventions import (
    PerturbTarget,
    ablation_result,
    default_ablation_count,
    perturbation_sweep,
    retrain_to_higher_n,
)
from analysis.popdyn import collect_activity, dimensionality, weight_balance
from analysis.timescales import Convention, network_timescale_report
from core import __version__
from core.config_models import Nonlinearity, NetConfig, TauPlacement, config_hash
from core.errors import (
    CheckpointError,
    ConfigError,
    DivergedTrainingError,
    MissingRunError,
    NumericOverflowError,
    TauLabError,
)
from experiments.orchestrator import list_snapshots, run_experiment, summarize_outcomes
from experiments.reproduce import FIGURES, FigureReproducer
from tasks.sequence_tasks import batch_to_frame, sample_batch
from training.bptt import gradient_check, random_check_instance
from utils.checkpoint_storage import Checkpoint, load_checkpoint, read_header, save_checkpoint
from utils.config_loader import load_config, validate_config
from utils.exports import write_csv, write_json
from utils.logging_setup import configure_logging
from utils import plots
from utils.rng_streams import make_rng

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

console = Console(stderr=True)


def exit_codes(command):
    """Map taulab errors onto the documented exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ConfigError as e:
            console.print(f"[red]❌ {e}[/red]")
            sys.exit(EXIT_CONFIG)
        except (DivergedTrainingError, NumericOverflowError) as e:
            console.print(f"[red]❌ {e}[/red]")
            sys.exit(EXIT_DIVERGED)
        except (CheckpointError, MissingRunError, OSError) as e:
            console.print(f"[red]❌ {e}[/red]")
            sys.exit(EXIT_IO)
        except TauLabError as e:
            console.print(f"[red]❌ {e}[/red]")
            sys.exit(1)

    return wrapper


def parse_seeds(value: Optional[str]) -> Optional[List[int]]:
    """'4' -> [0, 1, 2, 3]; '3,7' -> [3, 7]."""
    if value is None:
        return None
    try:
        if "," in value:
            return [int(v) for v in value.split(",") if v.strip()]
        return list(range(int(value)))
    except ValueError as e:
        raise ConfigError("Invalid --seeds value", {"seeds": str(e)}) from e


def parse_floats(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError("Invalid number list", {"eps": str(e)}) from e


def _out_dir(out: Optional[str], checkpoint: str, name: str) -> Path:
    return Path(out) if out else Path(checkpoint).parent / name


@click.group()
@click.version_option(__version__, prog_name="taulab")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING (default: TAULAB_LOG_LEVEL or INFO)")
def cli(log_level):
    """Train leaky RNNs with trainable timescales and analyze them."""
    configure_logging(log_level)


# =====================================
# TRAIN
# =====================================


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seeds", default=None, help="Seed count (e.g. 4) or comma-separated seed list")
@click.option("--workers", type=int, default=None, help="Parallel seeds (overrides TAULAB_WORKERS)")
@click.option("--fixed-tau", type=float, default=None, help="Freeze every tau at this shared value")
@click.option("--output-dir", default=None, help="Override output.directory")
@click.option("--no-resume", is_flag=True, help="Ignore existing checkpoints")
@exit_codes
def train(config_path, seeds, workers, fixed_tau, output_dir, no_resume):
    """Run the configured curriculum for every seed."""
    config = load_config(config_path)
    data = config.model_dump(mode="json")
    if fixed_tau is not None:
        data["training"].update({"train_tau": False, "fixed_tau_value": fixed_tau})
    if output_dir:
        data["output"]["directory"] = output_dir
    seed_list = parse_seeds(seeds)
    if seed_list is not None:
        data["seeds"] = seed_list
    config = validate_config(data)

    outcomes = run_experiment(config, workers=workers, resume=not no_resume)
    summarize_outcomes(outcomes)
    if any(o.status == "diverged" for o in outcomes):
        sys.exit(EXIT_DIVERGED)
    if not all(o.ok for o in outcomes):
        sys.exit(1)


# =====================================
# ANALYZE
# =====================================


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--analysis", type=click.Choice(["timescales", "dimensionality", "balance"]), default="timescales", show_default=True
)
@click.option("--out", default=None, help="Output directory (default: next to the checkpoint)")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the analysis input streams")
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--steps", type=int, default=100_000, show_default=True, help="Scored steps per trial")
@click.option("--snapshots", is_flag=True, help="Also analyze every step snapshot of the run")
@click.option("--plot/--no-plot", default=True, show_default=True)
@exit_codes
def analyze(checkpoint, analysis, out, seed, trials, steps, snapshots, plot):
    """Timescale, dimensionality or weight-balance analysis of a checkpoint."""
    ckpt = load_checkpoint(checkpoint)
    out_dir = _out_dir(out, checkpoint, "analysis")
    chash = config_hash(ckpt.config)
    cfg = ckpt.config
    n = max(ckpt.params.head_targets)

    if analysis == "timescales":
        report = network_timescale_report(
            ckpt.params,
            cfg.network,
            cfg.task.spec_for(n),
            make_rng(seed, "analysis"),
            n_trials=trials,
            steps=steps,
            convention=Convention.LEAK,
        )
        write_csv(report.to_frame(), out_dir / "timescales.csv", chash, convention=report.convention.value, seed=seed)
        write_json(
            {
                "mean_tau_net": report.mean_tau_net,
                "std_tau_net": report.std_tau_net,
                "live_neurons": len(report.live),
                "convention": report.convention.value,
                "n_trials": report.n_trials,
                "steps": report.steps,
                "max_lag": report.max_lag,
            },
            out_dir / "timescales_summary.json",
        )
        if plot:
            plots.histogram(
                {"tau": ckpt.params.tau, "tau_net": report.tau_net}, out_dir / "timescales.svg", "timescale (steps)"
            )
        click.echo(f"mean tau_net = {report.mean_tau_net:.4f} ± {report.std_tau_net:.4f} ({len(report.live)} live neurons)")
        return

    networks = [(n, ckpt)]
    if snapshots:
        networks = [(sn, load_checkpoint(path)) for _, sn, path in list_snapshots(Path(checkpoint).parent)] + networks
    rows = []
    for net_n, net in networks:
        balance = weight_balance(net.params)
        row = {"network_id": f"{cfg.name}/seed_{ckpt.seed}", "N": net_n, **balance.as_row()}
        if analysis == "dimensionality":
            activity = collect_activity(
                net.params, cfg.network, cfg.task.spec_for(net_n), make_rng(seed, "analysis", net_n), steps=min(steps, 10_000)
            )
            row["dimensionality"] = dimensionality(activity)
        rows.append(row)
    columns = ["network_id", "N"] + (["dimensionality"] if analysis == "dimensionality" else [])
    columns += ["mean_incoming_weight", "std_incoming_weight"]
    frame = pd.DataFrame(rows)[columns]
    write_csv(frame, out_dir / f"{analysis}.csv", chash, seed=seed)
    if plot and len(frame) > 1:
        y = "dimensionality" if analysis == "dimensionality" else "mean_incoming_weight"
        plots.scatter_groups({cfg.name: (frame["N"], frame[y])}, out_dir / f"{analysis}.svg", "N", y)
    click.echo(frame.to_string(index=False))


# =====================================
# INTERVENE
# =====================================


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("kind", type=click.Choice(["ablate", "perturb", "retrain"]))
@click.option("--which", type=click.Choice(["longest", "shortest"]), default="longest", show_default=True)
@click.option("--frac", type=float, default=None, help="Fraction of neurons to ablate (default 0.04)")
@click.option("--count", type=int, default=None, help="Number of neurons to ablate")
@click.option("--target", type=click.Choice(["weights", "tau"]), default="weights", show_default=True)
@click.option("--eps", default="0.01,0.02,0.05,0.1,0.2,0.5", show_default=True, help="Comma-separated strengths")
@click.option("--new-n", type=int, default=None, help="N to re-train for")
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=None, help="Output directory (default: next to the checkpoint)")
@exit_codes
def intervene(checkpoint, kind, which, frac, count, target, eps, new_n, epochs, trials, seed, out):
    """Ablate, perturb or re-train a trained network and score relative accuracy."""
    ckpt = load_checkpoint(checkpoint)
    cfg = ckpt.config
    out_dir = _out_dir(out, checkpoint, "interventions")
    run_id = f"{cfg.name}/seed_{ckpt.seed}"
    n0 = max(ckpt.params.head_targets)
    spec = cfg.task.spec_for(n0)

    if kind == "ablate":
        if count is None:
            count = math.ceil(frac * ckpt.params.n) if frac is not None else default_ablation_count(ckpt.params.n)
        results = [ablation_result(ckpt.params, cfg.network, spec, make_rng(seed, "eval"), which, count, trials)]
    elif kind == "perturb":
        results = perturbation_sweep(
            ckpt.params,
            cfg.network,
            spec,
            PerturbTarget(target),
            make_rng(seed, "perturb"),
            epsilons=parse_floats(eps),
            n_trials=trials,
            eval_rng=make_rng(seed, "eval"),
        )
    else:
        if new_n is None:
            raise ConfigError("retrain needs --new-n", {"new_n": "required"})
        result, retrained = retrain_to_higher_n(
            ckpt.params,
            cfg.network,
            cfg.training,
            cfg.task,
            new_n,
            make_rng(seed, "probe"),
            make_rng(seed, "eval"),
            epochs=epochs,
            n_trials=trials,
        )
        results = [result]
        copy = Checkpoint(config=cfg, seed=ckpt.seed, params=retrained, metadata={"retrained_from": str(checkpoint), "new_n": new_n})
        save_checkpoint(copy, out_dir / f"retrained_N{new_n}.tlb")

    frame = pd.concat([r.to_frame(run_id) for r in results], ignore_index=True)
    extra = {"xi": "fresh_per_trial"} if kind == "perturb" else {}
    write_csv(frame, out_dir / f"{kind}.csv", config_hash(cfg), seed=seed, **extra)

    table = Table(title=f"{kind} on {run_id} (N={n0})")
    for column in ("param", "acc_base", "acc", "acc_rel", "STD"):
        table.add_column(column)
    for r in results:
        table.add_row(r.parameter, f"{r.acc_base:.4f}", f"{r.acc:.4f}", f"{r.acc_rel:.4f}", f"{r.acc_rel_std:.4f}")
    Console().print(table)


# =====================================
# REPRODUCE / GRAD-CHECK / INFO
# =====================================


@cli.command()
@click.argument("figure", type=click.Choice(list(FIGURES)))
@click.option("--out", default="reproductions", show_default=True, help="Output directory")
@click.option("--runs-dir", default=None, help="Where runs are read from / trained into (default: <out>/runs)")
@click.option("--no-train", is_flag=True, help="Fail instead of training missing runs")
@click.option("--workers", type=int, default=None)
@exit_codes
def reproduce(figure, out, runs_dir, no_train, workers):
    """Desk-scale reproduction of one figure: CSV tables, SVG panels and a README."""
    reproducer = FigureReproducer(Path(out), Path(runs_dir) if runs_dir else None, train_missing=not no_train, workers=workers)
    path = reproducer.reproduce(figure)
    click.echo(f"✅ {figure} written to {path}")


@cli.command("grad-check")
@click.option("--instances", type=int, default=20, show_default=True, help="Random instances per configuration")
@click.option("--n", "neurons", type=int, default=6, show_default=True)
@click.option("--max-len", type=int, default=12, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@exit_codes
def grad_check(instances, neurons, max_len, tolerance, seed):
    """Check BPTT gradients against central finite differences."""
    table = Table(title="Gradient check")
    for column in ("nonlinearity", "placement", "instances", "worst rel. error", "excluded", "result"):
        table.add_column(column)
    all_passed = True
    for nonlinearity in Nonlinearity:
        for placement in TauPlacement:
            cfg = NetConfig(n=neurons, nonlinearity=nonlinearity, tau_placement=placement)
            worst, excluded, passed = 0.0, 0, True
            for i in range(instances):
                rng = make_rng(seed, "probe", i)
                params, batch = random_check_instance(rng, cfg, max_len)
                report = gradient_check(params, cfg, batch, tolerance=tolerance)
                worst = max(worst, report.worst)
                excluded += sum(report.excluded.values())
                passed = passed and report.passed
            all_passed = all_passed and passed
            table.add_row(
                nonlinearity.value, placement.value, str(instances), f"{worst:.2e}", str(excluded), "✅" if passed else "❌"
            )
    Console().print(table)
    if not all_passed:
        sys.exit(1)


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--dump-batch", type=click.Path(dir_okay=False), help="Also write a sample task batch to this CSV")
@click.option("--batch-n", type=int, help="Memory depth of the dumped batch (default: largest head)")
@click.option("--batch-size", type=int, default=4, show_default=True)
@exit_codes
def info(checkpoint, dump_batch, batch_n, batch_size):
    """Print checkpoint metadata, optionally dumping a task batch for inspection."""
    header = read_header(checkpoint)
    ckpt = load_checkpoint(checkpoint)
    table = Table(title=str(checkpoint), show_header=False)
    table.add_column("field")
    table.add_column("value")
    table.add_row("taulab version", str(header.get("taulab_version")))
    table.add_row("experiment", ckpt.config.name)
    table.add_row("config hash", config_hash(ckpt.config))
    table.add_row("seed", str(ckpt.seed))
    table.add_row("neurons", str(ckpt.params.n))
    table.add_row("heads (N)", ", ".join(str(t) for t in ckpt.params.head_targets))
    table.add_row("tau mean ± STD", f"{np.mean(ckpt.params.tau):.4f} ± {np.std(ckpt.params.tau):.4f}")
    table.add_row("tau range", f"[{np.min(ckpt.params.tau):.4f}, {np.max(ckpt.params.tau):.4f}]")
    if ckpt.curriculum is not None:
        table.add_row("curriculum", ckpt.curriculum.mode.value)
        table.add_row("epochs", str(ckpt.curriculum.epochs_total))
        table.add_row("max solved N", str(ckpt.curriculum.max_solved_n))
        table.add_row("finished", str(ckpt.curriculum.finished))
        if ckpt.curriculum.diverged:
            table.add_row("diverged", ckpt.curriculum.diverged)
    for key, value in sorted(ckpt.metadata.items()):
        table.add_row(key, str(value))
    Console().print(table)
    if dump_batch:
        n = batch_n or max(ckpt.params.head_targets)
        try:
            spec = ckpt.config.task.spec_for(n)
        except ValueError as e:
            raise ConfigError(f"Invalid --batch-n {n}: {e}") from e
        if batch_size < 1:
            raise ConfigError("--batch-size must be at least 1")
        batch = sample_batch(spec, batch_size, make_rng(ckpt.seed, "data", n))
        frame = batch_to_frame(batch)
        write_csv(frame, dump_batch, config_hash(ckpt.config), task=spec.kind.value, N=n, k=spec.k)
        console.print(f"💾 {len(frame)} batch rows written to {dump_batch}")
