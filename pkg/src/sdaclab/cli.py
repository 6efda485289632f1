"""Command line interface.

    sdaclab run --config exp.ini [--seed S] [--out DIR]
    sdaclab ablate-kc --config exp.ini --values 1,5,10,20
    sdaclab compare --configs a.ini,b.ini --out DIR
    sdaclab plotdata --in DIR --out FILE
    sdaclab validate --config exp.ini

Exit codes: 0 success, 2 configuration error, 3 failed assumption validation, 4 I/O error.
"""

import sys
from collections.abc import Callable
from pathlib import Path
from typing import TypeVar

import typer
from loguru import logger
from rich import print as rich_print
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import RunConfig
from .errors import AssumptionViolation, ConfigurationError
from .harness import ablation_kc, compare_algorithms, emit_plot_data, load_configs, run_experiment, validate

EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_IO = 4

# Configure logger
logger.configure(extra={"run": ""})
logger.remove()
logger.add(
    sys.stderr,
    format="<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:"
    "<cyan>{function}</cyan>:<cyan>{line}</cyan> | <magenta>{extra[run]}</magenta><level>{message}</level>",
    level="INFO",
)

app = typer.Typer(help=f"Sdaclab - Decentralized single-timescale actor-critic lab. Version: {__version__}")
console = Console()

T = TypeVar("T")


@app.callback(invoke_without_command=True)
def callback(ctx: typer.Context):
    """Run before any command and display help if no command is provided."""
    if ctx.invoked_subcommand is None:
        print(ctx.get_help())
        raise typer.Exit()


def _guarded(action: Callable[[], T]) -> T:
    """Run ``action``, mapping failures to exit codes."""
    try:
        return action()
    except AssumptionViolation as e:
        logger.error(str(e))
        raise typer.Exit(EXIT_ASSUMPTION) from e
    except ValueError as e:
        # ConfigurationError and the other domain errors are ValueErrors
        logger.error(f"Configuration error: {e}")
        raise typer.Exit(EXIT_CONFIG) from e
    except OSError as e:
        logger.error(f"I/O error: {e}")
        raise typer.Exit(EXIT_IO) from e


def _load(config: Path, seed: int | None = None) -> RunConfig:
    return RunConfig.from_file(config).with_run(seed=seed)


def _split(values: str) -> list[str]:
    return [v.strip() for v in values.split(",") if v.strip()]


@app.command(name="run")
def run_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (INI)"),
    seed: int | None = typer.Option(None, "--seed", "-s", help="Base seed, overriding [run] seed"),
    out: Path | None = typer.Option(None, "--out", "-o", help="Output directory, overriding [run] out"),
) -> None:
    """Run a seeded Monte Carlo experiment and write its metrics."""
    output = _guarded(lambda: run_experiment(_load(config, seed), out))
    rich_print(f"[bold green]Wrote[/bold green] {len(output.run_files)} run(s) and {output.aggregate_file}")


@app.command(name="ablate-kc")
def ablate_kc_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (INI)"),
    values: str = typer.Option("1,5,10,20", "--values", "-v", help="Comma-separated consensus periods"),
    out: Path | None = typer.Option(None, "--out", "-o", help="Output directory, overriding [run] out"),
) -> None:
    """Repeat an experiment for several consensus periods K_c."""

    def action():
        try:
            periods = [int(v) for v in _split(values)]
        except ValueError as e:
            raise ConfigurationError(f"--values must be integers, got {values!r}") from e
        return ablation_kc(_load(config), periods, out)

    table = _guarded(action)
    summary = Table(title="K_c ablation (last iteration)")
    for column in ("K_c", "samples", "communications", "running reward"):
        summary.add_column(column, justify="right")
    for kc, frame in table.groupby("K_c", sort=False):
        last = frame.iloc[-1] if len(frame) else None
        if last is not None:
            summary.add_row(
                str(kc),
                f"{last['samples']:.0f}",
                f"{last['communications']:.0f}",
                f"{last['running_reward_mean']:.6g} ± {last['running_reward_sd']:.3g}",
            )
    console.print(summary)


@app.command(name="compare")
def compare_command(
    configs: str = typer.Option(..., "--configs", help="Comma-separated configuration files"),
    out: Path = typer.Option(Path("comparison"), "--out", "-o", help="Output directory"),
) -> None:
    """Run several algorithms on the same environment and align their reward curves."""
    table = _guarded(lambda: compare_algorithms(load_configs(_split(configs)), out))
    summary = Table(title="Comparison (last iteration)")
    for column in ("series", "x_kind", "x", "running reward"):
        summary.add_column(column)
    for (series, kind), frame in table.groupby(["series", "x_kind"], sort=False):
        last = frame.iloc[-1]
        summary.add_row(series, kind, f"{last['x']:.0f}", f"{last['mean']:.6g} ± {last['sd']:.3g}")
    console.print(summary)


@app.command(name="plotdata")
def plotdata_command(
    inputs: Path = typer.Option(..., "--in", "-i", help="Directory searched for aggregate.csv files"),
    out: Path = typer.Option(..., "--out", "-o", help="Plot-ready CSV to write"),
    metric: str = typer.Option("running_reward", "--metric", "-m", help="Metric to plot"),
) -> None:
    """Collect aggregates into one long-format, plot-ready CSV."""
    table = _guarded(lambda: emit_plot_data(inputs, out, metric))
    rich_print(f"[bold green]Wrote[/bold green] {len(table)} rows to {out}")


@app.command(name="validate")
def validate_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (INI)"),
) -> None:
    """Check the standing assumptions at the initial policy."""
    checks = _guarded(lambda: validate(_load(config)))
    table = Table(title="Assumption checks at the initial policy")
    for column in ("assumption", "check", "value", "result"):
        table.add_column(column)
    for check in checks:
        if check.passed:
            result = "[green]pass[/green]"
        elif check.gating:
            result = "[red]FAIL[/red]"
        else:
            result = "[yellow]reported[/yellow]"
        table.add_row(str(check.assumption), check.name, f"{check.value:.6g}", result)
    console.print(table)
    failed = [c for c in checks if c.gating and not c.passed]
    if failed:
        logger.error(f"Assumption validation failed: {', '.join(c.name for c in failed)}")
        raise typer.Exit(EXIT_ASSUMPTION)


@app.command(name="version")
def version():
    """Show the version of Sdaclab."""
    rich_print(f"[bold green]Sdaclab[/bold green] version: [bold blue]{__version__}[/bold blue]")


def cli():
    """Run the CLI."""
    app()
