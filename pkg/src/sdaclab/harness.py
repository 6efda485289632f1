"""Experiment runner: seeded Monte Carlo replication, persistence and reports.

An experiment directory holds ``config.ini``, one ``seed_<s>.csv`` per Monte Carlo run,
``aggregate.csv``, a sidecar ``run.log`` (the only file with wall-clock timestamps) and an
``index.html`` summary.
"""

from __future__ import annotations

import dataclasses
import functools
import multiprocessing
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jinja2
import numpy as np
import pandas as pd
from loguru import logger

from . import __version__
from .algos import (
    Diagnostics,
    NacParams,
    NoiseSpec,
    RunOptions,
    RunResult,
    run_dldac,
    run_nac,
    run_sdac_noi,
    run_sdac_re,
)
from .config import Algorithm, EnvironmentKind, EnvironmentSection, RunConfig
from .errors import ConfigurationError
from .features import FeatureSet, Radii, SoftmaxPolicy, default_features
from .mamdp import NavGridSpec, TabularMAMDP, compile_nav_grid, make_random_mamdp
from .metrics import aggregate, aggregate_columns, long_format, read_metrics, write_metrics
from .oracle import AssumptionCheck, validate_assumptions
from .schedule import ScheduleMode, StepSchedule, make_schedule
from .topology import WeightMatrix, weights_from_spec

TEMPLATE_DIR = Path(__file__).parent / "templates"
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} | {extra[run]}{message}"


@dataclasses.dataclass(frozen=True)
class Experiment:
    """Everything a run needs, resolved from a configuration."""

    config: RunConfig
    mdp: TabularMAMDP
    weights: WeightMatrix
    features: FeatureSet
    schedule: StepSchedule
    options: RunOptions


@dataclasses.dataclass(frozen=True)
class ExperimentOutput:
    """Files written by ``run_experiment``.

    Attributes:
        directory (Path): Output directory.
        run_files (list[Path]): Per-seed metrics, in seed order.
        aggregate_file (Path): Mean and standard deviation across seeds.
        aggregate (pd.DataFrame): The aggregate as a frame.

    """

    directory: Path
    run_files: list[Path]
    aggregate_file: Path
    aggregate: pd.DataFrame


def build_environment(section: EnvironmentSection) -> TabularMAMDP:
    """Build the MDP an ``[environment]`` section describes.

    Raises:
        ConfigurationError: If the section is inconsistent or the file is missing.

    """
    if section.kind is EnvironmentKind.RANDOM:
        return make_random_mamdp(
            n_agents=section.n_agents,
            n_states=section.n_states,
            action_counts=section.action_counts,
            seed=section.seed,
            r_max=section.r_max,
            gamma=section.gamma,
        )
    if section.kind is EnvironmentKind.NAV:
        spec = NavGridSpec(
            side=section.side,
            n_agents=section.n_agents,
            landmarks=section.landmarks,
            collision_penalty=section.collision_penalty,
            distance_scale=section.distance_scale,
            gamma=section.gamma,
        )
        return compile_nav_grid(spec)
    if not section.path.is_file():
        raise ConfigurationError(f"MDP file not found: {section.path}")
    return TabularMAMDP.from_json(section.path)


def build_run(config: RunConfig) -> Experiment:
    """Resolve environment, network, features, schedule and options.

    Raises:
        ConfigurationError: If a referenced spec cannot be resolved or the pieces disagree.

    """
    mdp = build_environment(config.environment)
    weights = weights_from_spec(config.topology.spec, mdp.n_agents)
    features = default_features(mdp, config.features.critic, config.features.reward, seed=config.features.seed)
    overrides = config.schedule.overrides()
    if config.schedule.mode is ScheduleMode.DLDAC:
        overrides |= config.dldac.overrides()
    schedule = make_schedule(config.schedule.mode, config.run.horizon, overrides)
    radii = None
    if config.radii.critic is not None:
        radii = Radii(critic=config.radii.critic, reward=config.radii.reward)
    options = RunOptions(
        radii=radii,
        batch_size=config.run.batch_size,
        td_at=config.run.td_at,
        diagnostics=Diagnostics(every=config.diagnostics.every, oracle=config.diagnostics.oracle),
        iid_distribution=config.run.iid_distribution,
    )
    return Experiment(config=config, mdp=mdp, weights=weights, features=features, schedule=schedule, options=options)


def run_seed(experiment: Experiment, seed: int) -> RunResult:
    """Run the configured algorithm once."""
    config = experiment.config
    run = config.run
    common = {
        "mdp": experiment.mdp,
        "weights": experiment.weights,
        "features": experiment.features,
        "schedule": experiment.schedule,
        "horizon": run.horizon,
        "sampling_mode": run.sampling,
        "seed": seed,
        "options": experiment.options,
    }
    algorithm = run.algorithm
    noise = NoiseSpec(sigma=config.noise.sigma, rounds=config.noise.rounds)
    match algorithm:
        case Algorithm.SDAC_RE | Algorithm.TDAC_RE:
            return run_sdac_re(
                consensus_period=run.consensus_period,
                actor_steps=run.actor_steps,
                critic_steps=run.critic_steps,
                **common,
            )
        case Algorithm.SDAC_NOI | Algorithm.TDAC_NOI:
            return run_sdac_noi(
                consensus_period=run.consensus_period,
                noise=noise,
                actor_steps=run.actor_steps,
                critic_steps=run.critic_steps,
                **common,
            )
        case Algorithm.NAC:
            score_bound = SoftmaxPolicy.for_mdp(experiment.mdp).score_bound
            nac = NacParams.for_horizon(run.horizon, score_bound, **config.nac.overrides())
            return run_nac(consensus_period=run.consensus_period, nac=nac, **common)
        case Algorithm.DLDAC:
            return run_dldac(noise=noise, **common)


def _run_logged(experiment: Experiment, seed: int) -> RunResult:
    with logger.contextualize(run=f"[seed {seed}] "):
        return run_seed(experiment, seed)


def _replicate(experiment: Experiment) -> list[RunResult]:
    """Run every seed, in worker processes when ``[run] workers`` is above one.

    Workers are spawned, so their log messages reach stderr but not ``run.log``; the parent
    logs the outcome of every seed.
    """
    seeds = experiment.config.seeds
    workers = min(experiment.config.run.workers, len(seeds))
    if workers == 1:
        results = [_run_logged(experiment, seed) for seed in seeds]
    else:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=context) as executor:
            results = list(executor.map(functools.partial(_run_logged, experiment), seeds))
    for result in results:
        final = result.records[-1].running_reward if result.records else float("nan")
        logger.bind(run=f"[seed {result.seed}] ").info(f"Finished with running reward {final:.6g}")
    return results


def _render_report(directory: Path, config: RunConfig, output: ExperimentOutput) -> Path:
    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader(TEMPLATE_DIR), autoescape=jinja2.select_autoescape(["html", "xml"])
    )
    frame = output.aggregate
    final = frame.iloc[-1] if len(frame) else None
    rows = []
    for path, seed in zip(output.run_files, config.seeds, strict=True):
        rows.append({"seed": seed, "href": path.name})
    html = env.get_template("report.html.j2").render(
        version=__version__,
        algorithm=config.run.algorithm.value,
        config=config.to_ini(),
        runs=rows,
        aggregate=output.aggregate_file.name,
        iterations=len(frame),
        running_reward_mean=None if final is None else float(final["running_reward_mean"]),
        running_reward_sd=None if final is None else float(final["running_reward_sd"]),
        objective=None if final is None else _last_finite(frame["objective_mean"]),
    )
    report = directory / "index.html"
    report.write_text(html, encoding="utf-8")
    return report


def _last_finite(series: pd.Series) -> float | None:
    values = series.to_numpy(dtype=float)
    finite = values[np.isfinite(values)]
    return float(finite[-1]) if finite.size else None


def run_experiment(config: RunConfig, out: Path | str | None = None) -> ExperimentOutput:
    """Run ``n_mc_runs`` seeded replications and write per-seed and aggregate metrics.

    Args:
        config (RunConfig): The experiment.
        out (Path | str | None): Output directory; ``[run] out`` when None.

    Returns:
        ExperimentOutput: Paths of the written files and the aggregate frame.

    Raises:
        ConfigurationError: If the configuration cannot be resolved.
        OSError: If the output directory is not writable (raised before any run starts).

    """
    directory = Path(out) if out is not None else config.run.out
    experiment = build_run(config)
    header = config.to_ini()

    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.ini").write_text(header, encoding="utf-8")

    sink = logger.add(directory / "run.log", level="DEBUG", format=LOG_FORMAT, mode="w", encoding="utf-8")
    try:
        with logger.contextualize(run=""):
            logger.info(f"Experiment {config.run.algorithm.value}: seeds {config.seeds}, output {directory}")
            results = _replicate(experiment)
            run_files = []
            for result in results:
                path = write_metrics(directory / f"seed_{result.seed}.csv", result.frame, header=header)
                logger.bind(run=f"[seed {result.seed}] ").debug(f"Wrote {path}")
                run_files.append(path)
            summary = aggregate([result.frame for result in results])
            aggregate_file = write_metrics(directory / "aggregate.csv", summary, header=header)
            output = ExperimentOutput(
                directory=directory, run_files=run_files, aggregate_file=aggregate_file, aggregate=summary
            )
            try:
                report = _render_report(directory, config, output)
                logger.info(f"Successfully generated report at {report}")
            except jinja2.exceptions.TemplateError as e:
                logger.error(f"Error rendering report: {e}")
    finally:
        logger.remove(sink)
    return output


def ablation_kc(config: RunConfig, values: Sequence[int], out: Path | str | None = None) -> pd.DataFrame:
    """Repeat an experiment for each consensus period with shared seeds.

    Returns a table keyed by ``(K_c, iteration)`` with the mean sample and communication counters
    and the running reward, also written to ``ablation.csv``.

    Raises:
        ConfigurationError: If ``values`` is empty.

    """
    if not values:
        raise ConfigurationError("The K_c ablation needs at least one consensus period")
    directory = Path(out) if out is not None else config.run.out
    parts = []
    for kc in values:
        output = run_experiment(config.with_run(consensus_period=int(kc)), directory / f"K_c_{kc}")
        frame = output.aggregate
        parts.append(
            pd.DataFrame(
                {
                    "K_c": int(kc),
                    "iteration": frame["iteration"],
                    "samples": frame["samples_mean"],
                    "communications": frame["communications_mean"],
                    "running_reward_mean": frame["running_reward_mean"],
                    "running_reward_sd": frame["running_reward_sd"],
                }
            )
        )
    table = pd.concat(parts, ignore_index=True)
    write_metrics(directory / "ablation.csv", table)
    logger.info(f"K_c ablation over {list(values)} written to {directory / 'ablation.csv'}")
    return table


def _series_names(configs: Sequence[RunConfig]) -> list[str]:
    names, seen = [], {}
    for config in configs:
        name = config.run.algorithm.value
        seen[name] = seen.get(name, 0) + 1
        names.append(name if seen[name] == 1 else f"{name}-{seen[name]}")
    return names


def compare_algorithms(
    configs: Sequence[RunConfig], out: Path | str, metric: str = "running_reward"
) -> pd.DataFrame:
    """Run several configurations on the same environment and align their reward curves.

    Every configuration runs into its own subdirectory; the tidy comparison (samples- and
    communications-indexed) is written to ``comparison.csv``.

    Raises:
        ConfigurationError: If fewer than two configurations are given, or they differ in
            environment, topology or seeds.

    """
    if len(configs) < 2:
        raise ConfigurationError("Comparing algorithms needs at least two configurations")
    reference = configs[0]
    for config in configs[1:]:
        if config.environment != reference.environment:
            raise ConfigurationError("Compared configurations use different environments")
        if config.topology != reference.topology:
            raise ConfigurationError("Compared configurations use different topologies")
        if config.seeds != reference.seeds:
            raise ConfigurationError("Compared configurations use different seeds")
    directory = Path(out)
    aggregates = {}
    for name, config in zip(_series_names(configs), configs, strict=True):
        aggregates[name] = run_experiment(config, directory / name).aggregate
    table = long_format(aggregates, metric)
    write_metrics(directory / "comparison.csv", table)
    return table


def _series_name(path: Path, root: Path) -> str:
    relative = path.parent.relative_to(root)
    return relative.as_posix() if relative.parts else root.name


def emit_plot_data(inputs: Path | str, out: Path | str, metric: str = "running_reward") -> pd.DataFrame:
    """Collect every ``aggregate.csv`` under ``inputs`` into one tidy plot file.

    Rows are ``(series, x_kind, x, mean, sd)`` with ``x_kind`` in ``samples`` and
    ``communications``; the series is the aggregate's directory relative to ``inputs``.

    Raises:
        SchemaError: If an aggregate lacks the columns for ``metric``.

    """
    root = Path(inputs)
    files = sorted(root.rglob("aggregate.csv"))
    aggregates = {_series_name(path, root): read_metrics(path, required=aggregate_columns(metric)) for path in files}
    table = long_format(aggregates, metric)
    write_metrics(Path(out), table)
    logger.info(f"Plot data for {len(aggregates)} series written to {out}")
    return table


def validate(config: RunConfig) -> list[AssumptionCheck]:
    """Check the standing assumptions at the initial (uniform) policy.

    The Fisher check gates only natural actor-critic configurations.
    """
    experiment = build_run(config)
    policy = SoftmaxPolicy.for_mdp(experiment.mdp)
    return validate_assumptions(
        experiment.mdp,
        policy,
        experiment.features,
        experiment.weights,
        fisher=config.run.algorithm is Algorithm.NAC,
    )


def load_configs(paths: Sequence[Path | str]) -> list[RunConfig]:
    """Read several configuration files."""
    return [RunConfig.from_file(path) for path in paths]
