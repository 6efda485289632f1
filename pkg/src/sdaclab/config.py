"""Experiment configuration.

A configuration is an INI file with flat ``key = value`` pairs in the sections
``[run]``, ``[environment]``, ``[topology]``, ``[features]``, ``[schedule]``, ``[noise]``,
``[nac]``, ``[dldac]``, ``[radii]`` and ``[diagnostics]``. Missing keys take their defaults;
``RunConfig.to_ini`` writes the fully resolved configuration back out, which is how it ends
up in every metrics header.

Example:
    [run]
    algorithm = sdac-noi
    K = 2000
    K_c = 5
    n_mc_runs = 10

    [environment]
    kind = nav
    side = 3
    n_agents = 2

    [noise]
    sigma = 0.5
    K_r = 2
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any

from .algos import NacSign, TdAt
from .errors import ConfigurationError
from .mamdp import SamplingMode
from .schedule import ScheduleMode


class Algorithm(Enum):
    """Algorithms the harness can run."""

    SDAC_RE = "sdac-re"
    SDAC_NOI = "sdac-noi"
    NAC = "nac"
    TDAC_RE = "tdac-re"
    TDAC_NOI = "tdac-noi"
    DLDAC = "dldac"

    @classmethod
    def from_str(cls, value: str) -> Algorithm:
        """Parse a configuration string.

        Raises:
            ConfigurationError: If the value does not name an algorithm.

        """
        try:
            return Algorithm(value)
        except ValueError as e:
            raise ConfigurationError(
                f"Invalid algorithm: {value!r}. Must be one of {[a.value for a in Algorithm]}"
            ) from e

    @property
    def default_schedule(self) -> ScheduleMode:
        """Schedule family used when ``[schedule] mode`` is not set."""
        if self in (Algorithm.TDAC_RE, Algorithm.TDAC_NOI):
            return ScheduleMode.TDAC
        if self is Algorithm.DLDAC:
            return ScheduleMode.DLDAC
        return ScheduleMode.SDAC_EMPIRICAL

    @property
    def noisy(self) -> bool:
        """Whether the actor learns from gossiped noisy rewards."""
        return self in (Algorithm.SDAC_NOI, Algorithm.TDAC_NOI, Algorithm.DLDAC)


class EnvironmentKind(Enum):
    """Where the MDP comes from."""

    RANDOM = "random"
    NAV = "nav"
    FILE = "file"

    @classmethod
    def from_str(cls, value: str) -> EnvironmentKind:
        """Parse a configuration string.

        Raises:
            ConfigurationError: If the value does not name an environment kind.

        """
        try:
            return EnvironmentKind(value)
        except ValueError as e:
            raise ConfigurationError(
                f"Invalid environment kind: {value!r}. Must be one of {[k.value for k in EnvironmentKind]}"
            ) from e


def _key(name: str, default: Any) -> Any:
    """Dataclass field stored under a different INI key."""
    return dataclasses.field(default=default, metadata={"key": name})


@dataclasses.dataclass(frozen=True)
class RunSection:
    """``[run]``: algorithm, loop sizes, sampling, replication and output."""

    algorithm: Algorithm = Algorithm.SDAC_RE
    horizon: int = _key("K", 1000)
    consensus_period: int = _key("K_c", 1)
    actor_steps: int = _key("C_a", 1)
    critic_steps: int = _key("C_c", 1)
    batch_size: int = 1
    td_at: TdAt = TdAt.POST
    sampling: SamplingMode = SamplingMode.MARKOVIAN
    iid_distribution: str = "stationary"
    n_mc_runs: int = 1
    seed: int = 0
    workers: int = 1
    out: Path = Path("results")

    def __post_init__(self):
        """Check counts."""
        if self.horizon < 0:
            raise ConfigurationError(f"K must be nonnegative, got {self.horizon}")
        if min(self.consensus_period, self.actor_steps, self.critic_steps, self.batch_size) < 1:
            raise ConfigurationError("K_c, C_a, C_c and batch_size must be positive")
        if self.n_mc_runs < 1:
            raise ConfigurationError(f"n_mc_runs must be at least 1, got {self.n_mc_runs}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be at least 1, got {self.workers}")
        if self.iid_distribution not in ("stationary", "visitation"):
            raise ConfigurationError(f"Invalid iid_distribution {self.iid_distribution!r}")


@dataclasses.dataclass(frozen=True)
class EnvironmentSection:
    """``[environment]``: a random tabular MDP, a navigation grid or a JSON file."""

    kind: EnvironmentKind = EnvironmentKind.RANDOM
    n_agents: int = 3
    n_states: int = 10
    actions: tuple[int, ...] = (2,)
    r_max: float = 1.0
    gamma: float = 0.95
    seed: int = 0
    side: int = 3
    landmarks: tuple[int, ...] | None = None
    collision_penalty: float = 1.0
    distance_scale: float = 1.0
    path: Path | None = None

    def __post_init__(self):
        """Check that the kind has what it needs."""
        if self.kind is EnvironmentKind.FILE and self.path is None:
            raise ConfigurationError("Environment kind 'file' needs a path")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def action_counts(self) -> tuple[int, ...]:
        """Per-agent action counts, broadcasting a single value."""
        if len(self.actions) == 1:
            return self.actions * self.n_agents
        return self.actions


@dataclasses.dataclass(frozen=True)
class TopologySection:
    """``[topology]``: ``ring``, ``complete``, ``star``, ``edges:[(0, 1), (1, 2)]`` or ``file:<path>``."""

    spec: str = "ring"


@dataclasses.dataclass(frozen=True)
class FeaturesSection:
    """``[features]``: critic and reward feature modes."""

    critic: str = "tabular"
    reward: str = "tabular"
    seed: int = 0


_STEP_KEYS = ("alpha", "beta", "eta", "p_alpha", "p_beta", "p_eta")


@dataclasses.dataclass(frozen=True)
class ScheduleSection:
    """``[schedule]``: schedule family and optional step-size overrides."""

    mode: ScheduleMode | None = None
    alpha: float | None = None
    beta: float | None = None
    eta: float | None = None
    p_alpha: float | None = None
    p_beta: float | None = None
    p_eta: float | None = None

    def overrides(self) -> dict[str, float]:
        """Step-size overrides that are set."""
        return {k: getattr(self, k) for k in _STEP_KEYS if getattr(self, k) is not None}


@dataclasses.dataclass(frozen=True)
class NoiseSection:
    """``[noise]``: multiplicative reward noise and its gossip rounds."""

    sigma: float | None = None
    rounds: int = _key("K_r", 2)


@dataclasses.dataclass(frozen=True)
class NacSection:
    """``[nac]``: direction solver; unset sizes follow the horizon."""

    inner_batch: int | None = _key("N_a", None)
    iterations: int | None = _key("K_a", None)
    rounds: int = _key("K_z", 5)
    step: float | None = None
    radius: float = 100.0
    sign: NacSign = NacSign.ASCENT

    def overrides(self) -> dict[str, Any]:
        """Settings that are set, as ``NacParams`` keyword arguments."""
        values = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        return {k: v for k, v in values.items() if v is not None}


@dataclasses.dataclass(frozen=True)
class DldacSection:
    """``[dldac]``: loop sizes of the double-loop baseline."""

    inner_steps: int = 50
    consensus_rounds: int = 10
    reward_rounds: int = 5
    critic_batch: int = 10
    actor_batch: int = 100

    def overrides(self) -> dict[str, int]:
        """Loop sizes as schedule overrides."""
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class RadiiSection:
    """``[radii]``: projection radii; both or neither."""

    critic: float | None = None
    reward: float | None = None

    def __post_init__(self):
        """Both radii are given together."""
        if (self.critic is None) != (self.reward is None):
            raise ConfigurationError("Set both [radii] critic and reward, or neither")


@dataclasses.dataclass(frozen=True)
class DiagnosticsSection:
    """``[diagnostics]``: oracle cadence."""

    oracle: bool = True
    every: int = 100

    def __post_init__(self):
        """The cadence is nonnegative."""
        if self.every < 0:
            raise ConfigurationError(f"Diagnostics cadence must be nonnegative, got {self.every}")


SECTIONS: dict[str, type] = {
    "run": RunSection,
    "environment": EnvironmentSection,
    "topology": TopologySection,
    "features": FeaturesSection,
    "schedule": ScheduleSection,
    "noise": NoiseSection,
    "nac": NacSection,
    "dldac": DldacSection,
    "radii": RadiiSection,
    "diagnostics": DiagnosticsSection,
}


def _ini_key(field: dataclasses.Field) -> str:
    return field.metadata.get("key", field.name)


def _parse(raw: str, hint: Any, where: str) -> Any:
    """Convert an INI string to the annotated type."""
    text = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (types.UnionType, typing.Union):
        if text.lower() in ("", "none"):
            return None
        (inner,) = [a for a in typing.get_args(hint) if a is not type(None)]
        return _parse(text, inner, where)
    try:
        if origin is tuple:
            element = typing.get_args(hint)[0]
            return tuple(element(part.strip()) for part in text.split(",") if part.strip())
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint.from_str(text)
        return hint(text)
    except ConfigurationError:
        raise
    except ValueError as e:
        raise ConfigurationError(f"Invalid value for {where}: {raw!r} ({e})") from e


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build_section(name: str, values: Mapping[str, str]) -> Any:
    cls = SECTIONS[name]
    hints = typing.get_type_hints(cls)
    fields = {_ini_key(f): f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigurationError(f"Unknown keys in [{name}]: {unknown}. Known keys: {sorted(fields)}")
    kwargs = {fields[k].name: _parse(v, hints[fields[k].name], f"[{name}] {k}") for k, v in values.items()}
    return cls(**kwargs)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """A fully resolved experiment configuration."""

    run: RunSection = dataclasses.field(default_factory=RunSection)
    environment: EnvironmentSection = dataclasses.field(default_factory=EnvironmentSection)
    topology: TopologySection = dataclasses.field(default_factory=TopologySection)
    features: FeaturesSection = dataclasses.field(default_factory=FeaturesSection)
    schedule: ScheduleSection = dataclasses.field(default_factory=ScheduleSection)
    noise: NoiseSection = dataclasses.field(default_factory=NoiseSection)
    nac: NacSection = dataclasses.field(default_factory=NacSection)
    dldac: DldacSection = dataclasses.field(default_factory=DldacSection)
    radii: RadiiSection = dataclasses.field(default_factory=RadiiSection)
    diagnostics: DiagnosticsSection = dataclasses.field(default_factory=DiagnosticsSection)

    def __post_init__(self):
        """Resolve defaults that depend on the algorithm and check the schedule fits it.

        Raises:
            ConfigurationError: If the schedule family contradicts the algorithm.

        """
        algorithm = self.run.algorithm
        if self.schedule.mode is None:
            object.__setattr__(self, "schedule", dataclasses.replace(self.schedule, mode=algorithm.default_schedule))
        if self.noise.sigma is None:
            sigma = 0.1 if algorithm is Algorithm.DLDAC else 0.5
            object.__setattr__(self, "noise", dataclasses.replace(self.noise, sigma=sigma))
        if self.noise.sigma < 0 or self.noise.rounds < 1:
            raise ConfigurationError("[noise] needs sigma >= 0 and K_r >= 1")
        mode = self.schedule.mode
        if (mode is ScheduleMode.DLDAC) != (algorithm is Algorithm.DLDAC):
            raise ConfigurationError(f"Algorithm {algorithm.value} cannot run on a {mode.value} schedule")
        if algorithm in (Algorithm.TDAC_RE, Algorithm.TDAC_NOI) and mode is not ScheduleMode.TDAC:
            raise ConfigurationError(f"Algorithm {algorithm.value} needs the tdac schedule, got {mode.value}")

    @classmethod
    def from_mapping(cls, document: Mapping[str, Mapping[str, str]]) -> RunConfig:
        """Build a configuration from ``{section: {key: text}}``.

        Raises:
            ConfigurationError: On unknown sections or keys and on invalid values.

        """
        unknown = sorted(set(document) - set(SECTIONS) - {configparser.DEFAULTSECT})
        if unknown:
            raise ConfigurationError(f"Unknown sections {unknown}. Known sections: {list(SECTIONS)}")
        sections = {name: _build_section(name, document[name]) for name in SECTIONS if name in document}
        return cls(**sections)

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        """Parse INI text.

        Raises:
            ConfigurationError: If the text is not valid INI or holds invalid settings.

        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigurationError(f"Malformed configuration: {e}") from e
        return cls.from_mapping({name: dict(parser[name]) for name in parser.sections()})

    @classmethod
    def from_file(cls, path: Path | str) -> RunConfig:
        """Read an INI file.

        Raises:
            ConfigurationError: If the file is missing or holds invalid settings.

        """
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Configuration file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def to_ini(self) -> str:
        """The resolved configuration as INI text, defaults included.

        Examples:
            >>> RunConfig.from_text(RunConfig().to_ini()) == RunConfig()
            True

        """
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            lines.append(f"[{name}]")
            for field in dataclasses.fields(section):
                lines.append(f"{_ini_key(field)} = {_format(getattr(section, field.name))}".rstrip())
            lines.append("")
        return "\n".join(lines)

    def with_run(self, **changes) -> RunConfig:
        """Copy with ``[run]`` fields replaced (CLI overrides such as ``seed`` and ``out``)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **changes))

    @property
    def seeds(self) -> list[int]:
        """Monte Carlo seeds ``base, base + 1, ...``."""
        return [self.run.seed + i for i in range(self.run.n_mc_runs)]
