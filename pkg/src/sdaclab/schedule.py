"""Step-size schedules for the actor, the critic and the reward estimator."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping
from enum import Enum

from .errors import ConfigurationError


class ScheduleMode(Enum):
    """Available schedule families."""

    SDAC_THEORY = "sdac-theory"
    SDAC_EMPIRICAL = "sdac-empirical"
    TDAC = "tdac"
    DLDAC = "dldac"

    @classmethod
    def from_str(cls, value: str) -> ScheduleMode:
        """Parse a configuration string.

        Raises:
            ConfigurationError: If the value does not name a schedule.

        """
        try:
            return ScheduleMode(value)
        except ValueError as e:
            raise ConfigurationError(
                f"Invalid schedule mode: {value!r}. Must be one of {[m.value for m in ScheduleMode]}"
            ) from e

    @property
    def single_timescale(self) -> bool:
        """Whether all three step sizes must decay at the same rate."""
        return self in (ScheduleMode.SDAC_THEORY, ScheduleMode.SDAC_EMPIRICAL)


@dataclasses.dataclass(frozen=True)
class DoubleLoop:
    """Loop structure of the double-loop baseline.

    Attributes:
        inner_steps (int): Critic steps per actor step (T_c).
        consensus_rounds (int): Critic gossip rounds after the inner loop (T_c').
        reward_rounds (int): Gossip rounds of the noisy reward batch (T').
        critic_batch (int): Transitions per inner critic step (N_c).
        actor_batch (int): Transitions per actor step (N).

    """

    inner_steps: int = 50
    consensus_rounds: int = 10
    reward_rounds: int = 5
    critic_batch: int = 10
    actor_batch: int = 100

    def __post_init__(self):
        """All loop sizes must be positive."""
        for field in dataclasses.fields(self):
            if getattr(self, field.name) < 1:
                raise ConfigurationError(f"Double-loop parameter {field.name} must be positive")

    @property
    def samples_per_iteration(self) -> int:
        """``T_c * N_c + N``."""
        return self.inner_steps * self.critic_batch + self.actor_batch

    @property
    def communications_per_iteration(self) -> int:
        """``T_c' + T'``."""
        return self.consensus_rounds + self.reward_rounds


@dataclasses.dataclass(frozen=True)
class StepSchedule:
    """Resolved step sizes ``(alpha_k, beta_k, eta_k)``.

    Decaying modes use ``base * (k + 1) ** -p``; ``sdac-theory`` uses ``base / sqrt(K)``
    for every ``k``; ``dldac`` uses constant bases.
    """

    mode: ScheduleMode
    horizon: int
    alpha: float
    beta: float
    eta: float
    p_alpha: float = 0.0
    p_beta: float = 0.0
    p_eta: float = 0.0
    loop: DoubleLoop | None = None

    def __post_init__(self):
        """Enforce the timescale contract of the mode.

        Raises:
            ConfigurationError: On negative bases or exponents that break the mode's contract.

        """
        if min(self.alpha, self.beta, self.eta) < 0:
            raise ConfigurationError("Step-size bases must be nonnegative")
        if self.horizon < 0:
            raise ConfigurationError(f"Horizon must be nonnegative, got {self.horizon}")
        if self.mode.single_timescale and not self.p_alpha == self.p_beta == self.p_eta:
            raise ConfigurationError(
                f"Single-timescale schedules need equal exponents, got {self.p_alpha}, {self.p_beta}, {self.p_eta}"
            )
        if self.mode is ScheduleMode.TDAC and not self.p_alpha > self.p_beta:
            raise ConfigurationError(f"Two-timescale schedules need p_alpha > p_beta, got {self.p_alpha}")
        if self.mode is ScheduleMode.DLDAC and self.loop is None:
            object.__setattr__(self, "loop", DoubleLoop())

    def _decay(self, base: float, exponent: float, k: int) -> float:
        if self.mode is ScheduleMode.SDAC_THEORY:
            return base / math.sqrt(max(self.horizon, 1))
        return base * (k + 1) ** -exponent

    def alpha_at(self, k: int) -> float:
        """Actor step at iteration ``k``."""
        return self._decay(self.alpha, self.p_alpha, k)

    def beta_at(self, k: int) -> float:
        """Critic step at iteration ``k``."""
        return self._decay(self.beta, self.p_beta, k)

    def eta_at(self, k: int) -> float:
        """Reward-estimator step at iteration ``k``."""
        return self._decay(self.eta, self.p_eta, k)

    def at(self, k: int) -> tuple[float, float, float]:
        """``(alpha_k, beta_k, eta_k)``.

        Examples:
            >>> make_schedule("sdac-empirical", 100).at(0)
            (0.01, 0.1, 0.1)

        """
        return self.alpha_at(k), self.beta_at(k), self.eta_at(k)

    @property
    def coupling(self) -> tuple[float, float]:
        """Ratios ``beta / alpha`` and ``eta / alpha`` of the bases."""
        if self.alpha == 0:
            return math.inf, math.inf
        return self.beta / self.alpha, self.eta / self.alpha


_DEFAULTS = {
    ScheduleMode.SDAC_THEORY: {"alpha": 1.0, "beta": 10.0, "eta": 10.0},
    ScheduleMode.SDAC_EMPIRICAL: {"alpha": 0.01, "beta": 0.1, "eta": 0.1, "p_alpha": 0.5, "p_beta": 0.5, "p_eta": 0.5},
    ScheduleMode.TDAC: {"alpha": 0.01, "beta": 0.1, "eta": 0.1, "p_alpha": 0.6, "p_beta": 0.4, "p_eta": 0.4},
    ScheduleMode.DLDAC: {"alpha": 0.01, "beta": 0.1, "eta": 0.1},
}

_LOOP_KEYS = {field.name for field in dataclasses.fields(DoubleLoop)}


def make_schedule(mode: str | ScheduleMode, horizon: int, overrides: Mapping[str, float] | None = None) -> StepSchedule:
    """Resolve a schedule from its mode, the horizon ``K`` and optional overrides.

    Overrides may set ``alpha``, ``beta``, ``eta``, the exponents ``p_*`` and, for ``dldac``,
    the loop sizes ``inner_steps``, ``consensus_rounds``, ``reward_rounds``, ``critic_batch``
    and ``actor_batch``.

    Examples:
        >>> make_schedule("sdac-theory", 10_000).alpha_at(123)
        0.01

    Raises:
        ConfigurationError: On an unknown mode or override key.

    """
    mode = ScheduleMode.from_str(mode) if isinstance(mode, str) else mode
    values = dict(_DEFAULTS[mode])
    loop = {}
    for key, value in (overrides or {}).items():
        if key in _LOOP_KEYS and mode is ScheduleMode.DLDAC:
            loop[key] = int(value)
        elif key in ("alpha", "beta", "eta", "p_alpha", "p_beta", "p_eta"):
            values[key] = float(value)
        else:
            raise ConfigurationError(f"Unknown schedule override {key!r} for mode {mode.value}")
    return StepSchedule(
        mode=mode,
        horizon=horizon,
        loop=DoubleLoop(**loop) if mode is ScheduleMode.DLDAC else None,
        **values,
    )
