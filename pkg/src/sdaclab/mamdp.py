"""Networked multi-agent MDPs.

This module provides the tabular multi-agent MDP shared by every agent of the network,
its sampling regimes (i.i.d. draws from a state distribution and one Markovian trajectory),
a random test-bed generator and a discretized cooperative-navigation grid.

Joint actions are stored flattened in C order over ``action_counts``, so the transition
kernel is a ``(n_states * n_joint_actions, n_states)`` matrix whose row ``s * A + a`` is
``P(. | s, a)``. Dense kernels are numpy arrays; deterministic grids use a scipy CSR array.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from collections.abc import Callable, Sequence
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger
from scipy import sparse

from .errors import CapacityError, ConfigurationError, ContractViolation

if TYPE_CHECKING:
    from .features import SoftmaxPolicy

ROW_TOLERANCE = 1e-12
PROBABILITY_FLOOR = 1e-3
NAV_STATE_CAP = 10**6

#: Movement offsets (row, col) for stay/up/down/left/right.
NAV_MOVES = np.array([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)

MeanReward = float


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from an unnormalized nonnegative weight vector.

    Uses a single uniform draw and a cumulative-sum search, so the generator advances by
    exactly one step per call.

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> categorical(rng, np.array([0.0, 1.0, 0.0]))
        1

    """
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(cumulative) - 1)


@dataclasses.dataclass(frozen=True)
class TransitionSample:
    """One transition tuple ``(s, a, s')`` with the flattened joint action cached."""

    s: int
    a: tuple[int, ...]
    s_next: int
    a_index: int


@dataclasses.dataclass(frozen=True)
class TabularMAMDP:
    """Finite networked multi-agent MDP.

    Attributes:
        n_agents (int): Number of agents N.
        n_states (int): Number of global states |S|.
        action_counts (tuple[int, ...]): Per-agent action counts |A^i|.
        transition: Kernel of shape ``(|S| * |A|, |S|)``, dense or scipy CSR.
        rewards (np.ndarray): Local rewards ``r^i(s, a)`` of shape ``(N, |S|, |A|)``.
        gamma (float): Discount factor in [0, 1).
        init_dist (np.ndarray): Initial state distribution.
        r_max (float): Uniform bound on ``|r^i(s, a)|``.

    """

    n_agents: int
    n_states: int
    action_counts: tuple[int, ...]
    transition: np.ndarray | sparse.csr_array
    rewards: np.ndarray
    gamma: float
    init_dist: np.ndarray
    r_max: float

    def __post_init__(self):
        """Validate shapes, stochasticity and reward bounds.

        Raises:
            ConfigurationError: If any invariant of the MDP is violated.

        """
        if self.n_agents < 1 or self.n_states < 1:
            raise ConfigurationError(f"Need at least one agent and one state, got {self.n_agents}, {self.n_states}")
        if len(self.action_counts) != self.n_agents or min(self.action_counts) < 1:
            raise ConfigurationError(f"Invalid action counts {self.action_counts} for {self.n_agents} agents")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"Discount must lie in [0, 1), got {self.gamma}")
        if self.r_max <= 0:
            raise ConfigurationError(f"r_max must be positive, got {self.r_max}")

        n_rows = self.n_states * self.n_joint_actions
        if self.transition.shape != (n_rows, self.n_states):
            raise ConfigurationError(f"Transition shape {self.transition.shape} != {(n_rows, self.n_states)}")
        if sparse.issparse(self.transition):
            object.__setattr__(self, "transition", sparse.csr_array(self.transition))
            values = self.transition.data
            sums = np.asarray(self.transition.sum(axis=1)).ravel()
        else:
            object.__setattr__(self, "transition", _freeze(np.asarray(self.transition, dtype=float)))
            values = self.transition
            sums = self.transition.sum(axis=1)
        if values.size and values.min() < 0:
            raise ConfigurationError("Transition probabilities must be nonnegative")
        if np.max(np.abs(sums - 1.0)) > ROW_TOLERANCE:
            raise ConfigurationError("Every transition row must sum to 1")

        rewards = _freeze(np.asarray(self.rewards, dtype=float))
        if rewards.shape != (self.n_agents, self.n_states, self.n_joint_actions):
            raise ConfigurationError(f"Reward table shape {rewards.shape} does not match the MDP")
        if np.max(np.abs(rewards)) > self.r_max:
            raise ConfigurationError(f"Local rewards exceed r_max={self.r_max}")
        object.__setattr__(self, "rewards", rewards)

        init_dist = _freeze(np.asarray(self.init_dist, dtype=float))
        if init_dist.shape != (self.n_states,) or init_dist.min() < 0 or abs(init_dist.sum() - 1.0) > ROW_TOLERANCE:
            raise ConfigurationError("Initial distribution must be a probability vector over states")
        object.__setattr__(self, "init_dist", init_dist)
        object.__setattr__(self, "action_counts", tuple(int(c) for c in self.action_counts))

    @property
    def n_joint_actions(self) -> int:
        """Size of the joint action space."""
        return math.prod(self.action_counts)

    @property
    def n_pairs(self) -> int:
        """Number of (state, joint action) pairs."""
        return self.n_states * self.n_joint_actions

    @functools.cached_property
    def joint_table(self) -> np.ndarray:
        """Per-agent actions for every flattened joint action, shape ``(|A|, N)``."""
        return np.stack(np.unravel_index(np.arange(self.n_joint_actions), self.action_counts), axis=1)

    def joint_index(self, a: Sequence[int]) -> int:
        """Flatten a per-agent action vector into a joint action index."""
        if len(a) != self.n_agents:
            raise ContractViolation(f"Expected {self.n_agents} actions, got {len(a)}")
        return int(np.ravel_multi_index(tuple(int(x) for x in a), self.action_counts))

    def transition_row(self, s: int, a_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Return the support and probabilities of ``P(. | s, a)``."""
        row = s * self.n_joint_actions + a_index
        if sparse.issparse(self.transition):
            start, stop = self.transition.indptr[row], self.transition.indptr[row + 1]
            return self.transition.indices[start:stop], self.transition.data[start:stop]
        return np.arange(self.n_states), self.transition[row]

    def dense_transition(self) -> np.ndarray:
        """Return the kernel as a dense ``(|S|, |A|, |S|)`` tensor."""
        kernel = self.transition.toarray() if sparse.issparse(self.transition) else np.asarray(self.transition)
        return kernel.reshape(self.n_states, self.n_joint_actions, self.n_states)

    def to_json(self) -> dict:
        """Serialize into the fixture document used by regression tests."""
        return {
            "n_agents": self.n_agents,
            "n_states": self.n_states,
            "action_counts": list(self.action_counts),
            "transition": self.dense_transition().ravel().tolist(),
            "rewards": self.rewards.ravel().tolist(),
            "gamma": self.gamma,
            "init_dist": self.init_dist.tolist(),
            "r_max": self.r_max,
        }

    @classmethod
    def from_json(cls, document: dict | str | Path) -> TabularMAMDP:
        """Build an MDP from a fixture document, a JSON string or a JSON file."""
        if isinstance(document, Path):
            document = json.loads(document.read_text(encoding="utf-8"))
        elif isinstance(document, str):
            document = json.loads(document)
        n_agents = int(document["n_agents"])
        n_states = int(document["n_states"])
        action_counts = tuple(int(c) for c in document["action_counts"])
        n_joint = math.prod(action_counts)
        rewards = np.asarray(document["rewards"], dtype=float).reshape(n_agents, n_states, n_joint)
        return cls(
            n_agents=n_agents,
            n_states=n_states,
            action_counts=action_counts,
            transition=np.asarray(document["transition"], dtype=float).reshape(n_states * n_joint, n_states),
            rewards=rewards,
            gamma=float(document["gamma"]),
            init_dist=np.asarray(document["init_dist"], dtype=float),
            r_max=float(document.get("r_max", np.max(np.abs(rewards)) or 1.0)),
        )


def make_random_mamdp(
    n_agents: int,
    n_states: int,
    action_counts: Sequence[int],
    seed: int,
    r_max: float,
    gamma: float = 0.95,
) -> TabularMAMDP:
    """Generate a random tabular MDP whose chains mix under every policy.

    Rows are Dirichlet(1) draws floored at ``PROBABILITY_FLOOR`` and renormalized, so every
    induced chain is irreducible and aperiodic. Rewards are uniform in ``[-r_max, r_max]``.

    Raises:
        ConfigurationError: If the dimensions are too small or ``r_max`` is not positive.

    """
    action_counts = tuple(int(c) for c in action_counts)
    if n_states < 2:
        raise ConfigurationError(f"Random MDPs need at least 2 states, got {n_states}")
    if len(action_counts) != n_agents or min(action_counts, default=0) < 2:
        raise ConfigurationError(f"Every one of the {n_agents} agents needs at least 2 actions, got {action_counts}")
    if r_max <= 0:
        raise ConfigurationError(f"r_max must be positive, got {r_max}")

    rng = np.random.default_rng(seed)
    n_joint = math.prod(action_counts)
    rows = rng.dirichlet(np.ones(n_states), size=n_states * n_joint)
    rows = np.maximum(rows, PROBABILITY_FLOOR)
    rows /= rows.sum(axis=1, keepdims=True)
    rewards = rng.uniform(-r_max, r_max, size=(n_agents, n_states, n_joint))
    return TabularMAMDP(
        n_agents=n_agents,
        n_states=n_states,
        action_counts=action_counts,
        transition=rows,
        rewards=rewards,
        gamma=gamma,
        init_dist=np.full(n_states, 1.0 / n_states),
        r_max=r_max,
    )


@dataclasses.dataclass(frozen=True)
class NavGridSpec:
    """Discretized cooperative navigation on a square grid.

    Every agent moves stay/up/down/left/right with clamping at the border. Agent ``i`` is
    rewarded ``-scale * manhattan(pos_i, landmark_i) - collision_penalty * (#others on pos_i)``,
    evaluated on the current joint state and clipped to ``[-r_max, r_max]``.
    Cells are numbered ``row * side + col``.
    """

    side: int
    n_agents: int
    landmarks: tuple[int, ...] | None = None
    collision_penalty: float = 1.0
    distance_scale: float = 1.0
    r_max: float | None = None
    gamma: float = 0.95

    def __post_init__(self):
        """Fill default landmarks and check the grid.

        Raises:
            ConfigurationError: If sizes, landmarks or penalties are invalid.

        """
        if self.side < 1 or self.n_agents < 1:
            raise ConfigurationError(f"Grid side and agent count must be positive, got {self.side}, {self.n_agents}")
        if self.collision_penalty < 0 or self.distance_scale < 0:
            raise ConfigurationError("Collision penalty and distance scale must be nonnegative")
        cells = self.side * self.side
        landmarks = self.landmarks
        if landmarks is None:
            landmarks = tuple((i * cells) // self.n_agents for i in range(self.n_agents))
        landmarks = tuple(int(c) for c in landmarks)
        if len(landmarks) != self.n_agents:
            raise ConfigurationError(f"Need one landmark per agent, got {len(landmarks)} for {self.n_agents}")
        if any(not 0 <= c < cells for c in landmarks):
            raise ConfigurationError(f"Landmarks {landmarks} fall outside the {self.side}x{self.side} grid")
        object.__setattr__(self, "landmarks", landmarks)
        if self.r_max is not None and self.r_max <= 0:
            raise ConfigurationError(f"r_max must be positive, got {self.r_max}")

    @property
    def n_cells(self) -> int:
        """Number of grid cells."""
        return self.side * self.side

    @property
    def n_states(self) -> int:
        """Number of joint positions."""
        return self.n_cells**self.n_agents

    @property
    def reward_bound(self) -> float:
        """Bound on ``|r^i|`` used for clipping."""
        if self.r_max is not None:
            return float(self.r_max)
        natural = self.distance_scale * 2 * (self.side - 1) + self.collision_penalty * (self.n_agents - 1)
        return float(natural) if natural > 0 else 1.0

    def move(self, positions: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Apply per-agent moves to cell indices, clamping at the border (vectorized)."""
        rows, cols = np.divmod(positions, self.side)
        offsets = NAV_MOVES[actions]
        rows = np.clip(rows + offsets[..., 0], 0, self.side - 1)
        cols = np.clip(cols + offsets[..., 1], 0, self.side - 1)
        return rows * self.side + cols

    def local_rewards(self, positions: np.ndarray) -> np.ndarray:
        """Per-agent rewards for joint positions of shape ``(..., N)``."""
        landmarks = np.asarray(self.landmarks)
        rows, cols = np.divmod(positions, self.side)
        target_rows, target_cols = np.divmod(landmarks, self.side)
        distance = np.abs(rows - target_rows) + np.abs(cols - target_cols)
        same_cell = positions[..., :, None] == positions[..., None, :]
        collisions = same_cell.sum(axis=-1) - 1
        rewards = -self.distance_scale * distance - self.collision_penalty * collisions
        bound = self.reward_bound
        return np.clip(rewards, -bound, bound)

    def encode(self, positions: Sequence[int]) -> int:
        """Joint state index of per-agent cells (agent 0 is the most significant digit)."""
        index = 0
        for cell in positions:
            index = index * self.n_cells + int(cell)
        return index

    def decode(self, s: int) -> np.ndarray:
        """Per-agent cells of a joint state index."""
        cells = []
        for _ in range(self.n_agents):
            s, cell = divmod(int(s), self.n_cells)
            cells.append(cell)
        return np.asarray(cells[::-1], dtype=np.int64)


def compile_nav_grid(spec: NavGridSpec, state_cap: int = NAV_STATE_CAP) -> TabularMAMDP:
    """Compile a navigation grid into a tabular MDP over joint positions.

    Raises:
        CapacityError: If ``(side**2)**N`` exceeds ``state_cap``.

    """
    if spec.n_states > state_cap:
        raise CapacityError(
            f"Navigation grid has {spec.n_states} joint states (cap {state_cap}); "
            "simulate it with step_env on the NavGridSpec instead of compiling it"
        )
    n_states = spec.n_states
    action_counts = (len(NAV_MOVES),) * spec.n_agents
    n_joint = math.prod(action_counts)

    grid_shape = (spec.n_cells,) * spec.n_agents
    positions = np.stack(np.unravel_index(np.arange(n_states), grid_shape), axis=1)
    joint = np.stack(np.unravel_index(np.arange(n_joint), action_counts), axis=1)
    moved = spec.move(positions[:, None, :], joint[None, :, :])
    next_state = np.ravel_multi_index(tuple(moved[..., i] for i in range(spec.n_agents)), grid_shape)
    rows = np.arange(n_states * n_joint)
    transition = sparse.csr_array((np.ones(rows.size), (rows, next_state.ravel())), shape=(rows.size, n_states))

    state_rewards = spec.local_rewards(positions).T
    rewards = np.broadcast_to(state_rewards[:, :, None], (spec.n_agents, n_states, n_joint)).copy()
    logger.debug(f"Compiled {spec.side}x{spec.side} navigation grid: {n_states} states, {n_joint} joint actions")
    return TabularMAMDP(
        n_agents=spec.n_agents,
        n_states=n_states,
        action_counts=action_counts,
        transition=transition,
        rewards=rewards,
        gamma=spec.gamma,
        init_dist=np.full(n_states, 1.0 / n_states),
        r_max=spec.reward_bound,
    )


@functools.singledispatch
def step_env(env, s: int, a: Sequence[int] | int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Advance the environment one step and return ``(s_next, per-agent rewards)``."""
    raise ContractViolation(f"Cannot step an environment of type {type(env).__name__}")


@step_env.register
def _(env: TabularMAMDP, s: int, a: Sequence[int] | int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    a_index = a if isinstance(a, int | np.integer) else env.joint_index(a)
    if not (0 <= s < env.n_states and 0 <= a_index < env.n_joint_actions):
        raise ContractViolation(f"State {s} or joint action {a_index} out of bounds")
    support, probs = env.transition_row(s, int(a_index))
    s_next = int(support[categorical(rng, probs)])
    return s_next, env.rewards[:, s, a_index].copy()


@step_env.register
def _(env: NavGridSpec, s: int, a: Sequence[int] | int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    n_moves = len(NAV_MOVES)
    if isinstance(a, int | np.integer):
        if not 0 <= a < n_moves**env.n_agents:
            raise ContractViolation(f"Joint action {a} out of bounds")
        a = np.unravel_index(int(a), (n_moves,) * env.n_agents)
    a = np.asarray(a, dtype=np.int64)
    if not 0 <= s < env.n_states:
        raise ContractViolation(f"State {s} out of bounds")
    if a.shape != (env.n_agents,) or a.min() < 0 or a.max() >= n_moves:
        raise ContractViolation(f"Joint action {tuple(a.tolist())} out of bounds")
    positions = env.decode(s)
    rewards = env.local_rewards(positions)
    return env.encode(env.move(positions, a)), rewards


def sample_iid(
    mdp: TabularMAMDP,
    dist: np.ndarray,
    policy: SoftmaxPolicy,
    rng: np.random.Generator,
) -> TransitionSample:
    """Draw ``s ~ dist``, ``a ~ pi_theta(.|s)``, ``s' ~ P(.|s, a)``.

    Raises:
        ContractViolation: If ``dist`` is not a probability vector within 1e-9.

    """
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (mdp.n_states,) or dist.min() < 0 or abs(dist.sum() - 1.0) > 1e-9:
        raise ContractViolation("Sampling distribution must be a probability vector over states")
    s = categorical(rng, dist)
    return _transition_from(mdp, s, policy, rng)


def _transition_from(mdp: TabularMAMDP, s: int, policy: SoftmaxPolicy, rng: np.random.Generator) -> TransitionSample:
    a = policy.sample(s, rng)
    a_index = mdp.joint_index(a)
    s_next, _ = step_env(mdp, s, a_index, rng)
    return TransitionSample(s=s, a=a, s_next=s_next, a_index=a_index)


def mean_reward(mdp: TabularMAMDP, s: int, a: Sequence[int] | int) -> MeanReward:
    """Network-mean reward ``(1/N) sum_i r^i(s, a)``, for oracles and diagnostics only."""
    a_index = a if isinstance(a, int | np.integer) else mdp.joint_index(a)
    return float(np.mean(mdp.rewards[:, s, a_index]))


class SamplingMode(Enum):
    """How transitions are drawn each iteration."""

    IID = "iid"
    MARKOVIAN = "markovian"

    @classmethod
    def from_str(cls, value: str) -> SamplingMode:
        """Parse a configuration string into a sampling mode.

        Raises:
            ConfigurationError: If the value does not name a mode.

        """
        try:
            return SamplingMode(value)
        except ValueError as e:
            raise ConfigurationError(
                f"Invalid sampling mode: {value!r}. Must be one of {[m.value for m in SamplingMode]}"
            ) from e


class TransitionSampler:
    """Stateful transition source for one run.

    In Markovian mode one trajectory state is shared by all agents. In i.i.d. mode states are
    drawn from ``state_dist(policy)``, which the caller supplies (typically the stationary
    distribution from the oracle); the distribution is cached per policy parameter.

    A learning run changes the policy every iteration, so i.i.d. mode recomputes the law at every
    draw and is meant for MDPs with a few hundred states at most; use Markovian sampling on
    compiled navigation grids.
    """

    def __init__(
        self,
        mdp: TabularMAMDP,
        mode: SamplingMode,
        rng: np.random.Generator,
        state_dist: Callable[[SoftmaxPolicy], np.ndarray] | None = None,
    ):
        """Start the trajectory from ``s_0 ~ mu_0``."""
        if mode is SamplingMode.IID and state_dist is None:
            raise ConfigurationError("i.i.d. sampling needs a state distribution")
        self.mdp = mdp
        self.mode = mode
        self.rng = rng
        self._state_dist = state_dist
        self._cache_key: bytes | None = None
        self._cache_dist: np.ndarray | None = None
        self.state = categorical(rng, mdp.init_dist)
        self.drawn = 0

    def _dist(self, policy: SoftmaxPolicy) -> np.ndarray:
        key = policy.theta.tobytes()
        if key != self._cache_key:
            self._cache_dist = self._state_dist(policy)
            self._cache_key = key
        return self._cache_dist

    def draw(self, policy: SoftmaxPolicy) -> TransitionSample:
        """Draw the next transition under ``policy``."""
        self.drawn += 1
        if self.mode is SamplingMode.IID:
            return sample_iid(self.mdp, self._dist(policy), policy, self.rng)
        sample = _transition_from(self.mdp, self.state, policy, self.rng)
        self.state = sample.s_next
        return sample

    def draw_batch(self, policy: SoftmaxPolicy, size: int) -> list[TransitionSample]:
        """Draw ``size`` consecutive transitions under ``policy``."""
        return [self.draw(policy) for _ in range(size)]
