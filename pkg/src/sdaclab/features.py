"""Linear feature maps, the per-agent softmax policy and projections.

Feature maps are indexed by an integer: the state ``s`` for the critic and the flattened
pair ``s * |A| + a`` for the reward estimator. One-hot maps are never materialized.
"""

from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
from scipy import sparse
from scipy.special import log_softmax, softmax

from .errors import ConfigurationError, ContractViolation
from .mamdp import categorical

if TYPE_CHECKING:
    from .mamdp import TabularMAMDP


class FeatureMap(ABC):
    """Map from an index set of ``size`` entries to vectors in ``R^dim`` with norm at most 1."""

    size: int
    dim: int

    @property
    @abstractmethod
    def tabular(self) -> bool:
        """Whether every function of the index coarse-graining is representable exactly."""

    @abstractmethod
    def vector(self, index: int) -> np.ndarray:
        """Feature vector of one index."""

    @abstractmethod
    def dot(self, index: int, weights: np.ndarray) -> float:
        """Inner product of one feature vector with ``weights``."""

    @abstractmethod
    def values(self, weights: np.ndarray) -> np.ndarray:
        """Inner products for every index at once."""

    @abstractmethod
    def gram(self, mass: np.ndarray) -> np.ndarray:
        """Weighted second moment ``sum_x mass_x phi_x phi_x^T``; 1-D diagonal for one-hot maps."""

    @abstractmethod
    def cross(self, mass: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Weighted cross moment ``sum_x mass_x phi_x target_x``."""

    @abstractmethod
    def dense(self) -> np.ndarray:
        """All feature vectors as a ``(size, dim)`` array."""

    def norms(self) -> np.ndarray:
        """Euclidean norm of every feature vector."""
        return np.linalg.norm(self.dense(), axis=1)


class OneHotFeatures(FeatureMap):
    """One-hot features over ``index // group``.

    With ``group = 1`` this is the tabular map; with ``group = |A|`` on the flattened
    state-action index it is a one-hot over the state only.
    """

    def __init__(self, size: int, group: int = 1):
        """Create a one-hot map of ``size // group`` coordinates."""
        if size < 1 or group < 1 or size % group:
            raise ConfigurationError(f"Cannot group {size} indices in blocks of {group}")
        self.size = size
        self.group = group
        self.dim = size // group

    @property
    def tabular(self) -> bool:
        """Exact for any function of ``index // group``."""
        return True

    def vector(self, index: int) -> np.ndarray:
        """Unit vector of the coordinate owning ``index``."""
        out = np.zeros(self.dim)
        out[index // self.group] = 1.0
        return out

    def dot(self, index: int, weights: np.ndarray) -> float:
        """Coordinate lookup."""
        return float(weights[index // self.group])

    def values(self, weights: np.ndarray) -> np.ndarray:
        """Weights repeated over each group."""
        return np.repeat(weights, self.group)

    def gram(self, mass: np.ndarray) -> np.ndarray:
        """Diagonal of the second moment."""
        return np.asarray(mass, dtype=float).reshape(self.dim, self.group).sum(axis=1)

    def cross(self, mass: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Group sums of ``mass * targets``."""
        return (np.asarray(mass) * np.asarray(targets)).reshape(self.dim, self.group).sum(axis=1)

    def dense(self) -> np.ndarray:
        """Materialized one-hot rows (small maps only)."""
        return np.repeat(np.eye(self.dim), self.group, axis=0)

    def norms(self) -> np.ndarray:
        """All ones."""
        return np.ones(self.size)


class DenseFeatures(FeatureMap):
    """Explicit feature rows, rescaled at construction so that every norm is at most 1."""

    def __init__(self, matrix: np.ndarray):
        """Store the rows, shrinking any row whose norm exceeds 1."""
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ConfigurationError(f"Feature matrix must be 2-D, got shape {matrix.shape}")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = matrix / np.maximum(norms, 1.0)
        matrix.setflags(write=False)
        self.matrix = matrix
        self.size, self.dim = matrix.shape

    @property
    def tabular(self) -> bool:
        """General linear features carry approximation error."""
        return False

    def vector(self, index: int) -> np.ndarray:
        """Row ``index``."""
        return self.matrix[index]

    def dot(self, index: int, weights: np.ndarray) -> float:
        """Row inner product."""
        return float(self.matrix[index] @ weights)

    def values(self, weights: np.ndarray) -> np.ndarray:
        """Matrix-vector product."""
        return self.matrix @ weights

    def gram(self, mass: np.ndarray) -> np.ndarray:
        """Dense weighted Gram matrix."""
        return self.matrix.T @ (np.asarray(mass)[:, None] * self.matrix)

    def cross(self, mass: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Weighted cross moment."""
        return self.matrix.T @ (np.asarray(mass) * np.asarray(targets))

    def dense(self) -> np.ndarray:
        """The stored rows."""
        return self.matrix


@dataclasses.dataclass(frozen=True)
class FeatureSet:
    """Critic features ``phi(s)`` and reward features ``phi_r(s, a)``."""

    critic: FeatureMap
    reward: FeatureMap

    def __post_init__(self):
        """Check the norm bound on every entry.

        Raises:
            ConfigurationError: If any feature vector has norm above 1.

        """
        for name, fmap in (("critic", self.critic), ("reward", self.reward)):
            if isinstance(fmap, DenseFeatures) and np.max(fmap.norms()) > 1.0 + 1e-12:
                raise ConfigurationError(f"{name} features exceed unit norm")

    @property
    def d_omega(self) -> int:
        """Critic dimension."""
        return self.critic.dim

    @property
    def d_lambda(self) -> int:
        """Reward-estimator dimension."""
        return self.reward.dim

    def pair_index(self, s: int, a_index: int) -> int:
        """Reward-feature index of state ``s`` and flattened joint action ``a_index``."""
        return s * (self.reward.size // self.critic.size) + a_index


@dataclasses.dataclass(frozen=True)
class Radii:
    """Projection radii of the critic and the reward estimator."""

    critic: float
    reward: float

    def __post_init__(self):
        """Both radii must be positive."""
        if not (self.critic > 0 and self.reward > 0):
            raise ConfigurationError(f"Projection radii must be positive, got {self.critic}, {self.reward}")


@dataclasses.dataclass(frozen=True)
class SoftmaxPolicy:
    """Independent per-agent softmax policies with temperature 1.

    ``pi_i(a | s) = exp(theta_i . x_i(s, a)) / sum_b exp(theta_i . x_i(s, b))``. With
    ``features=None`` the action features are one-hot over ``(s, a)`` pairs laid out as
    ``s * max|A^i| + a``; otherwise ``features[i]`` has shape ``(|S| * |A^i|, d_theta)``.

    Attributes:
        n_states (int): Number of states.
        action_counts (tuple[int, ...]): Per-agent action counts.
        theta (np.ndarray): Parameters of shape ``(N, d_theta)``.
        features (tuple | None): Optional per-agent action feature matrices.

    """

    n_states: int
    action_counts: tuple[int, ...]
    theta: np.ndarray
    features: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        """Validate parameter and feature shapes."""
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.n_agents, self.d_theta):
            raise ContractViolation(f"theta must have shape {(self.n_agents, self.d_theta)}, got {theta.shape}")
        if self.features is not None:
            for i, x in enumerate(self.features):
                if x.shape != (self.n_states * self.action_counts[i], self.d_theta):
                    raise ConfigurationError(f"Action features of agent {i} have shape {x.shape}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def tabular(cls, n_states: int, action_counts: tuple[int, ...], theta: np.ndarray | None = None) -> SoftmaxPolicy:
        """Tabular softmax policy, uniform when ``theta`` is omitted."""
        action_counts = tuple(int(c) for c in action_counts)
        if theta is None:
            theta = np.zeros((len(action_counts), n_states * max(action_counts)))
        return cls(n_states=n_states, action_counts=action_counts, theta=theta)

    @classmethod
    def for_mdp(cls, mdp: TabularMAMDP) -> SoftmaxPolicy:
        """Uniform tabular policy for an MDP."""
        return cls.tabular(mdp.n_states, mdp.action_counts)

    @property
    def n_agents(self) -> int:
        """Number of agents."""
        return len(self.action_counts)

    @property
    def d_theta(self) -> int:
        """Per-agent parameter dimension."""
        if self.features is None:
            return self.n_states * max(self.action_counts)
        return self.features[0].shape[1]

    @property
    def score_bound(self) -> float:
        """``C_psi = 2 max ||x(s, a)||``."""
        if self.features is None:
            return 2.0
        return 2.0 * max(float(np.max(np.linalg.norm(x, axis=1))) for x in self.features)

    def with_theta(self, theta: np.ndarray) -> SoftmaxPolicy:
        """Same policy class at another parameter."""
        return dataclasses.replace(self, theta=theta)

    def logits(self, i: int, s: int) -> np.ndarray:
        """Logits of agent ``i`` at state ``s``."""
        n_actions = self.action_counts[i]
        if self.features is None:
            start = s * max(self.action_counts)
            return self.theta[i, start : start + n_actions]
        return self.features[i][s * n_actions : (s + 1) * n_actions] @ self.theta[i]

    def action_probs(self, i: int, s: int) -> np.ndarray:
        """``pi_i(. | s)``, computed with max-subtraction."""
        return softmax(self.logits(i, s))

    def log_prob(self, i: int, s: int, a_i: int) -> float:
        """``log pi_i(a_i | s)``."""
        return float(log_softmax(self.logits(i, s))[a_i])

    def all_probs(self, i: int) -> np.ndarray:
        """``pi_i(a | s)`` for every state, shape ``(|S|, |A^i|)``."""
        n_actions = self.action_counts[i]
        if self.features is None:
            logits = self.theta[i].reshape(self.n_states, max(self.action_counts))[:, :n_actions]
        else:
            logits = (self.features[i] @ self.theta[i]).reshape(self.n_states, n_actions)
        return softmax(logits, axis=1)

    def joint_probs(self) -> np.ndarray:
        """Product policy ``pi(a | s)`` over flattened joint actions, shape ``(|S|, |A|)``."""
        joint = np.ones((self.n_states, 1))
        for i in range(self.n_agents):
            joint = (joint[:, :, None] * self.all_probs(i)[:, None, :]).reshape(self.n_states, -1)
        return joint

    def sample(self, s: int, rng: np.random.Generator) -> tuple[int, ...]:
        """Draw every agent's action independently at state ``s``."""
        return tuple(categorical(rng, self.action_probs(i, s)) for i in range(self.n_agents))

    def feature_matrix(self, i: int) -> np.ndarray | sparse.csr_array:
        """Action features of agent ``i`` as a ``(|S| * |A^i|, d_theta)`` matrix."""
        if self.features is not None:
            return self.features[i]
        n_actions, width = self.action_counts[i], max(self.action_counts)
        rows = np.arange(self.n_states * n_actions)
        states, actions = np.divmod(rows, n_actions)
        return sparse.csr_array((np.ones(rows.size), (rows, states * width + actions)), shape=(rows.size, self.d_theta))

    def score(self, i: int, s: int, a_i: int) -> np.ndarray:
        """Softmax score ``x(s, a_i) - sum_b pi_i(b | s) x(s, b)``."""
        probs = self.action_probs(i, s)
        n_actions = self.action_counts[i]
        if self.features is None:
            out = np.zeros(self.d_theta)
            start = s * max(self.action_counts)
            out[start : start + n_actions] = -probs
            out[start + a_i] += 1.0
            return out
        block = self.features[i][s * n_actions : (s + 1) * n_actions]
        return block[a_i] - probs @ block


def value_estimate(phi: np.ndarray, omega: np.ndarray) -> float:
    """``V_omega(s) = phi(s)^T omega``.

    Raises:
        ContractViolation: On a dimension mismatch.

    """
    phi, omega = np.asarray(phi), np.asarray(omega)
    if phi.shape != omega.shape:
        raise ContractViolation(f"Feature dimension {phi.shape} does not match parameter {omega.shape}")
    return float(phi @ omega)


def reward_estimate(phi_r: np.ndarray, lam: np.ndarray) -> float:
    """``r_lambda(s, a) = phi_r(s, a)^T lambda``."""
    return value_estimate(phi_r, lam)


def score_function(policy: SoftmaxPolicy, s: int, a_i: int, agent: int) -> np.ndarray:
    """Score ``grad_theta_i log pi_i(a_i | s)``; zero when the agent has a single action."""
    if not (0 <= s < policy.n_states and 0 <= a_i < policy.action_counts[agent]):
        raise ContractViolation(f"State {s} or action {a_i} out of bounds for agent {agent}")
    return policy.score(agent, s, a_i)


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``radius``.

    Examples:
        >>> project_ball(np.array([3.0, 4.0]), 1.0).tolist()
        [0.6, 0.8]

    """
    if radius <= 0:
        raise ContractViolation(f"Projection radius must be positive, got {radius}")
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return np.asarray(v, dtype=float)
    return np.asarray(v, dtype=float) * radius / norm


class FeatureMode(Enum):
    """Feature construction mode."""

    TABULAR = "tabular"
    STATE = "state"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: str) -> tuple[FeatureMode, int | None]:
        """Parse ``tabular``, ``state`` or ``random:<d>``.

        Raises:
            ConfigurationError: If the mode or dimension is invalid.

        """
        name, _, dim = value.strip().partition(":")
        try:
            mode = cls(name)
        except ValueError as e:
            raise ConfigurationError(
                f"Invalid feature mode: {value!r}. Must be one of tabular, state, random:<d>"
            ) from e
        if mode is cls.RANDOM:
            if not dim.isdigit() or int(dim) < 1:
                raise ConfigurationError(f"Random features need a positive dimension, got {value!r}")
            return mode, int(dim)
        return mode, None


def _build_map(mode: str, size: int, group: int, limit: int, rng: np.random.Generator, what: str) -> FeatureMap:
    kind, dim = FeatureMode.parse(mode)
    if kind is FeatureMode.TABULAR:
        return OneHotFeatures(size)
    if kind is FeatureMode.STATE:
        return OneHotFeatures(size, group=group)
    if dim > limit:
        raise ConfigurationError(f"Random {what} features need d <= {limit}, got {dim}")
    rows = rng.standard_normal((size, dim))
    return DenseFeatures(rows / np.linalg.norm(rows, axis=1, keepdims=True))


def default_features(mdp: TabularMAMDP, critic: str = "tabular", reward: str = "tabular", seed: int = 0) -> FeatureSet:
    """Build critic and reward features for an MDP.

    ``tabular`` gives one-hot features (no approximation error), ``state`` (reward only)
    one-hot over the state, and ``random:d`` Gaussian rows normalized to unit norm.

    Raises:
        ConfigurationError: If a random dimension exceeds the size of its index set.

    """
    rng = np.random.default_rng(seed)
    if FeatureMode.parse(critic)[0] is FeatureMode.STATE:
        critic = "tabular"
    critic_map = _build_map(critic, mdp.n_states, 1, mdp.n_states, rng, "critic")
    reward_map = _build_map(reward, mdp.n_pairs, mdp.n_joint_actions, mdp.n_pairs, rng, "reward")
    return FeatureSet(critic=critic_map, reward=reward_map)

