"""Decentralized actor-critic iteration engines.

One iteration is a synchronous superstep: sample, gossip, then independent per-agent updates
from the consensus snapshot. The kernels (``critic_td_step``, ``reward_estimator_step``,
``actor_step``, ``actor_step_noisy`` and ``nac_direction_solve``) are shared by every
algorithm; the run functions only differ in loop structure and schedule.

Transitions (``xi``) may be a single ``TransitionSample`` or a mini-batch; with a batch the
update direction is the batch average and ``reward`` holds one value per sample.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable, Sequence
from enum import Enum

import numpy as np
import pandas as pd
from loguru import logger

from .errors import ConfigurationError, ContractViolation
from .features import FeatureSet, Radii, SoftmaxPolicy, project_ball
from .mamdp import SamplingMode, TabularMAMDP, TransitionSample, TransitionSampler
from .metrics import MetricsRecord, records_frame
from .oracle import PolicyKernel, default_radii, diagnose, discounted_visitation, stationary_dist
from .schedule import ScheduleMode, StepSchedule
from .topology import WeightMatrix, consensus_round, disagreement_norm, scalar_gossip


@dataclasses.dataclass(frozen=True)
class AgentParams:
    """Stacked per-agent actor, critic and reward-estimator parameters.

    Attributes:
        theta (np.ndarray): Actors, shape ``(N, d_theta)``.
        omega (np.ndarray): Critics, shape ``(N, d_omega)``.
        lam (np.ndarray): Reward estimators, shape ``(N, d_lambda)``.

    """

    theta: np.ndarray
    omega: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        """Copy into read-only float arrays with one row per agent."""
        arrays = {}
        for name in ("theta", "omega", "lam"):
            array = np.array(getattr(self, name), dtype=float)
            if array.ndim != 2:
                raise ContractViolation(f"{name} must be 2-D (one row per agent), got shape {array.shape}")
            array.setflags(write=False)
            arrays[name] = array
        if len({a.shape[0] for a in arrays.values()}) != 1:
            raise ContractViolation("theta, omega and lam must have the same number of agents")
        for name, array in arrays.items():
            object.__setattr__(self, name, array)

    @classmethod
    def zeros(cls, n_agents: int, d_theta: int, d_omega: int, d_lambda: int) -> AgentParams:
        """Zero initialization (uniform softmax policies)."""
        return cls(np.zeros((n_agents, d_theta)), np.zeros((n_agents, d_omega)), np.zeros((n_agents, d_lambda)))

    @property
    def n_agents(self) -> int:
        """Number of agents."""
        return self.theta.shape[0]


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative reward noise ``r (1 + z)``, ``z ~ N(0, sigma^2)``, gossiped ``rounds`` times."""

    sigma: float = 0.0
    rounds: int = 1

    def __post_init__(self):
        """Check ``sigma >= 0`` and ``rounds >= 1``."""
        if self.sigma < 0 or self.rounds < 1:
            raise ConfigurationError(f"Need sigma >= 0 and at least one gossip round, got {self.sigma}, {self.rounds}")


class NacSign(Enum):
    """Sign of the natural actor step."""

    ASCENT = "ascent"
    DESCENT = "descent"

    @classmethod
    def from_str(cls, value: str) -> NacSign:
        """Parse a configuration string.

        Raises:
            ConfigurationError: If the value does not name a sign.

        """
        try:
            return NacSign(value)
        except ValueError as e:
            raise ConfigurationError(f"Invalid NAC sign: {value!r}. Must be one of {[s.value for s in NacSign]}") from e


@dataclasses.dataclass(frozen=True)
class NacParams:
    """Natural actor-critic direction solver settings.

    Attributes:
        inner_batch (int): Samples per direction estimate (N_a).
        iterations (int): Projected gradient steps on the direction (K_a).
        rounds (int): Gossip rounds of the score products (K_z).
        step (float): Direction step size.
        radius (float): Direction ball radius (C_h).
        sign (NacSign): ``ascent`` adds ``alpha h`` to the actor, ``descent`` subtracts it.

    """

    inner_batch: int
    iterations: int
    rounds: int = 5
    step: float = 0.125
    radius: float = 100.0
    sign: NacSign = NacSign.ASCENT

    def __post_init__(self):
        """All sizes and steps must be positive."""
        if min(self.inner_batch, self.iterations, self.rounds) < 1 or self.step <= 0 or self.radius <= 0:
            raise ConfigurationError(f"NAC parameters must be positive: {self}")

    @classmethod
    def for_horizon(cls, horizon: int, score_bound: float, **overrides) -> NacParams:
        """Defaults ``N_a = ceil(sqrt K)``, ``K_a = max(1, ceil(log sqrt K))``, step ``1 / (2 C_psi^2)``."""
        root = math.sqrt(max(horizon, 1))
        values = {
            "inner_batch": max(1, math.ceil(root)),
            "iterations": max(1, math.ceil(math.log(root))),
            "step": 1.0 / (2.0 * score_bound**2),
        }
        values.update(overrides)
        return cls(**values)

    def check_step(self, score_bound: float) -> None:
        """Raise ConfigurationError unless ``step <= 1 / (2 C_psi^2)``."""
        limit = 1.0 / (2.0 * score_bound**2)
        if self.step > limit * (1.0 + 1e-12):
            raise ConfigurationError(f"NAC step {self.step} exceeds 1/(2 C_psi^2) = {limit}")


class TdAt(Enum):
    """Where the TD and estimator directions are evaluated on consensus iterations."""

    PRE = "pre"
    POST = "post"

    @classmethod
    def from_str(cls, value: str) -> TdAt:
        """Parse a configuration string.

        Raises:
            ConfigurationError: If the value is neither ``pre`` nor ``post``.

        """
        try:
            return TdAt(value)
        except ValueError as e:
            raise ConfigurationError(f"Invalid td_at: {value!r}. Must be 'pre' or 'post'") from e


@dataclasses.dataclass(frozen=True)
class Diagnostics:
    """Oracle diagnostics cadence; ``every = 0`` disables snapshots and oracle rows."""

    every: int = 100
    oracle: bool = True

    def fires(self, k: int) -> bool:
        """Whether iteration ``k`` is on the cadence."""
        return self.every > 0 and k % self.every == 0


@dataclasses.dataclass(frozen=True)
class RunOptions:
    """Options shared by every algorithm.

    Attributes:
        radii (Radii | None): Projection radii; derived from the oracle for one-hot features when None.
        batch_size (int): Transitions per iteration (B).
        td_at (TdAt): Evaluation point of the TD and estimator directions.
        diagnostics (Diagnostics): Oracle cadence.
        iid_distribution (str): ``stationary`` or ``visitation`` state law for i.i.d. sampling.
        policy (SoftmaxPolicy | None): Policy class; tabular softmax when None.

    """

    radii: Radii | None = None
    batch_size: int = 1
    td_at: TdAt = TdAt.POST
    diagnostics: Diagnostics = dataclasses.field(default_factory=Diagnostics)
    iid_distribution: str = "stationary"
    policy: SoftmaxPolicy | None = None

    def __post_init__(self):
        """Validate the batch size and the i.i.d. law."""
        if self.batch_size < 1:
            raise ConfigurationError(f"Batch size must be positive, got {self.batch_size}")
        if self.iid_distribution not in ("stationary", "visitation"):
            raise ConfigurationError(f"Invalid i.i.d. distribution {self.iid_distribution!r}")


@dataclasses.dataclass(frozen=True)
class RunResult:
    """Outcome of one run.

    Attributes:
        params (AgentParams): Final parameters.
        records (list[MetricsRecord]): One record per iteration.
        trajectory (list[tuple[int, AgentParams]]): Snapshots at the diagnostics cadence and at ``K``.
        seed (int): Run seed.

    """

    params: AgentParams
    records: list[MetricsRecord]
    trajectory: list[tuple[int, AgentParams]]
    seed: int

    @property
    def frame(self) -> pd.DataFrame:
        """Records as a pandas frame."""
        return records_frame(self.records)


# Kernels


def _as_batch(xi: TransitionSample | Sequence[TransitionSample], reward) -> tuple[list, np.ndarray]:
    if isinstance(xi, TransitionSample):
        return [xi], np.atleast_1d(np.asarray(reward, dtype=float))
    batch = list(xi)
    rewards = np.asarray(reward, dtype=float).reshape(len(batch))
    return batch, rewards


def td_error(xi: TransitionSample, omega: np.ndarray, reward: float, gamma: float, features: FeatureSet) -> float:
    """``r + gamma phi(s')^T omega - phi(s)^T omega``."""
    return reward + gamma * features.critic.dot(xi.s_next, omega) - features.critic.dot(xi.s, omega)


def critic_td_step(
    xi: TransitionSample | Sequence[TransitionSample],
    omega_tilde: np.ndarray,
    reward,
    features: FeatureSet,
    gamma: float,
    beta: float,
    radius: float,
    omega_td: np.ndarray | None = None,
) -> np.ndarray:
    """Projected TD(0) step ``Pi(omega_tilde + beta delta(xi, omega_td) phi(s))``.

    ``omega_td`` defaults to ``omega_tilde`` (direction at the consensus output).
    """
    batch, rewards = _as_batch(xi, reward)
    at = omega_tilde if omega_td is None else omega_td
    direction = np.zeros_like(omega_tilde, dtype=float)
    for sample, r in zip(batch, rewards, strict=True):
        direction += td_error(sample, at, r, gamma, features) * features.critic.vector(sample.s)
    return project_ball(omega_tilde + beta * direction / len(batch), radius)


def reward_estimator_step(
    xi: TransitionSample | Sequence[TransitionSample],
    lam_tilde: np.ndarray,
    reward,
    features: FeatureSet,
    eta: float,
    radius: float,
    lam_at: np.ndarray | None = None,
) -> np.ndarray:
    """Projected least-squares step ``Pi(lam_tilde + eta (r - phi_r^T lam) phi_r(s, a))``."""
    batch, rewards = _as_batch(xi, reward)
    at = lam_tilde if lam_at is None else lam_at
    direction = np.zeros_like(lam_tilde, dtype=float)
    for sample, r in zip(batch, rewards, strict=True):
        index = features.pair_index(sample.s, sample.a_index)
        direction += (r - features.reward.dot(index, at)) * features.reward.vector(index)
    return project_ball(lam_tilde + eta * direction / len(batch), radius)


def _actor_direction(
    batch: list[TransitionSample], agent: int, policy: SoftmaxPolicy, advantages: np.ndarray
) -> np.ndarray:
    direction = np.zeros(policy.d_theta)
    for sample, adv in zip(batch, advantages, strict=True):
        direction += adv * policy.score(agent, sample.s, sample.a[agent])
    return direction / len(batch)


def actor_direction(
    xi: TransitionSample | Sequence[TransitionSample],
    agent: int,
    policy: SoftmaxPolicy,
    omega: np.ndarray,
    lam: np.ndarray,
    features: FeatureSet,
    gamma: float,
) -> np.ndarray:
    """Batch mean of ``delta_hat psi_i(s, a_i)`` with ``delta_hat = r_lam(s, a) + gamma V(s') - V(s)``."""
    batch = [xi] if isinstance(xi, TransitionSample) else list(xi)
    estimates = [
        features.reward.dot(features.pair_index(x.s, x.a_index), lam)
        + gamma * features.critic.dot(x.s_next, omega)
        - features.critic.dot(x.s, omega)
        for x in batch
    ]
    return _actor_direction(batch, agent, policy, np.asarray(estimates))


def actor_step(
    xi: TransitionSample | Sequence[TransitionSample],
    agent: int,
    policy: SoftmaxPolicy,
    omega: np.ndarray,
    lam: np.ndarray,
    features: FeatureSet,
    gamma: float,
    alpha: float,
) -> np.ndarray:
    """``theta_i + alpha delta_hat psi_i(s, a_i)``, using the already updated critic and estimator."""
    return policy.theta[agent] + alpha * actor_direction(xi, agent, policy, omega, lam, features, gamma)


def actor_step_noisy(
    xi: TransitionSample | Sequence[TransitionSample],
    agent: int,
    policy: SoftmaxPolicy,
    omega: np.ndarray,
    reward_estimate,
    features: FeatureSet,
    gamma: float,
    alpha: float,
) -> np.ndarray:
    """Actor step with the gossiped reward estimate in place of the reward estimator."""
    batch, rewards = _as_batch(xi, reward_estimate)
    estimates = [td_error(x, omega, r, gamma, features) for x, r in zip(batch, rewards, strict=True)]
    return policy.theta[agent] + alpha * _actor_direction(batch, agent, policy, np.asarray(estimates))


def sample_scores(samples: Sequence[TransitionSample], policy: SoftmaxPolicy) -> np.ndarray:
    """Per-agent scores of a batch, shape ``(N, len(samples), d_theta)``."""
    return np.stack(
        [np.stack([policy.score(i, x.s, x.a[i]) for x in samples]) for i in range(policy.n_agents)]
    )


def nac_direction_solve(
    samples: Sequence[TransitionSample],
    policy: SoftmaxPolicy,
    g: np.ndarray,
    weights: WeightMatrix,
    nac: NacParams,
    h0: np.ndarray | None = None,
    iterations: int | None = None,
) -> np.ndarray:
    """Decentralized projected gradient descent on ``h^T F h / 2 - g^T h``.

    Each step gossips the per-sample products ``psi_i^T h_i`` for ``nac.rounds`` rounds, so
    ``N z`` estimates the joint product ``psi^T h``; the direction gradient is
    ``(N / N_a) sum_n psi_i z_n - g_i``. Returns the stacked ``(N, d_theta)`` directions.
    """
    scores = sample_scores(samples, policy)
    n_agents, n_samples, _ = scores.shape
    h = np.zeros((n_agents, policy.d_theta)) if h0 is None else np.array(h0, dtype=float)
    for _ in range(nac.iterations if iterations is None else iterations):
        products = np.einsum("ind,id->in", scores, h)
        products = scalar_gossip(products, weights, nac.rounds)
        grad = (n_agents / n_samples) * np.einsum("ind,in->id", scores, products) - g
        h = np.stack([project_ball(h[i] - nac.step * grad[i], nac.radius) for i in range(n_agents)])
    return h


# Engine


class Simulation:
    """State of one run: random streams, sampler, counters and metrics."""

    def __init__(
        self,
        mdp: TabularMAMDP,
        weights: WeightMatrix,
        features: FeatureSet,
        sampling_mode: SamplingMode,
        seed: int,
        options: RunOptions,
    ):
        """Validate the pieces against each other and seed the streams.

        Raises:
            ConfigurationError: If dimensions of the MDP, network, features or policy disagree.

        """
        if weights.n_nodes != mdp.n_agents:
            raise ConfigurationError(f"Weight matrix has {weights.n_nodes} nodes for {mdp.n_agents} agents")
        if features.critic.size != mdp.n_states or features.reward.size != mdp.n_pairs:
            raise ConfigurationError("Feature maps do not index the MDP's states and state/joint-action pairs")
        policy = options.policy if options.policy is not None else SoftmaxPolicy.for_mdp(mdp)
        if policy.n_states != mdp.n_states or policy.action_counts != mdp.action_counts:
            raise ConfigurationError("Policy does not match the MDP's states and action counts")
        self.mdp = mdp
        self.weights = weights
        self.features = features
        self.options = options
        self.policy = policy
        self.radii = options.radii if options.radii is not None else default_radii(mdp, features, policy)
        self.seed = seed
        self._last_stationary: np.ndarray | None = None

        sampling_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
        self.sampler = TransitionSampler(
            mdp, sampling_mode, np.random.default_rng(sampling_seed), state_dist=self._state_law()
        )
        self.noise_rng = np.random.default_rng(noise_seed)
        self.params = AgentParams.zeros(mdp.n_agents, policy.d_theta, features.d_omega, features.d_lambda)
        self.samples = 0
        self.communications = 0
        self.records: list[MetricsRecord] = []
        self.trajectory: list[tuple[int, AgentParams]] = []
        self._reward_sum = 0.0
        self._start: dict = {}

    def _state_law(self) -> Callable[[SoftmaxPolicy], np.ndarray]:
        if self.options.iid_distribution == "visitation":
            return lambda policy: discounted_visitation(self.mdp, policy)
        return self._stationary_law

    def _stationary_law(self, policy: SoftmaxPolicy) -> np.ndarray:
        self._last_stationary = stationary_dist(PolicyKernel(self.mdp, policy), start=self._last_stationary)
        return self._last_stationary

    def current_policy(self, theta: np.ndarray | None = None) -> SoftmaxPolicy:
        """Policy at ``theta`` (default: the current actors)."""
        return self.policy.with_theta(self.params.theta if theta is None else theta)

    def draw(self, policy: SoftmaxPolicy, size: int) -> list[TransitionSample]:
        """Draw ``size`` transitions and count them."""
        self.samples += size
        return self.sampler.draw_batch(policy, size)

    def mix(self, values: np.ndarray) -> np.ndarray:
        """One consensus round on stacked vectors (one communication)."""
        self.communications += 1
        return consensus_round(values, self.weights)

    def gossip(self, values: np.ndarray, rounds: int) -> np.ndarray:
        """``rounds`` gossip rounds on stacked scalars or scalar batches."""
        self.communications += rounds
        return scalar_gossip(values, self.weights, rounds)

    def local_rewards(self, batch: Sequence[TransitionSample]) -> np.ndarray:
        """Private rewards ``r^i(s, a)``, shape ``(N, B)``."""
        return np.stack([self.mdp.rewards[:, x.s, x.a_index] for x in batch], axis=1)

    def noisy_rewards(self, rewards: np.ndarray, sigma: float) -> np.ndarray:
        """``r (1 + z)`` with an independent Gaussian ``z`` per agent and sample."""
        return rewards * (1.0 + self.noise_rng.normal(0.0, sigma, size=rewards.shape))

    def begin(self, k: int) -> None:
        """Snapshot consensus errors and (on cadence) oracle quantities of the current iterate."""
        params = self.params
        start = {
            "critic_consensus": disagreement_norm(params.omega),
            "reward_consensus": disagreement_norm(params.lam),
        }
        diagnostics = self.options.diagnostics
        if diagnostics.fires(k):
            self.trajectory.append((k, params))
            if diagnostics.oracle:
                logger.debug(f"Oracle diagnostics at iteration {k}")
                diagnosis = diagnose(self.mdp, self.current_policy(), self.features, params.omega.mean(axis=0))
                start.update(dataclasses.asdict(diagnosis))
        self._start = start

    def finish(self, k: int, batch: Sequence[TransitionSample], params: AgentParams) -> None:
        """Store the new iterate and append the iteration's record."""
        self.params = params
        reward = float(np.mean([self.mdp.rewards[:, x.s, x.a_index].mean() for x in batch]))
        self._reward_sum += reward
        self.records.append(
            MetricsRecord(
                iteration=k,
                samples=self.samples,
                communications=self.communications,
                reward=reward,
                running_reward=self._reward_sum / (k + 1),
                **self._start,
            )
        )

    def result(self, horizon: int) -> RunResult:
        """Close the run."""
        self.trajectory.append((horizon, self.params))
        return RunResult(params=self.params, records=self.records, trajectory=self.trajectory, seed=self.seed)


def _check_loop(horizon: int, consensus_period: int, actor_steps: int, critic_steps: int) -> None:
    if horizon < 0:
        raise ConfigurationError(f"Iteration count must be nonnegative, got {horizon}")
    if min(consensus_period, actor_steps, critic_steps) < 1:
        raise ConfigurationError("K_c, C_a and C_c must be positive")


def _estimator_and_critic(
    sim: Simulation,
    k: int,
    schedule: StepSchedule,
    batch: list[TransitionSample],
    rewards: np.ndarray,
    consensus_period: int,
    critic_steps: int,
    estimator: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Consensus on schedule, then ``critic_steps`` estimator and critic steps per agent."""
    params = sim.params
    consensus = k % consensus_period == 0
    omega_tilde = sim.mix(params.omega) if consensus else params.omega
    lam_tilde = sim.mix(params.lam) if consensus and estimator else params.lam
    pre = sim.options.td_at is TdAt.PRE
    _, beta, eta = schedule.at(k)
    gamma = sim.mdp.gamma
    omegas, lams = [], []
    for i in range(params.n_agents):
        lam = lam_tilde[i]
        if estimator:
            at = params.lam[i] if pre else lam
            for _ in range(critic_steps):
                lam = reward_estimator_step(batch, lam, rewards[i], sim.features, eta, sim.radii.reward, lam_at=at)
                at = lam
        omega = omega_tilde[i]
        at = params.omega[i] if pre else omega
        for _ in range(critic_steps):
            omega = critic_td_step(batch, omega, rewards[i], sim.features, gamma, beta, sim.radii.critic, omega_td=at)
            at = omega
        omegas.append(omega)
        lams.append(lam)
    return np.stack(omegas), np.stack(lams)


def _actor_update(
    sim: Simulation,
    actor_steps: int,
    step: Callable[[SoftmaxPolicy, int], np.ndarray],
) -> np.ndarray:
    """Apply ``actor_steps`` steps per agent, each at the agent's latest parameter."""
    theta = np.array(sim.params.theta)
    policy = sim.current_policy()
    for i in range(sim.mdp.n_agents):
        agent_policy = policy
        for c in range(actor_steps):
            theta_i = step(agent_policy, i)
            if c + 1 < actor_steps:
                updated = np.array(agent_policy.theta)
                updated[i] = theta_i
                agent_policy = agent_policy.with_theta(updated)
        theta[i] = theta_i
    return theta


def run_sdac_re(
    mdp: TabularMAMDP,
    weights: WeightMatrix,
    features: FeatureSet,
    schedule: StepSchedule,
    horizon: int,
    consensus_period: int = 1,
    sampling_mode: SamplingMode = SamplingMode.MARKOVIAN,
    seed: int = 0,
    actor_steps: int = 1,
    critic_steps: int = 1,
    options: RunOptions | None = None,
) -> RunResult:
    """Single-timescale actor-critic with local reward estimators (also TDAC-re under a tdac schedule)."""
    options = options or RunOptions()
    _check_loop(horizon, consensus_period, actor_steps, critic_steps)
    sim = Simulation(mdp, weights, features, sampling_mode, seed, options)
    logger.info(f"sdac-re: K={horizon}, K_c={consensus_period}, {schedule.mode.value} schedule, seed {seed}")
    for k in range(horizon):
        sim.begin(k)
        batch = sim.draw(sim.current_policy(), options.batch_size)
        rewards = sim.local_rewards(batch)
        omega, lam = _estimator_and_critic(sim, k, schedule, batch, rewards, consensus_period, critic_steps, True)
        alpha = schedule.alpha_at(k)

        def step(policy: SoftmaxPolicy, i: int) -> np.ndarray:
            return actor_step(batch, i, policy, omega[i], lam[i], features, mdp.gamma, alpha)

        theta = _actor_update(sim, actor_steps, step)
        sim.finish(k, batch, AgentParams(theta, omega, lam))
    return sim.result(horizon)


def run_sdac_noi(
    mdp: TabularMAMDP,
    weights: WeightMatrix,
    features: FeatureSet,
    schedule: StepSchedule,
    horizon: int,
    consensus_period: int = 1,
    noise: NoiseSpec | None = None,
    sampling_mode: SamplingMode = SamplingMode.MARKOVIAN,
    seed: int = 0,
    actor_steps: int = 1,
    critic_steps: int = 1,
    options: RunOptions | None = None,
) -> RunResult:
    """Single-timescale actor-critic with gossiped noisy rewards (also TDAC-noi under a tdac schedule).

    The critic learns from the local reward; the actor uses the gossiped estimate of the mean reward.
    """
    options = options or RunOptions()
    noise = noise or NoiseSpec()
    _check_loop(horizon, consensus_period, actor_steps, critic_steps)
    sim = Simulation(mdp, weights, features, sampling_mode, seed, options)
    logger.info(f"sdac-noi: K={horizon}, K_c={consensus_period}, sigma={noise.sigma}, K_r={noise.rounds}, seed {seed}")
    for k in range(horizon):
        sim.begin(k)
        batch = sim.draw(sim.current_policy(), options.batch_size)
        rewards = sim.local_rewards(batch)
        omega, lam = _estimator_and_critic(sim, k, schedule, batch, rewards, consensus_period, critic_steps, False)
        estimates = sim.gossip(sim.noisy_rewards(rewards, noise.sigma), noise.rounds)
        alpha = schedule.alpha_at(k)

        def step(policy: SoftmaxPolicy, i: int) -> np.ndarray:
            return actor_step_noisy(batch, i, policy, omega[i], estimates[i], features, mdp.gamma, alpha)

        theta = _actor_update(sim, actor_steps, step)
        sim.finish(k, batch, AgentParams(theta, omega, lam))
    return sim.result(horizon)


def run_nac(
    mdp: TabularMAMDP,
    weights: WeightMatrix,
    features: FeatureSet,
    schedule: StepSchedule,
    horizon: int,
    consensus_period: int = 1,
    nac: NacParams | None = None,
    sampling_mode: SamplingMode = SamplingMode.MARKOVIAN,
    seed: int = 0,
    options: RunOptions | None = None,
) -> RunResult:
    """Single-timescale natural actor-critic.

    Estimator and critic follow the reward-estimator algorithm; each iteration then draws
    ``N_a`` fresh transitions, forms ``g_i = mean(delta_hat psi_i)`` and solves for the
    natural direction by decentralized projected gradient steps.
    """
    options = options or RunOptions()
    _check_loop(horizon, consensus_period, 1, 1)
    sim = Simulation(mdp, weights, features, sampling_mode, seed, options)
    nac = nac or NacParams.for_horizon(horizon, sim.policy.score_bound)
    nac.check_step(sim.policy.score_bound)
    sign = 1.0 if nac.sign is NacSign.ASCENT else -1.0
    logger.info(f"nac: K={horizon}, N_a={nac.inner_batch}, K_a={nac.iterations}, K_z={nac.rounds}, seed {seed}")
    for k in range(horizon):
        sim.begin(k)
        policy = sim.current_policy()
        batch = sim.draw(policy, options.batch_size)
        rewards = sim.local_rewards(batch)
        omega, lam = _estimator_and_critic(sim, k, schedule, batch, rewards, consensus_period, 1, True)
        inner = sim.draw(policy, nac.inner_batch)
        g = np.stack(
            [actor_direction(inner, i, policy, omega[i], lam[i], features, mdp.gamma) for i in range(mdp.n_agents)]
        )
        h = nac_direction_solve(inner, policy, g, weights, nac)
        sim.communications += nac.iterations * nac.rounds
        theta = policy.theta + sign * schedule.alpha_at(k) * h
        sim.finish(k, batch, AgentParams(theta, omega, lam))
    return sim.result(horizon)


def run_dldac(
    mdp: TabularMAMDP,
    weights: WeightMatrix,
    features: FeatureSet,
    schedule: StepSchedule,
    horizon: int,
    noise: NoiseSpec | None = None,
    sampling_mode: SamplingMode = SamplingMode.MARKOVIAN,
    seed: int = 0,
    options: RunOptions | None = None,
) -> RunResult:
    """Double-loop baseline: an inner critic loop to accuracy, then one batched noisy-reward actor step.

    Raises:
        ConfigurationError: If the schedule carries no loop structure.

    """
    options = options or RunOptions()
    noise = noise or NoiseSpec(sigma=0.1, rounds=1)
    if schedule.mode is not ScheduleMode.DLDAC or schedule.loop is None:
        raise ConfigurationError("The double-loop baseline needs a dldac schedule")
    _check_loop(horizon, 1, 1, 1)
    loop = schedule.loop
    sim = Simulation(mdp, weights, features, sampling_mode, seed, options)
    logger.info(
        f"dldac: K={horizon}, T_c={loop.inner_steps}, N_c={loop.critic_batch}, N={loop.actor_batch}, seed {seed}"
    )
    for k in range(horizon):
        sim.begin(k)
        policy = sim.current_policy()
        alpha, beta, _ = schedule.at(k)
        omega = sim.params.omega
        for _ in range(loop.inner_steps):
            inner = sim.draw(policy, loop.critic_batch)
            rewards = sim.local_rewards(inner)
            omega = np.stack(
                [
                    critic_td_step(inner, omega[i], rewards[i], features, mdp.gamma, beta, sim.radii.critic)
                    for i in range(mdp.n_agents)
                ]
            )
        for _ in range(loop.consensus_rounds):
            omega = sim.mix(omega)
        batch = sim.draw(policy, loop.actor_batch)
        estimates = sim.gossip(sim.noisy_rewards(sim.local_rewards(batch), noise.sigma), loop.reward_rounds)
        theta = np.stack(
            [
                actor_step_noisy(batch, i, policy, omega[i], estimates[i], features, mdp.gamma, alpha)
                for i in range(mdp.n_agents)
            ]
        )
        sim.finish(k, batch, AgentParams(theta, omega, sim.params.lam))
    return sim.result(horizon)
