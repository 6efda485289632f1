"""Tests for the algos module."""

import math

import numpy as np
import pandas as pd
import pytest

from sdaclab.algos import (
    AgentParams,
    Diagnostics,
    NacParams,
    NacSign,
    NoiseSpec,
    RunOptions,
    Simulation,
    TdAt,
    actor_step,
    critic_td_step,
    nac_direction_solve,
    reward_estimator_step,
    run_dldac,
    run_nac,
    run_sdac_noi,
    run_sdac_re,
    sample_scores,
    td_error,
)
from sdaclab.errors import ConfigurationError, ContractViolation
from sdaclab.features import Radii, SoftmaxPolicy, default_features, project_ball
from sdaclab.mamdp import SamplingMode, TransitionSample, TransitionSampler, make_random_mamdp
from sdaclab.oracle import discounted_visitation, exact_npg_direction, exact_policy_gradient, fisher_matrix, objective
from sdaclab.schedule import make_schedule
from sdaclab.topology import CommGraph, WeightMatrix, consensus_round, disagreement_norm, metropolis_weights

WIDE = Radii(critic=1e6, reward=1e6)
QUIET = RunOptions(radii=WIDE, diagnostics=Diagnostics(every=0))


@pytest.fixture()
def ring_mdp():
    """Random 3-agent MDP with 5 states."""
    return make_random_mamdp(n_agents=3, n_states=5, action_counts=(2, 2, 2), seed=8, r_max=1.0, gamma=0.9)


@pytest.fixture()
def ring3():
    """Metropolis weights of the 3-node ring."""
    return metropolis_weights(CommGraph.from_spec("ring", 3))


class TestKernels:
    """Tests for the shared update kernels."""

    def test_critic_step(self, small_mdp, small_features):
        """A TD step moves the visited state's value by ``beta * delta``."""
        xi = TransitionSample(s=1, a=(0, 1), s_next=2, a_index=1)
        omega = np.array([0.0, 0.5, -1.0, 0.0])
        delta = td_error(xi, omega, 0.3, 0.9, small_features)
        assert delta == pytest.approx(0.3 + 0.9 * -1.0 - 0.5)

        updated = critic_td_step(xi, omega, 0.3, small_features, gamma=0.9, beta=0.1, radius=100.0)

        expected = omega.copy()
        expected[1] += 0.1 * delta
        assert np.allclose(updated, expected)

    def test_critic_step_direction_point(self, small_features):
        """``omega_td`` moves the evaluation point of the TD error but not the base point."""
        xi = TransitionSample(s=0, a=(0, 0), s_next=0, a_index=0)
        base = np.zeros(4)
        at = np.array([1.0, 0.0, 0.0, 0.0])
        updated = critic_td_step(xi, base, 1.0, small_features, gamma=0.5, beta=1.0, radius=100.0, omega_td=at)
        assert updated[0] == pytest.approx(1.0 + 0.5 * 1.0 - 1.0)

    def test_critic_step_is_projected(self, small_features):
        """The critic stays in its ball."""
        xi = TransitionSample(s=0, a=(0, 0), s_next=1, a_index=0)
        updated = critic_td_step(xi, np.zeros(4), 1.0, small_features, gamma=0.9, beta=10.0, radius=2.0)
        assert np.linalg.norm(updated) == pytest.approx(2.0)

    def test_batch_of_copies(self, small_features):
        """A batch of identical transitions takes the single-sample step."""
        xi = TransitionSample(s=2, a=(1, 1), s_next=3, a_index=3)
        omega = np.array([0.1, 0.2, 0.3, 0.4])
        single = critic_td_step(xi, omega, -0.5, small_features, 0.9, 0.2, 100.0)
        batch = critic_td_step([xi, xi, xi], omega, [-0.5] * 3, small_features, 0.9, 0.2, 100.0)
        assert np.allclose(single, batch)

    def test_reward_estimator_step(self, small_mdp, small_features):
        """The estimator moves the visited pair towards the observed reward."""
        xi = TransitionSample(s=3, a=(1, 0), s_next=0, a_index=2)
        lam = np.zeros(small_features.d_lambda)
        updated = reward_estimator_step(xi, lam, 0.8, small_features, eta=0.5, radius=100.0)
        index = small_features.pair_index(3, 2)
        assert updated[index] == pytest.approx(0.4)
        assert np.count_nonzero(updated) == 1

    def test_actor_step(self, small_mdp, small_features):
        """The actor follows ``delta_hat psi_i`` with the estimated reward."""
        policy = SoftmaxPolicy.for_mdp(small_mdp)
        xi = TransitionSample(s=0, a=(1, 0), s_next=1, a_index=2)
        omega = np.array([0.5, 1.0, 0.0, 0.0])
        lam = np.zeros(small_features.d_lambda)
        lam[small_features.pair_index(0, 2)] = 0.2
        theta = actor_step(xi, 0, policy, omega, lam, small_features, gamma=0.9, alpha=0.1)
        advantage = 0.2 + 0.9 * 1.0 - 0.5
        assert np.allclose(theta, 0.1 * advantage * policy.score(0, 0, 1))

    def test_sample_scores_shape(self, small_mdp):
        """Scores stack as ``(N, samples, d_theta)``."""
        policy = SoftmaxPolicy.for_mdp(small_mdp)
        samples = [TransitionSample(0, (0, 1), 1, 1), TransitionSample(2, (1, 1), 0, 3)]
        assert sample_scores(samples, policy).shape == (2, 2, policy.d_theta)


class TestParameters:
    """Tests for parameter containers and settings."""

    def test_agent_params_are_read_only(self):
        """Parameters are frozen copies."""
        params = AgentParams.zeros(2, 3, 4, 5)
        with pytest.raises(ValueError, match="read-only"):
            params.theta[0, 0] = 1.0

    def test_agent_params_shapes(self):
        """Every block needs one row per agent."""
        with pytest.raises(ContractViolation):
            AgentParams(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros((2, 5)))

    def test_nac_defaults_follow_horizon(self):
        """``N_a = ceil(sqrt K)``, ``K_a = ceil(log sqrt K)`` and step ``1 / (2 C_psi^2)``."""
        nac = NacParams.for_horizon(100, score_bound=2.0)
        assert nac.inner_batch == 10
        assert nac.iterations == math.ceil(math.log(10))
        assert nac.step == pytest.approx(0.125)
        assert nac.rounds == 5
        assert nac.sign is NacSign.ASCENT

    def test_nac_step_limit(self):
        """Steps beyond ``1 / (2 C_psi^2)`` are rejected."""
        with pytest.raises(ConfigurationError, match="exceeds"):
            NacParams(inner_batch=4, iterations=2, step=0.2).check_step(2.0)

    def test_noise_spec(self):
        """Negative noise and zero gossip rounds are rejected."""
        with pytest.raises(ConfigurationError):
            NoiseSpec(sigma=-0.1)
        with pytest.raises(ConfigurationError):
            NoiseSpec(rounds=0)

    def test_td_at_from_str(self):
        """``td_at`` parses from configuration strings."""
        assert TdAt.from_str("pre") is TdAt.PRE
        with pytest.raises(ConfigurationError):
            TdAt.from_str("mid")

    def test_options(self):
        """Run options validate the batch size and the i.i.d. law."""
        with pytest.raises(ConfigurationError):
            RunOptions(batch_size=0)
        with pytest.raises(ConfigurationError):
            RunOptions(iid_distribution="uniform")


class TestCounters:
    """Tests for sample and communication accounting."""

    def test_sdac_re(self, ring_mdp, ring3):
        """Reward-estimator runs count two rounds per consensus iteration and B samples per iteration."""
        features = default_features(ring_mdp)
        options = RunOptions(radii=WIDE, batch_size=3, diagnostics=Diagnostics(every=0))
        schedule = make_schedule("sdac-empirical", 9)
        result = run_sdac_re(ring_mdp, ring3, features, schedule, 9, consensus_period=4, options=options)
        frame = result.frame
        assert frame["samples"].tolist() == [3 * (k + 1) for k in range(9)]
        assert frame["communications"].tolist() == [2, 2, 2, 2, 4, 4, 4, 4, 6]

    def test_sdac_noi(self, ring_mdp, ring3):
        """Noisy-reward runs count one round per consensus iteration plus ``K_r`` per iteration."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 6)
        result = run_sdac_noi(
            ring_mdp, ring3, features, schedule, 6, consensus_period=3, noise=NoiseSpec(0.5, 2), options=QUIET
        )
        assert result.frame["communications"].tolist() == [3, 5, 7, 10, 12, 14]

    def test_nac(self, ring_mdp, ring3):
        """Natural actor-critic adds ``N_a`` samples and ``K_a K_z`` rounds per iteration."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 4)
        nac = NacParams(inner_batch=6, iterations=2, rounds=3)
        result = run_nac(ring_mdp, ring3, features, schedule, 4, consensus_period=2, nac=nac, options=QUIET)
        frame = result.frame
        assert frame["samples"].tolist() == [7, 14, 21, 28]
        assert frame["communications"].tolist() == [8, 14, 22, 28]

    def test_dldac(self, ring_mdp, ring3):
        """The double loop counts ``T_c N_c + N`` samples and ``T_c' + T'`` rounds per iteration."""
        features = default_features(ring_mdp)
        overrides = {"inner_steps": 3, "critic_batch": 2, "actor_batch": 5, "consensus_rounds": 2, "reward_rounds": 1}
        schedule = make_schedule("dldac", 3, overrides)
        result = run_dldac(ring_mdp, ring3, features, schedule, 3, options=QUIET)
        frame = result.frame
        assert frame["samples"].tolist() == [11, 22, 33]
        assert frame["communications"].tolist() == [3, 6, 9]

    def test_dldac_needs_loop_schedule(self, ring_mdp, ring3):
        """The double loop refuses single-timescale schedules."""
        features = default_features(ring_mdp)
        with pytest.raises(ConfigurationError, match="dldac schedule"):
            run_dldac(ring_mdp, ring3, features, make_schedule("sdac-empirical", 3), 3, options=QUIET)


class TestRuns:
    """Tests for run structure, snapshots and reproducibility."""

    def test_metrics_rows(self, ring_mdp, ring3):
        """One row per iteration; oracle columns fill only on the cadence."""
        features = default_features(ring_mdp)
        options = RunOptions(radii=WIDE, diagnostics=Diagnostics(every=5))
        result = run_sdac_re(ring_mdp, ring3, features, make_schedule("sdac-empirical", 12), 12, options=options)
        frame = result.frame
        assert frame["iteration"].tolist() == list(range(12))
        assert frame.loc[[0, 5, 10], "objective"].notna().all()
        assert frame.loc[[1, 2, 3, 4, 6, 11], "objective"].isna().all()
        assert frame.loc[0, "critic_consensus"] == 0.0
        assert [k for k, _ in result.trajectory] == [0, 5, 10, 12]
        assert result.trajectory[-1][1] is result.params

    def test_running_reward(self, ring_mdp, ring3):
        """The running reward is the cumulative mean of the per-iteration rewards."""
        features = default_features(ring_mdp)
        result = run_sdac_re(ring_mdp, ring3, features, make_schedule("sdac-empirical", 20), 20, options=QUIET)
        frame = result.frame
        expected = frame["reward"].cumsum() / np.arange(1, 21)
        assert np.allclose(frame["running_reward"], expected)

    def test_same_seed_same_run(self, ring_mdp, ring3):
        """Runs are deterministic in their seed."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 15)
        options = RunOptions(radii=WIDE, diagnostics=Diagnostics(every=4))
        first = run_sdac_noi(ring_mdp, ring3, features, schedule, 15, seed=3, options=options)
        second = run_sdac_noi(ring_mdp, ring3, features, schedule, 15, seed=3, options=options)
        third = run_sdac_noi(ring_mdp, ring3, features, schedule, 15, seed=4, options=options)
        pd.testing.assert_frame_equal(first.frame, second.frame)
        assert np.array_equal(first.params.theta, second.params.theta)
        assert not np.array_equal(first.params.theta, third.params.theta)

    def test_empty_horizon(self, ring_mdp, ring3):
        """``K = 0`` returns the initialization."""
        features = default_features(ring_mdp)
        result = run_sdac_re(ring_mdp, ring3, features, make_schedule("sdac-empirical", 0), 0, options=QUIET)
        assert result.records == []
        assert result.trajectory == [(0, result.params)]
        assert not np.any(result.params.theta)

    def test_td_at_changes_updates(self, ring_mdp, ring3):
        """Evaluating TD errors before or after consensus gives different critics."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 10)
        post = run_sdac_re(ring_mdp, ring3, features, schedule, 10, options=QUIET)
        pre_options = RunOptions(radii=WIDE, td_at=TdAt.PRE, diagnostics=Diagnostics(every=0))
        pre = run_sdac_re(ring_mdp, ring3, features, schedule, 10, options=pre_options)
        assert post.frame["samples"].equals(pre.frame["samples"])
        assert not np.allclose(post.params.omega, pre.params.omega)

    def test_actor_steps(self, ring_mdp, ring3):
        """Several actor steps per iteration move the actor further than one."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 5)
        one = run_sdac_re(ring_mdp, ring3, features, schedule, 5, options=QUIET)
        three = run_sdac_re(ring_mdp, ring3, features, schedule, 5, actor_steps=3, options=QUIET)
        assert not np.allclose(one.params.theta, three.params.theta)
        assert one.frame["samples"].equals(three.frame["samples"])

    def test_mismatched_network(self, ring_mdp, ring5):
        """The network must have one node per agent."""
        features = default_features(ring_mdp)
        with pytest.raises(ConfigurationError, match="nodes"):
            run_sdac_re(ring_mdp, ring5, features, make_schedule("sdac-empirical", 2), 2, options=QUIET)

    def test_iid_sampling(self, ring_mdp, ring3):
        """i.i.d. runs draw from the stationary law of the current policy."""
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", 8)
        result = run_sdac_re(ring_mdp, ring3, features, schedule, 8, sampling_mode=SamplingMode.IID, options=QUIET)
        assert len(result.records) == 8


def _reference_noiseless(mdp, weights, schedule, horizon, period, seed, estimate):
    """Hand-written tabular noiseless run; ``estimate`` maps local rewards to the actors' reward estimates."""
    sampling_seed, _ = np.random.SeedSequence(seed).spawn(2)
    sampler = TransitionSampler(mdp, SamplingMode.MARKOVIAN, np.random.default_rng(sampling_seed))
    base = SoftmaxPolicy.for_mdp(mdp)
    n, gamma = mdp.n_agents, mdp.gamma
    theta = np.zeros_like(base.theta)
    omega = np.zeros((n, mdp.n_states))
    for k in range(horizon):
        policy = base.with_theta(theta)
        x = sampler.draw(policy)
        rewards = mdp.rewards[:, x.s, x.a_index]
        if k % period == 0:
            omega = weights.matrix @ omega
        updated = omega.copy()
        for i in range(n):
            delta = rewards[i] + gamma * omega[i, x.s_next] - omega[i, x.s]
            updated[i, x.s] = omega[i, x.s] + schedule.beta_at(k) * delta
            updated[i] = project_ball(updated[i], WIDE.critic)
        omega = updated
        estimates = estimate(rewards)
        theta = theta.copy()
        for i in range(n):
            advantage = estimates[i] + gamma * omega[i, x.s_next] - omega[i, x.s]
            theta[i] = theta[i] + schedule.alpha_at(k) * (advantage * policy.score(i, x.s, x.a[i]))
    return theta, omega


class TestNoisyRewardReference:
    """The noisy-reward engine against a direct transcription of its update."""

    def test_noiseless_run_matches_reference(self, ring_mdp, ring3):
        """Without noise the engine reproduces a hand-written loop with ``K_r`` gossip rounds."""
        horizon, period, rounds, seed = 40, 2, 2, 5
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", horizon)
        noise = NoiseSpec(sigma=0.0, rounds=rounds)
        result = run_sdac_noi(
            ring_mdp, ring3, features, schedule, horizon, consensus_period=period, noise=noise, seed=seed, options=QUIET
        )

        def gossiped(rewards):
            for _ in range(rounds):
                rewards = ring3.matrix @ rewards
            return rewards

        theta, omega = _reference_noiseless(ring_mdp, ring3, schedule, horizon, period, seed, gossiped)
        assert np.allclose(result.params.omega, omega, atol=1e-12, rtol=0)
        assert np.allclose(result.params.theta, theta, atol=1e-12, rtol=0)

    def test_exact_gossip_uses_mean_reward(self, ring_mdp):
        """On the complete graph one round gives every actor the network-mean reward."""
        horizon, seed = 40, 9
        weights = metropolis_weights(CommGraph.from_spec("complete", 3))
        features = default_features(ring_mdp)
        schedule = make_schedule("sdac-empirical", horizon)
        noise = NoiseSpec(sigma=0.0, rounds=1)
        result = run_sdac_noi(ring_mdp, weights, features, schedule, horizon, noise=noise, seed=seed, options=QUIET)

        def mean_reward(rewards):
            return np.full(rewards.shape, rewards.mean())

        theta, omega = _reference_noiseless(ring_mdp, weights, schedule, horizon, 1, seed, mean_reward)
        assert np.allclose(result.params.omega, omega, atol=1e-12, rtol=0)
        assert np.allclose(result.params.theta, theta, atol=1e-12, rtol=0)


class TestConsensusBounds:
    """Contraction properties of the consensus steps."""

    @pytest.mark.parametrize("period", [1, 5])
    def test_frozen_critic_disagreement(self, small_features, ring5, period):
        """With ``beta = 0`` the critic disagreement decays at least like ``nu^floor(k / K_c)``."""
        rng = np.random.default_rng(period)
        omega = rng.normal(size=(5, small_features.d_omega))
        initial = disagreement_norm(omega)
        xi = TransitionSample(s=0, a=(0, 0), s_next=1, a_index=0)
        for k in range(200):
            assert disagreement_norm(omega) <= ring5.nu ** (k // period) * initial + 1e-12
            if k % period == 0:
                omega = consensus_round(omega, ring5)
            omega = np.stack(
                [critic_td_step(xi, omega[i], 1.0, small_features, 0.9, 0.0, 1e6) for i in range(5)]
            )

    def test_noisy_reward_gossip(self, ring5):
        """Gossiped noisy rewards contract towards their mean by ``nu^(2 K_r)`` in squared norm."""
        mdp = make_random_mamdp(n_agents=5, n_states=3, action_counts=(2,) * 5, seed=2, r_max=1.0)
        features = default_features(mdp)
        sim = Simulation(mdp, ring5, features, SamplingMode.MARKOVIAN, seed=0, options=QUIET)
        policy = sim.current_policy()
        for _ in range(1000):
            batch = sim.draw(policy, 1)
            noisy = sim.noisy_rewards(sim.local_rewards(batch), sigma=0.5)
            gossiped = sim.gossip(noisy, rounds=2)
            before = np.sum((noisy - noisy.mean(axis=0)) ** 2)
            after = np.sum((gossiped - noisy.mean(axis=0)) ** 2)
            assert after <= ring5.nu**4 * before + 1e-15
        assert sim.communications == 2000


class TestNaturalDirection:
    """Tests for the decentralized natural-gradient direction solver."""

    @staticmethod
    def _balanced_samples():
        """2048 samples, 512 of each ``(s, a)`` pair of the two-state MDP."""
        return [
            TransitionSample(s=s, a=(a,), s_next=s, a_index=a) for s in range(2) for a in range(2) for _ in range(512)
        ]

    def test_converges_to_natural_gradient(self, two_state_mdp):
        """With exact gradient and exact gossip the solver reaches ``F^+ grad J``, monotonically in ``K_a``."""
        policy = SoftmaxPolicy.for_mdp(two_state_mdp)
        samples = self._balanced_samples()
        g = exact_policy_gradient(two_state_mdp, policy)
        target = exact_npg_direction(two_state_mdp, policy).h
        weights = WeightMatrix(np.array([[1.0]]))
        nac = NacParams(inner_batch=2048, iterations=200, rounds=5, step=0.125)

        fisher = fisher_matrix(two_state_mdp, policy)

        errors, residuals = [], []
        for iterations in (10, 50, 100, 200):
            h = nac_direction_solve(samples, policy, g, weights, nac, iterations=iterations)
            errors.append(float(np.linalg.norm(h - target) / np.linalg.norm(target)))
            residuals.append(float(np.linalg.norm(fisher @ h.ravel() - g.ravel())))

        assert errors[-1] <= 0.05
        assert errors == sorted(errors, reverse=True)
        assert residuals == sorted(residuals, reverse=True)

    def test_ring_gossip_with_sampled_scores(self):
        """On a 4-ring with on-policy samples the solver reaches the sample-Fisher direction ``F_hat^+ g``."""
        mdp = make_random_mamdp(n_agents=4, n_states=3, action_counts=(2, 2, 2, 2), seed=3, r_max=1.0, gamma=0.9)
        policy = SoftmaxPolicy.for_mdp(mdp)
        weights = metropolis_weights(CommGraph.from_spec("ring", 4))
        assert weights.nu == pytest.approx(1 / 3)
        sampler = TransitionSampler(
            mdp, SamplingMode.IID, np.random.default_rng(5), state_dist=lambda p: discounted_visitation(mdp, p)
        )
        samples = sampler.draw_batch(policy, 2048)
        g = exact_policy_gradient(mdp, policy)

        stacked = np.concatenate(list(sample_scores(samples, policy)), axis=1)
        fisher = stacked.T @ stacked / len(samples)
        eigvals, eigvecs = np.linalg.eigh(fisher)
        kept = eigvals > 1e-10 * eigvals[-1]
        target = eigvecs[:, kept] @ ((eigvecs[:, kept].T @ g.ravel()) / eigvals[kept])
        nac = NacParams(inner_batch=2048, iterations=200, rounds=60, step=0.5 / eigvals[-1], radius=1e6)

        errors = []
        for iterations in (25, 50, 100, 200):
            h = nac_direction_solve(samples, policy, g, weights, nac, iterations=iterations)
            errors.append(float(np.linalg.norm(h.ravel() - target) / np.linalg.norm(target)))

        assert errors[-1] <= 0.05
        assert all(later <= earlier + 1e-9 for earlier, later in zip(errors, errors[1:]))

    def test_full_averaging_matches_centralized(self, small_mdp):
        """With full averaging each step is a centralized gradient step on the stacked quadratic."""
        policy = SoftmaxPolicy.for_mdp(small_mdp)
        sampler = TransitionSampler(small_mdp, SamplingMode.MARKOVIAN, np.random.default_rng(0))
        samples = sampler.draw_batch(policy, 64)
        g = np.random.default_rng(1).normal(size=(2, policy.d_theta))
        nac = NacParams(inner_batch=64, iterations=7, rounds=1, step=0.125, radius=1e6)

        h = nac_direction_solve(samples, policy, g, WeightMatrix.full_averaging(2), nac)

        scores = sample_scores(samples, policy)
        stacked = np.concatenate([scores[0], scores[1]], axis=1)
        expected = np.zeros(2 * policy.d_theta)
        for _ in range(7):
            expected = expected - 0.125 * (stacked.T @ (stacked @ expected) / 64 - g.ravel())
        assert np.allclose(h.ravel(), expected)


class TestNaturalActorCritic:
    """The natural actor-critic improves the objective."""

    def test_objective_improves(self):
        """With i.i.d. sampling and ``N_a = sqrt K`` the exact objective rises in at least 8 of 10 seeds."""
        mdp = make_random_mamdp(n_agents=2, n_states=3, action_counts=(2, 2), seed=0, r_max=1.0, gamma=0.9)
        weights = metropolis_weights(CommGraph.from_spec("ring", 2))
        features = default_features(mdp)
        horizon = 400
        schedule = make_schedule("sdac-empirical", horizon)
        options = RunOptions(diagnostics=Diagnostics(every=0))
        initial = objective(mdp, SoftmaxPolicy.for_mdp(mdp))

        improved = 0
        for seed in range(10):
            result = run_nac(
                mdp, weights, features, schedule, horizon, sampling_mode=SamplingMode.IID, seed=seed, options=options
            )
            final = objective(mdp, SoftmaxPolicy.for_mdp(mdp).with_theta(result.params.theta))
            improved += final > initial
        assert improved >= 8
