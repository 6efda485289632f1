"""Tests for the mamdp module."""

import json

import numpy as np
import pytest
from scipy import sparse

from sdaclab.errors import CapacityError, ConfigurationError, ContractViolation
from sdaclab.features import SoftmaxPolicy
from sdaclab.mamdp import (
    NavGridSpec,
    SamplingMode,
    TabularMAMDP,
    TransitionSampler,
    categorical,
    compile_nav_grid,
    make_random_mamdp,
    mean_reward,
    sample_iid,
    step_env,
)


class TestTabularMAMDP:
    """Tests for MDP construction and validation."""

    def test_random_mdp_is_valid(self):
        """Random MDPs are stochastic, bounded and floored."""
        mdp = make_random_mamdp(n_agents=3, n_states=10, action_counts=(2, 2, 2), seed=0, r_max=1.0)
        assert mdp.transition.shape == (80, 10)
        assert np.allclose(mdp.transition.sum(axis=1), 1.0)
        assert mdp.transition.min() > 0
        assert np.abs(mdp.rewards).max() <= 1.0
        assert mdp.gamma == 0.95
        assert np.allclose(mdp.init_dist, 0.1)

    def test_random_mdp_is_seeded(self):
        """The same seed gives the same MDP."""
        first = make_random_mamdp(2, 4, (2, 3), seed=5, r_max=2.0)
        second = make_random_mamdp(2, 4, (2, 3), seed=5, r_max=2.0)
        assert np.array_equal(first.transition, second.transition)
        assert np.array_equal(first.rewards, second.rewards)

    def test_arrays_are_read_only(self, small_mdp):
        """Transition and reward tables cannot be modified in place."""
        with pytest.raises(ValueError, match="read-only"):
            small_mdp.rewards[0, 0, 0] = 5.0

    @pytest.mark.parametrize(
        ("kwargs", "message"),
        [
            ({"n_states": 1}, "at least 2 states"),
            ({"action_counts": (2, 1)}, "at least 2 actions"),
            ({"r_max": 0.0}, "r_max"),
        ],
    )
    def test_random_mdp_rejects(self, kwargs, message):
        """Degenerate dimensions are configuration errors."""
        arguments = {"n_agents": 2, "n_states": 3, "action_counts": (2, 2), "seed": 0, "r_max": 1.0} | kwargs
        with pytest.raises(ConfigurationError, match=message):
            make_random_mamdp(**arguments)

    def test_rows_must_sum_to_one(self, two_state_mdp):
        """Sub-stochastic rows are rejected."""
        transition = np.array(two_state_mdp.transition)
        transition[0] = [0.5, 0.4]
        with pytest.raises(ConfigurationError, match="sum to 1"):
            TabularMAMDP(1, 2, (2,), transition, two_state_mdp.rewards, 0.9, two_state_mdp.init_dist, 1.0)

    def test_reward_bound(self, two_state_mdp):
        """Rewards beyond ``r_max`` are rejected."""
        with pytest.raises(ConfigurationError, match="r_max"):
            TabularMAMDP(1, 2, (2,), two_state_mdp.transition, two_state_mdp.rewards, 0.9, two_state_mdp.init_dist, 0.5)

    def test_discount_range(self, two_state_mdp):
        """The discount must lie in [0, 1)."""
        with pytest.raises(ConfigurationError, match="Discount"):
            TabularMAMDP(1, 2, (2,), two_state_mdp.transition, two_state_mdp.rewards, 1.0, two_state_mdp.init_dist, 1.0)

    def test_joint_index_is_c_order(self):
        """Joint actions flatten in C order, the last agent varying fastest."""
        mdp = make_random_mamdp(3, 2, (2, 3, 2), seed=0, r_max=1.0)
        assert mdp.joint_index((0, 0, 1)) == 1
        assert mdp.joint_index((0, 1, 0)) == 2
        assert mdp.joint_index((1, 0, 0)) == 6
        assert mdp.joint_table[7].tolist() == [1, 0, 1]

    def test_json_round_trip(self, small_mdp, tmp_path):
        """An MDP written as JSON loads back unchanged."""
        path = tmp_path / "mdp.json"
        path.write_text(json.dumps(small_mdp.to_json()))
        loaded = TabularMAMDP.from_json(path)
        assert np.array_equal(loaded.transition, small_mdp.transition)
        assert np.array_equal(loaded.rewards, small_mdp.rewards)
        assert loaded.gamma == small_mdp.gamma


class TestStepEnv:
    """Tests for ``step_env`` and ``mean_reward``."""

    def test_rewards_are_local(self, small_mdp):
        """Each agent receives its own reward table entry."""
        rng = np.random.default_rng(0)
        _, rewards = step_env(small_mdp, 1, (1, 0), rng)
        assert np.array_equal(rewards, small_mdp.rewards[:, 1, small_mdp.joint_index((1, 0))])

    def test_next_state_distribution(self, two_state_mdp):
        """Empirical next-state frequencies match the transition row."""
        rng = np.random.default_rng(1)
        draws = [step_env(two_state_mdp, 0, 1, rng)[0] for _ in range(20000)]
        assert np.mean(np.asarray(draws) == 0) == pytest.approx(0.7, abs=0.015)

    def test_out_of_bounds(self, small_mdp):
        """Invalid states are contract violations."""
        with pytest.raises(ContractViolation):
            step_env(small_mdp, 99, 0, np.random.default_rng(0))

    def test_unknown_environment(self):
        """Only tabular MDPs and navigation grids can be stepped."""
        with pytest.raises(ContractViolation, match="Cannot step"):
            step_env(object(), 0, 0, np.random.default_rng(0))

    def test_mean_reward(self, small_mdp):
        """The network-mean reward averages the local rewards."""
        a = small_mdp.joint_index((0, 1))
        assert mean_reward(small_mdp, 2, a) == pytest.approx(small_mdp.rewards[:, 2, a].mean())


class TestSampling:
    """Tests for i.i.d. and Markovian sampling."""

    def test_iid_state_law(self, two_state_mdp):
        """i.i.d. draws follow the given state distribution."""
        rng = np.random.default_rng(2)
        policy = SoftmaxPolicy.for_mdp(two_state_mdp)
        states = [sample_iid(two_state_mdp, np.array([0.2, 0.8]), policy, rng).s for _ in range(20000)]
        assert np.mean(np.asarray(states) == 1) == pytest.approx(0.8, abs=0.015)

    def test_iid_rejects_non_distribution(self, two_state_mdp):
        """The sampling distribution must be a probability vector."""
        policy = SoftmaxPolicy.for_mdp(two_state_mdp)
        with pytest.raises(ContractViolation):
            sample_iid(two_state_mdp, np.array([0.5, 0.6]), policy, np.random.default_rng(0))

    def test_markovian_chain_continues(self, small_mdp):
        """Consecutive Markovian samples share their boundary state."""
        sampler = TransitionSampler(small_mdp, SamplingMode.MARKOVIAN, np.random.default_rng(3))
        batch = sampler.draw_batch(SoftmaxPolicy.for_mdp(small_mdp), 50)
        for previous, current in zip(batch, batch[1:], strict=False):
            assert current.s == previous.s_next
        assert sampler.drawn == 50

    def test_iid_needs_state_law(self, small_mdp):
        """i.i.d. sampling without a state distribution is a configuration error."""
        with pytest.raises(ConfigurationError):
            TransitionSampler(small_mdp, SamplingMode.IID, np.random.default_rng(0))

    def test_iid_distribution_is_cached_per_policy(self, small_mdp):
        """The state law is recomputed only when the policy parameter changes."""
        calls = []

        def law(policy):
            calls.append(policy)
            return np.full(small_mdp.n_states, 1.0 / small_mdp.n_states)

        sampler = TransitionSampler(small_mdp, SamplingMode.IID, np.random.default_rng(0), state_dist=law)
        policy = SoftmaxPolicy.for_mdp(small_mdp)
        sampler.draw_batch(policy, 5)
        sampler.draw(policy.with_theta(policy.theta + 1.0))
        assert len(calls) == 2

    def test_sampling_mode_from_str(self):
        """Sampling modes parse from configuration strings."""
        assert SamplingMode.from_str("iid") is SamplingMode.IID
        with pytest.raises(ConfigurationError, match="markovian"):
            SamplingMode.from_str("batch")

    def test_categorical_single_draw(self):
        """A categorical draw consumes exactly one uniform."""
        rng, twin = np.random.default_rng(4), np.random.default_rng(4)
        categorical(rng, np.array([0.2, 0.3, 0.5]))
        twin.random()
        assert rng.random() == twin.random()


class TestNavGrid:
    """Tests for the cooperative navigation grid."""

    def test_default_landmarks(self):
        """Landmarks spread over the cells by default."""
        spec = NavGridSpec(side=3, n_agents=3)
        assert spec.landmarks == (0, 3, 6)

    def test_compiled_kernel_is_deterministic(self):
        """Every compiled transition row has a single successor."""
        mdp = compile_nav_grid(NavGridSpec(side=2, n_agents=2))
        assert sparse.issparse(mdp.transition)
        assert mdp.n_states == 16
        assert mdp.n_joint_actions == 25
        assert np.all(np.diff(mdp.transition.indptr) == 1)

    def test_moves_clamp_at_border(self):
        """Moving up from the top row stays in place; moving down goes one row lower."""
        spec = NavGridSpec(side=3, n_agents=1)
        assert spec.move(np.array([1]), np.array([1])).tolist() == [1]
        assert spec.move(np.array([1]), np.array([2])).tolist() == [4]

    def test_reward_distance_and_collision(self):
        """Rewards are minus the distance to the landmark minus the collision penalty."""
        spec = NavGridSpec(side=3, n_agents=2, landmarks=(0, 8), collision_penalty=0.5)
        rewards = spec.local_rewards(np.array([4, 4]))
        assert rewards.tolist() == [-2.5, -2.5]

    def test_reward_ignores_action(self):
        """Compiled rewards depend on the current state only."""
        mdp = compile_nav_grid(NavGridSpec(side=2, n_agents=2))
        assert np.all(mdp.rewards == mdp.rewards[:, :, :1])

    def test_step_matches_compiled(self):
        """Stepping the grid spec agrees with the compiled MDP."""
        spec = NavGridSpec(side=3, n_agents=2)
        mdp = compile_nav_grid(spec)
        rng = np.random.default_rng(0)
        for s, a in [(0, (4, 2)), (40, (1, 3)), (80, (0, 0))]:
            s_spec, r_spec = step_env(spec, s, a, rng)
            s_mdp, r_mdp = step_env(mdp, s, a, rng)
            assert s_spec == s_mdp
            assert np.allclose(r_spec, r_mdp)

    @pytest.mark.parametrize(("s", "a"), [(81, (0, 0)), (-1, (0, 0)), (0, (5, 0)), (0, (0, -1)), (0, (1,)), (0, 25)])
    def test_step_out_of_bounds(self, s, a):
        """Stepping the grid spec rejects states and actions outside the grid."""
        with pytest.raises(ContractViolation, match="out of bounds"):
            step_env(NavGridSpec(side=3, n_agents=2), s, a, np.random.default_rng(0))

    def test_step_flat_action(self):
        """Flattened joint actions index the per-agent moves in C order."""
        spec = NavGridSpec(side=3, n_agents=2)
        rng = np.random.default_rng(0)
        assert step_env(spec, 40, 8, rng)[0] == step_env(spec, 40, (1, 3), rng)[0]

    def test_state_cap(self):
        """Grids beyond the state cap must be simulated, not compiled."""
        with pytest.raises(CapacityError):
            compile_nav_grid(NavGridSpec(side=3, n_agents=3), state_cap=100)

    def test_landmark_outside_grid(self):
        """Landmarks must be grid cells."""
        with pytest.raises(ConfigurationError, match="outside"):
            NavGridSpec(side=2, n_agents=1, landmarks=(4,))
