"""Pytest configuration file.

This file contains fixtures and configuration for pytest.
"""

import shutil
import sys
from pathlib import Path

import numpy as np
import pytest

from sdaclab.features import SoftmaxPolicy, default_features
from sdaclab.mamdp import TabularMAMDP, make_random_mamdp
from sdaclab.topology import CommGraph, metropolis_weights


@pytest.fixture()
def sdaclab_path():
    """Pytest fixture that provides the path to the sdaclab executable.

    Looks in PATH first, then beside the Python interpreter (virtual environments).

    Raises:
        RuntimeError: If the sdaclab executable cannot be found.

    """
    exe = shutil.which("sdaclab")
    if exe:
        return exe
    python_dir = Path(sys.executable).parent
    for name in ("sdaclab", "sdaclab.exe"):
        candidate = python_dir / name
        if candidate.is_file():
            return str(candidate)
    msg = "sdaclab executable not found in PATH or virtual environment"
    raise RuntimeError(msg)


@pytest.fixture()
def small_mdp() -> TabularMAMDP:
    """Random 4-state MDP with two agents of two actions each."""
    return make_random_mamdp(n_agents=2, n_states=4, action_counts=(2, 2), seed=3, r_max=1.0, gamma=0.9)


@pytest.fixture()
def small_features(small_mdp):
    """Tabular critic and reward features of ``small_mdp``."""
    return default_features(small_mdp)


@pytest.fixture()
def pair_weights():
    """Metropolis weights of the two-node graph (exact averaging)."""
    return metropolis_weights(CommGraph(2, frozenset({(0, 1)})))


@pytest.fixture()
def ring5():
    """Metropolis weights of the 5-node ring."""
    return metropolis_weights(CommGraph.from_spec("ring", 5))


@pytest.fixture()
def random_policy(small_mdp):
    """Tabular softmax policy of ``small_mdp`` at a fixed random parameter."""
    policy = SoftmaxPolicy.for_mdp(small_mdp)
    theta = np.random.default_rng(11).normal(size=policy.theta.shape)
    return policy.with_theta(theta)


@pytest.fixture()
def two_state_mdp() -> TabularMAMDP:
    """Single agent, two states, two actions; the next state ignores the action.

    From either state the chain stays with probability 0.7, so with a uniform initial
    distribution every state distribution of interest is uniform. Rewards depend on the action.
    """
    rows = np.array([[0.7, 0.3], [0.7, 0.3], [0.3, 0.7], [0.3, 0.7]])
    rewards = np.array([[[1.0, 0.0], [0.0, 0.5]]])
    return TabularMAMDP(
        n_agents=1,
        n_states=2,
        action_counts=(2,),
        transition=rows,
        rewards=rewards,
        gamma=0.9,
        init_dist=np.array([0.5, 0.5]),
        r_max=1.0,
    )


TINY_INI = """\
[run]
algorithm = {algorithm}
K = 20
n_mc_runs = 2
seed = 0

[environment]
kind = random
n_agents = 2
n_states = 3
actions = 2
seed = 1

[diagnostics]
every = 5
"""


@pytest.fixture()
def write_ini(tmp_path):
    """Return a function that writes INI text to a file under ``tmp_path``."""

    def _write(text: str, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture()
def experiment_text():
    """INI template of a small experiment with an ``{algorithm}`` placeholder."""
    return TINY_INI


@pytest.fixture()
def tiny_ini(write_ini):
    """Small two-seed sdac-re experiment that runs in well under a second."""
    return write_ini(TINY_INI.format(algorithm="sdac-re"))


@pytest.fixture()
def absorbing_mdp() -> TabularMAMDP:
    """Two absorbing states: the chain never mixes."""
    rows = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    return TabularMAMDP(
        n_agents=1,
        n_states=2,
        action_counts=(2,),
        transition=rows,
        rewards=np.array([[[0.5, -0.5], [0.25, 1.0]]]),
        gamma=0.9,
        init_dist=np.array([0.5, 0.5]),
        r_max=1.0,
    )
