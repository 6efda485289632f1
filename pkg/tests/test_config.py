"""Tests for the config module."""

from pathlib import Path

import pytest

from sdaclab.algos import NacSign, TdAt
from sdaclab.config import Algorithm, EnvironmentKind, RunConfig
from sdaclab.errors import ConfigurationError
from sdaclab.mamdp import SamplingMode
from sdaclab.schedule import ScheduleMode


class TestParsing:
    """Tests for reading INI text."""

    def test_defaults(self):
        """An empty file is the default configuration."""
        config = RunConfig.from_text("")
        assert config.run.algorithm is Algorithm.SDAC_RE
        assert config.run.horizon == 1000
        assert config.schedule.mode is ScheduleMode.SDAC_EMPIRICAL
        assert config.noise.sigma == 0.5
        assert config.noise.rounds == 2
        assert config.radii.critic is None

    def test_values(self):
        """Keys map onto typed fields, including renamed ones."""
        config = RunConfig.from_text(
            """
[run]
algorithm = sdac-noi
K = 50
K_c = 5
C_a = 2
td_at = pre
sampling = iid
iid_distribution = visitation
out = elsewhere

[environment]
kind = nav
side = 4
n_agents = 2
landmarks = 3, 12

[noise]
K_r = 3

[nac]
sign = descent

[radii]
critic = 10.0
reward = 2.5
"""
        )
        assert config.run.horizon == 50
        assert config.run.consensus_period == 5
        assert config.run.actor_steps == 2
        assert config.run.td_at is TdAt.PRE
        assert config.run.sampling is SamplingMode.IID
        assert config.run.out == Path("elsewhere")
        assert config.environment.kind is EnvironmentKind.NAV
        assert config.environment.landmarks == (3, 12)
        assert config.noise.rounds == 3
        assert config.nac.sign is NacSign.DESCENT
        assert config.radii.reward == 2.5

    def test_actions_broadcast(self):
        """A single action count applies to every agent."""
        config = RunConfig.from_text("[environment]\nn_agents = 3\nactions = 4\n")
        assert config.environment.action_counts == (4, 4, 4)
        config = RunConfig.from_text("[environment]\nn_agents = 2\nactions = 2, 3\n")
        assert config.environment.action_counts == (2, 3)

    def test_dldac_noise_default(self):
        """The double-loop baseline defaults to ``sigma = 0.1`` and its own schedule."""
        config = RunConfig.from_text("[run]\nalgorithm = dldac\n")
        assert config.noise.sigma == 0.1
        assert config.schedule.mode is ScheduleMode.DLDAC

    def test_tdac_schedule_default(self):
        """Two-timescale variants default to the tdac schedule."""
        assert RunConfig.from_text("[run]\nalgorithm = tdac-noi\n").schedule.mode is ScheduleMode.TDAC

    def test_from_file(self, tiny_ini):
        """Files parse like text."""
        config = RunConfig.from_file(tiny_ini)
        assert config.run.horizon == 20
        assert config.seeds == [0, 1]

    def test_missing_file(self, tmp_path):
        """A missing file is a configuration error."""
        with pytest.raises(ConfigurationError, match="not found"):
            RunConfig.from_file(tmp_path / "absent.ini")


class TestErrors:
    """Tests for rejected configurations."""

    def test_unknown_key(self):
        """Unknown keys are listed with the known ones."""
        with pytest.raises(ConfigurationError, match="Unknown keys in \\[run\\]: \\['Kc'\\]"):
            RunConfig.from_text("[run]\nKc = 3\n")

    def test_unknown_section(self):
        """Unknown sections are rejected."""
        with pytest.raises(ConfigurationError, match="Unknown sections"):
            RunConfig.from_text("[optimizer]\nlr = 0.1\n")

    def test_malformed(self):
        """Text outside sections is malformed."""
        with pytest.raises(ConfigurationError, match="Malformed"):
            RunConfig.from_text("K = 3\n")

    @pytest.mark.parametrize(
        ("text", "match"),
        [
            ("[run]\nalgorithm = ppo\n", "Invalid algorithm"),
            ("[run]\nK = many\n", "\\[run\\] K"),
            ("[run]\nK = -1\n", "nonnegative"),
            ("[run]\nK_c = 0\n", "positive"),
            ("[run]\nn_mc_runs = 0\n", "n_mc_runs"),
            ("[run]\nworkers = 0\n", "workers"),
            ("[run]\ntd_at = mid\n", "td_at"),
            ("[environment]\nkind = maze\n", "environment kind"),
            ("[environment]\nkind = file\n", "path"),
            ("[environment]\ngamma = 1.0\n", "gamma"),
            ("[diagnostics]\noracle = maybe\n", "boolean"),
            ("[diagnostics]\nevery = -1\n", "cadence"),
            ("[noise]\nsigma = -0.5\n", "sigma"),
            ("[radii]\ncritic = 3.0\n", "both"),
        ],
    )
    def test_invalid(self, text, match):
        """Invalid values fail with a message naming the problem."""
        with pytest.raises(ConfigurationError, match=match):
            RunConfig.from_text(text)

    def test_schedule_contradicts_algorithm(self):
        """Schedule families must fit the algorithm."""
        with pytest.raises(ConfigurationError, match="cannot run"):
            RunConfig.from_text("[run]\nalgorithm = sdac-re\n[schedule]\nmode = dldac\n")
        with pytest.raises(ConfigurationError, match="cannot run"):
            RunConfig.from_text("[run]\nalgorithm = dldac\n[schedule]\nmode = tdac\n")
        with pytest.raises(ConfigurationError, match="needs the tdac schedule"):
            RunConfig.from_text("[run]\nalgorithm = tdac-re\n[schedule]\nmode = sdac-theory\n")


class TestResolvedConfiguration:
    """Tests for writing and overriding configurations."""

    def test_to_ini_round_trip(self):
        """The resolved INI text parses back to the same configuration."""
        config = RunConfig.from_text(
            "[run]\nalgorithm = nac\nK = 7\n[nac]\nN_a = 4\nstep = 0.1\n[environment]\nlandmarks = 0, 8\n"
        )
        text = config.to_ini()
        assert "[nac]\nN_a = 4\nK_a =\n" in text
        assert "mode = sdac-empirical" in text
        assert RunConfig.from_text(text) == config

    def test_overrides(self):
        """Schedule and NAC overrides hold only what was set."""
        config = RunConfig.from_text("[schedule]\nbeta = 0.0\n[nac]\nK_a = 3\n")
        assert config.schedule.overrides() == {"beta": 0.0}
        assert config.nac.overrides() == {"iterations": 3, "rounds": 5, "radius": 100.0, "sign": NacSign.ASCENT}

    def test_with_run(self):
        """Run overrides replace fields and ignore None."""
        config = RunConfig().with_run(seed=7, out=None, n_mc_runs=2)
        assert config.run.seed == 7
        assert config.run.out == Path("results")
        assert config.seeds == [7, 8]

    def test_with_run_validates(self):
        """Run overrides are validated."""
        with pytest.raises(ConfigurationError):
            RunConfig().with_run(workers=0)
