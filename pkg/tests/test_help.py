"""Tests for the help output of the installed executable."""

import subprocess

import pytest


def test_no_args(sdaclab_path):
    """Test that running without a command prints the help."""
    result = subprocess.run([sdaclab_path], capture_output=True, text=True, check=True)
    assert "Usage" in result.stdout


def test_help(sdaclab_path):
    """Test the help option."""
    result = subprocess.run([sdaclab_path, "--help"], capture_output=True, text=True, check=True)
    assert "Decentralized single-timescale actor-critic lab" in result.stdout


@pytest.mark.parametrize("command", ["run", "ablate-kc", "compare", "plotdata", "validate", "version"])
def test_command_help(sdaclab_path, command):
    """Test the help of every command."""
    result = subprocess.run([sdaclab_path, command, "--help"], capture_output=True, text=True, check=True)
    assert "Usage" in result.stdout
