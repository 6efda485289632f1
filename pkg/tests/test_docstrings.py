"""Run the examples embedded in the package docstrings."""

import doctest
import importlib
import pkgutil

import pytest

import sdaclab

MODULES = sorted(info.name for info in pkgutil.walk_packages(sdaclab.__path__, prefix="sdaclab."))


@pytest.mark.parametrize("name", MODULES)
def test_module_doctests(name):
    """Every docstring example of a module holds."""
    module = importlib.import_module(name)
    results = doctest.testmod(module, verbose=False, optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE)
    assert results.failed == 0, f"{results.failed}/{results.attempted} doctests failed in {name}"


def test_examples_exist():
    """The numerical modules carry runnable examples."""
    attempted = sum(doctest.testmod(importlib.import_module(name), verbose=False).attempted for name in MODULES)
    assert attempted > 0
