# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""
Pytest auto configuration.

This module is run automatically by pytest, to define and enable fixtures.
"""

import os
import warnings

import pytest

from graformer.autodiff import make_rng


# Pytest will rewrite assertions in test modules, but not elsewhere.
# This tells pytest to also rewrite assertions in graformertest.py.
pytest.register_assert_rewrite("tests.graformertest")
pytest.register_assert_rewrite("tests.helpers")


@pytest.fixture(autouse=True)
def set_warnings():
    """Configure warnings to show while running tests."""
    warnings.simplefilter("default")
    warnings.simplefilter("once", DeprecationWarning)


@pytest.fixture(autouse=True)
def clean_graformer_environ(monkeypatch):
    """Don't let the developer's environment leak into the tests."""
    for name in list(os.environ):
        if name.startswith("GRFK_"):
            monkeypatch.delenv(name)


@pytest.fixture
def rng():
    """A freshly seeded random generator for each test."""
    return make_rng(12345)
