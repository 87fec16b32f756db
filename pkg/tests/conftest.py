"""
Shared test setup: project root on sys.path and paths to the bundled case files.
Run from project root: python -m pytest
"""
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture
def case2_path():
    return fixture_path("case2.m")


@pytest.fixture
def case4_path():
    return fixture_path("case4_path.m")


@pytest.fixture
def case14_path():
    return fixture_path("case14.m")
