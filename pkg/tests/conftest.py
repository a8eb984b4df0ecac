"""
Shared fixtures for the mechsqueeze test suite
"""

import warnings
from pathlib import Path

import numpy as np
import pytest

from mechsqueeze.core.langevin import build_model
from mechsqueeze.core.params import table1_params

REPO_ROOT = Path(__file__).resolve().parents[1]
TABLE1_FILE = REPO_ROOT / "params" / "table1.toml"


@pytest.fixture(scope="session")
def table1():
    """Published parameter set"""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return table1_params()


@pytest.fixture(scope="session")
def table1_model(table1):
    return build_model(table1)


@pytest.fixture
def params_file():
    return TABLE1_FILE


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
