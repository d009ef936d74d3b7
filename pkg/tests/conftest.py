"""Shared small-grid fixtures"""

import math

import numpy as np
import pytest

from modules.geometry import Domain, build_grid, constant_field
from modules.operators import assemble_generator


def kv_generator(n: int = 20, a: float = 1.0, b: float = 1.0, c: float = 1.0,
                 L: float = math.pi, square: bool = False):
    domain = Domain.square(L) if square else Domain.interval(L)
    grid = build_grid(domain, n)
    return assemble_generator(grid, a, constant_field(grid, b, 'b'), constant_field(grid, c, 'c'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def damped_1d():
    return kv_generator(n=20)


@pytest.fixture
def conservative_1d():
    return kv_generator(n=20, b=0.0, c=0.0)


@pytest.fixture
def coupled_conservative_1d():
    """b = 0, c = 1: coupling exchanges energy but never dissipates it"""
    return kv_generator(n=20, b=0.0, c=1.0)


@pytest.fixture
def damped_2d():
    return kv_generator(n=6, a=2.0, b=0.5, c=1.5, L=1.0, square=True)


@pytest.fixture
def config_document(tmp_path):
    """Minimal valid simulate document writing under tmp_path"""
    return {
        'name': 'tiny',
        'pipeline': 'simulate',
        'domain': {'kind': 'interval', 'L': 1.0},
        'grid': {'n': 10},
        'coefficients': {'a': 1.0},
        'params': {'dt': 0.05, 't_final': 0.5},
        'output': {'dir': str(tmp_path / 'runs')},
        'workers': 1,
    }


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ('KVLAB_OUT_DIR', 'KVLAB_WORKERS', 'KVLAB_SEED', 'KVLAB_RUN_INDEX', 'KVLAB_LOG_LEVEL'):
        monkeypatch.delenv(var, raising=False)
