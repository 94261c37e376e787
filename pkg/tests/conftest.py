"""Shared fixtures: expensive integrations run once per session."""

import numpy as np
import pytest

from nospin.core import Cluster, MassSystem
from nospin.dynamics import integrate, scenario_library


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit3():
    return MassSystem([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def lagrange_collision_run():
    sc = scenario_library("lagrange_homothetic_collision", {"masses": [1.0, 1.0, 1.0]})
    return sc, integrate(sc)


@pytest.fixture(scope="session")
def binary_collision_run():
    sc = scenario_library("binary_plus_spectator_collision", {})
    return sc, integrate(sc)


@pytest.fixture(scope="session")
def pair_escaper_run():
    sc = scenario_library("parabolic_pair_plus_escaper", {"horizon": 1e6})
    return sc, integrate(sc)


@pytest.fixture(scope="session")
def lagrange_parabolic_run():
    sc = scenario_library("lagrange_parabolic", {"masses": [1.0, 1.0, 1.0]})
    return sc, integrate(sc)


def equilateral(side=1.0):
    """Unit-mass equilateral triangle centered at the origin."""
    R = side / np.sqrt(3.0)
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    return R * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def rotation(alpha):
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s], [s, c]])


def all_bodies(sys):
    return Cluster.everything(sys)
