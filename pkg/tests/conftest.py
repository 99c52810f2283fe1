import numpy as np
import pytest

import gradflow as gf


@pytest.fixture(scope="session")
def two_cell():
    """Uniform two-cell mesh on [0, 1] with the flat potential."""
    mesh = gf.build_interval_mesh(2)
    pot = gf.zero_potential()
    pi = gf.discretize_reference(mesh, pot)
    weights = gf.face_weights(mesh, pot)
    return mesh, pot, pi, weights


@pytest.fixture(scope="session")
def chain10():
    """Ten-cell uniform interval mesh with the flat potential."""
    mesh = gf.build_interval_mesh(10)
    pot = gf.zero_potential()
    pi = gf.discretize_reference(mesh, pot)
    weights = gf.face_weights(mesh, pot)
    return mesh, pot, pi, weights


@pytest.fixture(scope="session")
def grid4():
    """4x4 cartesian mesh on the unit square with the flat potential."""
    mesh = gf.build_cartesian_mesh(4, 4)
    pot = gf.zero_potential()
    pi = gf.discretize_reference(mesh, pot)
    weights = gf.face_weights(mesh, pot)
    return mesh, pot, pi, weights


def random_positive_measure(rng, n, low=0.1, high=1.0):
    return gf.DiscreteMeasure.normalized(rng.uniform(low, high, n))
