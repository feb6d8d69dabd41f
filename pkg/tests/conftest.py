"""Shared fixtures: meshes and spectral frames are expensive, build them once."""

import numpy as np
import pytest

from bubblebem import geometry, scattering, spectral

ORIGIN = np.zeros(3)


@pytest.fixture(scope="session")
def sphere1():
    return geometry.make_sphere(ORIGIN, 1.0, 1)


@pytest.fixture(scope="session")
def sphere2():
    return geometry.make_sphere(ORIGIN, 1.0, 2)


@pytest.fixture(scope="session")
def sphere3():
    return geometry.make_sphere(ORIGIN, 1.0, 3)


@pytest.fixture(scope="session")
def frame1(sphere1):
    return spectral.build_frame(sphere1)


@pytest.fixture(scope="session")
def frame2(sphere2):
    return spectral.build_frame(sphere2)


@pytest.fixture(scope="session")
def frame3(sphere3):
    return spectral.build_frame(sphere3)


@pytest.fixture(scope="session")
def volume2(sphere2):
    return geometry.make_volume_quadrature(sphere2, ORIGIN, 4)


@pytest.fixture(scope="session")
def volume3(sphere3):
    return geometry.make_volume_quadrature(sphere3, ORIGIN, 2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def exterior_sample():
    """20 fixed exterior points at radii 1.5 .. 3.0 about the origin."""
    gen = np.random.default_rng(5)
    dirs = gen.standard_normal((20, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return dirs * (1.5 + 1.5 * gen.random((20, 1)))


def canonical(eps):
    return scattering.canonical_medium(eps)
