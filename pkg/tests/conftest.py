import functools

import numpy as np
import pytest

from curvflow.mesh import make_icosphere, make_revolution, make_torus


@functools.lru_cache(maxsize=None)
def icosphere(radius=1.0, subdivisions=3):
    return make_icosphere(radius, subdivisions)


@functools.lru_cache(maxsize=None)
def torus(R, a, nu, nv):
    return make_torus(R, a, nu, nv)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def dumbbell(n_meridian=120, n_around=48, neck=0.3):
    """Two round lobes joined by a thin neck of radius ``neck`` at z = 0."""

    def profile(s):
        z = -2.0 + 4.0 * np.asarray(s, dtype=float)
        w = np.sqrt(np.clip(1.0 - (z / 2.0) ** 2, 0.0, None))
        q = (neck / 2) ** 2 + (1 - (neck / 2) ** 2) * np.sin(np.pi * z / 4) ** 2
        return 2 * w * np.sqrt(q), z

    return make_revolution(profile, n_meridian, n_around)


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(1.0, 4)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(1.0, 3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
