import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hoipose.geometry import TriangleMesh

CUBE_TRIS = np.array([
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
    [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
], dtype=np.int32)


def box_vertices(size=1.0, center=(0.0, 0.0, 0.0)):
    s = np.asarray(size, dtype=np.float64) * np.ones(3) / 2.0
    c = np.asarray(center, dtype=np.float64)
    return np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                    dtype=np.float64) * s + c


def make_box(size=1.0, center=(0.0, 0.0, 0.0)):
    return TriangleMesh(box_vertices(size, center), CUBE_TRIS)


@pytest.fixture
def unit_cube():
    """Axis-aligned cube with corners at 0 and 1."""
    return make_box(1.0, (0.5, 0.5, 0.5))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240817))
