"""Shared fixtures: tiny meshes and a fixed-seed generator."""
import numpy as np
import pytest

from dgcns.mesh import build_rect_mesh


@pytest.fixture(scope="session")
def mesh1():
    """Single unit-square cell: 2 triangles, the smallest usable mesh."""
    return build_rect_mesh(1, 1)


@pytest.fixture(scope="session")
def mesh2():
    """2x2 unit square: 8 triangles, the standard oracle-size mesh."""
    return build_rect_mesh(2, 2)


@pytest.fixture(scope="session")
def mesh3():
    """Non-square cells on a rectangle, to catch square-only assumptions."""
    return build_rect_mesh(3, 2, (0.0, 2.0, 0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
