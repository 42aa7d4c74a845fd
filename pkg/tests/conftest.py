"""Shared fixtures: canonical drift structures and coefficient fields."""

import numpy as np
import pytest

from kolkin import block_structure, make_coefficients


@pytest.fixture(scope="session")
def S2():
    """Kinetic (position-velocity) structure: N = 2, d = 1, weights (1, 3)."""
    return block_structure(np.array([[0.0, 0.0], [1.0, 0.0]]), d=1)


@pytest.fixture(scope="session")
def S3():
    """Chain of length three: N = 3, d = 1, weights (1, 3, 5)."""
    B = np.zeros((3, 3))
    B[1, 0] = 1.0
    B[2, 1] = 1.0
    return block_structure(B, d=1)


@pytest.fixture(scope="session")
def cf_const():
    return make_coefficients("constant", d=1, sigma2=1.0)


@pytest.fixture(scope="session")
def cf_sin():
    return make_coefficients("space-sinusoidal", d=1, base=1.0, amplitude=0.3)


@pytest.fixture(scope="session")
def cf_piecewise():
    return make_coefficients(
        "time-piecewise", d=1, values=(1.0, 2.0), breaks=(0.5,)
    )
