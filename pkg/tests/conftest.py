import math

import numpy as np
import pytest

from wallflow import SpatialGrid


def far_from_crossings(a: float, max_order: int = 40, tol: float = 1e-4) -> bool:
    """True if a is at least tol away from every p/(p+q) with p, q <= max_order."""
    for p in range(1, max_order + 1):
        for q in range(1, max_order + 1):
            if abs(a - p / (p + q)) < tol:
                return False
    return True


def random_noncrossing(rng: np.random.Generator, lo: float, hi: float,
                       tol: float = 1e-4) -> float:
    for _ in range(1000):
        a = float(rng.uniform(lo, hi))
        if far_from_crossings(a, tol=tol):
            return a
    raise RuntimeError("could not sample a non-crossing position")


@pytest.fixture
def grid_small() -> SpatialGrid:
    return SpatialGrid(n=511)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
