"""Complex grid states and the h-weighted L2 geometry they live in."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroNorm
from .field import SpatialGrid


@dataclass(frozen=True)
class WaveFunction:
    """Complex values at the interior grid points of a SpatialGrid."""

    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        if v.shape != (self.grid.n,):
            raise ValueError(f"values shape {v.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(v.view(np.float64))):
            raise ValueError("wavefunction contains non-finite entries")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.h * np.sum(np.abs(self.values) ** 2)))

    def normalized(self) -> "WaveFunction":
        nrm = self.norm()
        if nrm < 1e-14:
            raise ZeroNorm("cannot normalize a numerically zero state")
        return WaveFunction(self.values / nrm, self.grid)


def inner(u: WaveFunction, v: WaveFunction) -> complex:
    """h-weighted inner product <u|v>, conjugate-linear in the first slot."""
    if u.grid != v.grid:
        raise ValueError("states live on different grids")
    return complex(u.grid.h * np.vdot(u.values, v.values))


def free_mode(k: int, grid: SpatialGrid) -> WaveFunction:
    """Unit-norm k-th Dirichlet mode sqrt(2) sin(k pi x); exact on the uniform grid."""
    if k < 1:
        raise ValueError(f"mode index must be >= 1, got {k}")
    return WaveFunction(np.sqrt(2.0) * np.sin(k * np.pi * grid.x) + 0j, grid)
