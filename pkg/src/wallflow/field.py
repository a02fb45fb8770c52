"""Spatial grid, bump profile and potential-wall evaluation.

Everything lives on the unit interval (0, 1) with homogeneous Dirichlet
conditions; the grid stores interior points only so that the Hamiltonian
stays symmetric tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnderResolved

# Normalisation of the cubic bump: int_{-1}^{1} (1-s^2)^3 ds = 32/35.
RHO_COEFF = 35.0 / 32.0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform interior grid x_i = i*h, i = 1..n, with h = 1/(n+1)."""

    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"need at least 16 interior points, got n={self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(1, self.n + 1) * self.h

    def resolves(self, eta: float) -> bool:
        """At least 16 points across a wall support of width 2/eta."""
        return self.h <= 1.0 / (8.0 * eta)


def resolving_grid(eta_max: float) -> SpatialGrid:
    """Smallest grid with n+1 a power of two that resolves walls of sharpness eta_max."""
    m = 1
    while m < 8.0 * eta_max:
        m *= 2
    return SpatialGrid(n=max(m - 1, 16))


def rho(s) -> np.ndarray | float:
    """Compactly supported C^2 bump (35/32)(1-s^2)^3 on [-1, 1], unit mass."""
    s = np.asarray(s, dtype=float)
    w = 1.0 - s * s
    out = np.where(np.abs(s) <= 1.0, RHO_COEFF * w * w * w, 0.0)
    return out if out.ndim else float(out)


def rho_eta(x, eta: float) -> np.ndarray | float:
    """Sharpness-eta rescaling eta*rho(eta*x); mass stays 1 for every eta > 0."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return eta * rho(np.asarray(x, dtype=float) * eta)


@dataclass(frozen=True)
class WallState:
    """One wall: height I, sharpness eta, position a in (0, 1)."""

    I: float
    eta: float
    a: float

    def __post_init__(self):
        if self.I < 0:
            raise ValueError(f"wall height must be >= 0, got I={self.I}")
        if self.eta <= 0:
            raise ValueError(f"wall sharpness must be > 0, got eta={self.eta}")
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"wall position must lie in (0,1), got a={self.a}")
        if self.a - 1.0 / self.eta <= 0.0 or self.a + 1.0 / self.eta >= 1.0:
            raise ValueError(
                f"wall support [{self.a - 1/self.eta:.4g}, {self.a + 1/self.eta:.4g}] "
                "must be contained in (0,1)"
            )

    @property
    def support(self) -> tuple[float, float]:
        return (self.a - 1.0 / self.eta, self.a + 1.0 / self.eta)


@dataclass(frozen=True)
class PotentialField:
    """Superposition of walls; protocols, not this class, demand disjoint supports."""

    walls: tuple[WallState, ...]

    def __post_init__(self):
        if len(self.walls) < 1:
            raise ValueError("a potential field needs at least one wall")
        object.__setattr__(self, "walls", tuple(self.walls))

    @property
    def max_eta(self) -> float:
        return max(w.eta for w in self.walls)


def single_wall(I: float, eta: float, a: float) -> PotentialField:
    return PotentialField(walls=(WallState(I=I, eta=eta, a=a),))


def potential_on_grid(
    fld: PotentialField, grid: SpatialGrid, strict_resolution: bool = True
) -> np.ndarray:
    """Sample V(x_i) = sum_j I_j * rho_eta(x_i - a_j).

    Raises UnderResolved when the grid cannot represent the sharpest wall,
    unless strict_resolution is False (used only by deliberately
    under-resolved stress runs; unitarity does not depend on resolution).
    """
    if strict_resolution:
        for w in fld.walls:
            if w.I > 0 and not grid.resolves(w.eta):
                raise UnderResolved(
                    f"h={grid.h:.3e} > 1/(8 eta)={1.0/(8*w.eta):.3e} for eta={w.eta}"
                )
    x = grid.x
    V = np.zeros(grid.n)
    for w in fld.walls:
        if w.I == 0.0:
            continue
        V += w.I * rho_eta(x - w.a, w.eta)
    return V


def wall_values_on_grid(
    n: int, h: float, I: float, eta: float, a: float
) -> np.ndarray:
    """Single-wall V on an interior grid, loop-free helper shared with the stepper."""
    x = np.arange(1, n + 1) * h
    u = eta * (x - a)
    w = 1.0 - u * u
    return np.where(np.abs(u) < 1.0, I * eta * RHO_COEFF * w * w * w, 0.0)
