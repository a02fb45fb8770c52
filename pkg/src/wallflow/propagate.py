"""Norm-preserving time integration of the wall-driven Schrodinger equation.

One Crank-Nicolson (Cayley) step with midpoint field sampling:

    (1 + i dt/2 H(t_mid)) psi' = (1 - i dt/2 H(t_mid)) psi

The rational step is exactly unitary, so norm is preserved to rounding at
any dt; dt only controls phase accuracy, budgeted per stage through
lambda_track.  A numba kernel carries the long runs; a scipy banded-solve
reference implements the identical arithmetic for cross-checking.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .control import ControlPath, Stage
from .errors import LinearSolveFailure, UnderResolved, ZeroNorm
from .field import RHO_COEFF, PotentialField, SpatialGrid, potential_on_grid
from .spectral import SpectralDecomposition, assemble
from .state import WaveFunction, inner

try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*a, **k):  # type: ignore
        def deco(f):
            return f

        return deco


@njit(cache=True)
def _kernel(psis, params, h, dt, rho_coeff):  # pragma: no cover - jitted
    """Advance a batch of states through len(params) CN steps.

    psis: (B, n) complex, updated in place.
    params: (steps, J, 3) wall parameters (I, eta, a) at step midpoints.
    """
    B, n = psis.shape
    steps, J, _ = params.shape
    inv_h2 = 1.0 / (h * h)
    half = 0.5 * dt
    off = -inv_h2
    eoff = 1j * half * off
    d0 = 2.0 * inv_h2
    V = np.zeros(n)
    cp = np.empty(n, dtype=np.complex128)
    ys = np.empty((B, n), dtype=np.complex128)
    lo_prev, hi_prev = 0, -1
    for s in range(steps):
        for i in range(lo_prev, hi_prev + 1):
            V[i] = 0.0
        lo_prev, hi_prev = n, -1
        for j in range(J):
            I = params[s, j, 0]
            eta = params[s, j, 1]
            a = params[s, j, 2]
            if I == 0.0 or eta == 0.0:
                continue
            lo = int(np.ceil((a - 1.0 / eta) / h)) - 1
            hi = int(np.floor((a + 1.0 / eta) / h)) - 1
            if lo < 0:
                lo = 0
            if hi > n - 1:
                hi = n - 1
            for i in range(lo, hi + 1):
                u = eta * ((i + 1) * h - a)
                if -1.0 < u < 1.0:
                    w = 1.0 - u * u
                    V[i] += I * eta * rho_coeff * w * w * w
            if lo < lo_prev:
                lo_prev = lo
            if hi > hi_prev:
                hi_prev = hi
        for b in range(B):
            psi = psis[b]
            y = ys[b]
            pm = 0.0 + 0.0j
            for i in range(n):
                pc = psi[i]
                pp = psi[i + 1] if i < n - 1 else 0.0 + 0.0j
                y[i] = pc - 1j * half * ((d0 + V[i]) * pc + off * (pm + pp))
                pm = pc
        binv = 1.0 / (1.0 + 1j * half * (d0 + V[0]))
        cp[0] = eoff * binv
        for b in range(B):
            ys[b, 0] = ys[b, 0] * binv
        for i in range(1, n):
            minv = 1.0 / ((1.0 + 1j * half * (d0 + V[i])) - eoff * cp[i - 1])
            cp[i] = eoff * minv
            for b in range(B):
                ys[b, i] = (ys[b, i] - eoff * ys[b, i - 1]) * minv
        for b in range(B):
            psi = psis[b]
            y = ys[b]
            psi[n - 1] = y[n - 1]
            for i in range(n - 2, -1, -1):
                psi[i] = y[i] - cp[i] * psi[i + 1]


def _reference_steps(psis: np.ndarray, params: np.ndarray, h: float, dt: float) -> None:
    """scipy solve_banded realization of the identical CN arithmetic."""
    B, n = psis.shape
    steps = params.shape[0]
    x = np.arange(1, n + 1) * h
    inv_h2 = 1.0 / (h * h)
    off = -inv_h2
    eoff = 1j * 0.5 * dt * off
    ab = np.zeros((3, n), dtype=np.complex128)
    ab[0, 1:] = eoff
    ab[2, :-1] = eoff
    for s in range(steps):
        V = np.zeros(n)
        for j in range(params.shape[1]):
            I, eta, a = params[s, j]
            if I == 0.0 or eta == 0.0:
                continue
            u = eta * (x - a)
            w = 1.0 - u * u
            V += np.where(np.abs(u) < 1.0, I * eta * RHO_COEFF * w * w * w, 0.0)
        diag = 2.0 * inv_h2 + V
        ab[1, :] = 1.0 + 1j * 0.5 * dt * diag
        for b in range(B):
            psi = psis[b]
            y = psi - 1j * 0.5 * dt * (diag * psi)
            y[:-1] -= 1j * 0.5 * dt * off * psi[1:]
            y[1:] -= 1j * 0.5 * dt * off * psi[:-1]
            psis[b] = sla.solve_banded((1, 1), ab, y)


def step(
    psi: WaveFunction,
    field_mid: PotentialField,
    dt: float,
    strict_resolution: bool = True,
) -> WaveFunction:
    """One Crank-Nicolson step against the (already midpoint-sampled) field."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = psi.grid
    V = potential_on_grid(field_mid, grid, strict_resolution=strict_resolution)
    h = grid.h
    inv_h2 = 1.0 / (h * h)
    diag = 2.0 * inv_h2 + V
    off = -inv_h2
    y = psi.values - 1j * 0.5 * dt * (diag * psi.values)
    y[:-1] -= 1j * 0.5 * dt * off * psi.values[1:]
    y[1:] -= 1j * 0.5 * dt * off * psi.values[:-1]
    ab = np.zeros((3, grid.n), dtype=np.complex128)
    ab[0, 1:] = 1j * 0.5 * dt * off
    ab[2, :-1] = 1j * 0.5 * dt * off
    ab[1, :] = 1.0 + 1j * 0.5 * dt * diag
    out = sla.solve_banded((1, 1), ab, y)
    if not np.all(np.isfinite(out.view(np.float64))):
        raise LinearSolveFailure("tridiagonal Crank-Nicolson solve produced non-finite values")
    return WaveFunction(out, grid)


def _stage_check_resolution(stage: Stage, grid: SpatialGrid) -> None:
    for w in stage.walls:
        eta_max = max(w.eta)
        I_max = max(w.I)
        if I_max > 0 and not grid.resolves(eta_max):
            raise UnderResolved(
                f"h={grid.h:.3e} cannot resolve eta={eta_max} "
                f"(need h <= {1.0/(8*eta_max):.3e})"
            )


_CHUNK = 65536


def propagate_batch(
    psis: list[WaveFunction] | tuple[WaveFunction, ...],
    schedule: ControlPath | Stage,
    dt_target: float,
    engine: str = "auto",
    observer: Callable[[float, list[WaveFunction]], None] | None = None,
    record_every: int = 0,
    strict_resolution: bool = True,
) -> list[WaveFunction]:
    """Propagate several states through the same schedule, sharing factorizations.

    Deterministic for fixed inputs; final norms are checked against 1e-8
    relative drift (the Cayley step is unitary, so violations mean a solver
    breakdown).
    """
    if dt_target <= 0:
        raise ValueError(f"dt_target must be positive, got {dt_target}")
    stages = schedule.stages if isinstance(schedule, ControlPath) else (schedule,)
    if not psis:
        return []
    grid = psis[0].grid
    for p in psis:
        if p.grid != grid:
            raise ValueError("all states in a batch must share one grid")
    use_numba = _HAVE_NUMBA if engine == "auto" else (engine == "numba")
    if engine == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba engine requested but numba is unavailable")

    batch = np.stack([p.values.copy() for p in psis])
    norms0 = np.sqrt(grid.h * np.sum(np.abs(batch) ** 2, axis=1))
    t_abs = 0.0
    for stage in stages:
        if stage.duration == 0.0:
            continue
        if strict_resolution:
            _stage_check_resolution(stage, grid)
        dt_stage = stage.dt_for(dt_target)
        n_steps = max(1, math.ceil(stage.duration / dt_stage - 1e-9))
        dt = stage.duration / n_steps
        chunk = record_every if (observer and record_every > 0) else _CHUNK
        done = 0
        while done < n_steps:
            take = min(chunk, n_steps - done)
            ts = (done + 0.5 + np.arange(take)) * dt
            params = stage.params_at(ts)
            if use_numba:
                _kernel(batch, params, grid.h, dt, RHO_COEFF)
            else:
                _reference_steps(batch, params, grid.h, dt)
            done += take
            if observer is not None:
                observer(t_abs + done * dt,
                         [WaveFunction(batch[b].copy(), grid) for b in range(len(psis))])
        t_abs += stage.duration
    if not np.all(np.isfinite(batch.view(np.float64))):
        raise LinearSolveFailure("propagation produced non-finite values")
    norms1 = np.sqrt(grid.h * np.sum(np.abs(batch) ** 2, axis=1))
    drift = np.max(np.abs(norms1 / np.where(norms0 > 0, norms0, 1.0) - 1.0))
    if drift > 1e-8:
        raise LinearSolveFailure(f"norm drift {drift:.3e} exceeds 1e-8")
    return [WaveFunction(batch[b], grid) for b in range(len(psis))]


def propagate(
    psi0: WaveFunction,
    schedule: ControlPath | Stage,
    dt_target: float,
    engine: str = "auto",
    observer: Callable[[float, WaveFunction], None] | None = None,
    record_every: int = 0,
    strict_resolution: bool = True,
) -> WaveFunction:
    """Propagate one state through a schedule (see propagate_batch)."""
    obs = None
    if observer is not None:
        obs = lambda t, states: observer(t, states[0])
    return propagate_batch(
        [psi0], schedule, dt_target, engine=engine, observer=obs,
        record_every=record_every, strict_resolution=strict_resolution,
    )[0]


def fidelity(psi: WaveFunction, phi: WaveFunction) -> float:
    """|<psi|phi>| / (|psi| |phi|): phase-invariant similarity in [0, 1]."""
    np_, nf = psi.norm(), phi.norm()
    if np_ < 1e-14 or nf < 1e-14:
        raise ZeroNorm("fidelity of a numerically zero state is undefined")
    return min(1.0, abs(inner(psi, phi)) / (np_ * nf))


def mode_overlaps(psi: WaveFunction, basis: SpectralDecomposition) -> np.ndarray:
    """h-weighted overlaps <phi_k|psi> against the decomposition's modes."""
    if basis.grid != psi.grid:
        raise ValueError("state and basis live on different grids")
    return psi.grid.h * (basis.eigenvectors.T @ psi.values)


def cn_phase(lam: float, dt: float) -> float:
    """Exact phase advanced per CN step by an eigenmode of eigenvalue lam."""
    return 2.0 * math.atan(0.5 * lam * dt)


def energy(psi: WaveFunction, fld: PotentialField, strict_resolution: bool = True) -> float:
    """Rayleigh quotient <psi|H|psi> / <psi|psi> on the discrete Hamiltonian."""
    H = assemble(fld, psi.grid, strict_resolution=strict_resolution)
    v = psi.values
    num = psi.grid.h * np.vdot(v, H.apply(v)).real
    den = psi.grid.h * np.vdot(v, v).real
    return float(num / den)
