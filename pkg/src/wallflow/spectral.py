"""Discrete Hamiltonian, its low eigenpairs, and the ideal split-interval spectrum.

The ideal operator is the Dirichlet Laplacian on (0,a) u (a,1): left modes
have eigenvalues (p pi / a)^2, right modes (q pi / (1-a))^2.  Tracking the
side labels while a moves is what produces the mode permutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import ClosureExceeded, ConvergenceFailure, DegenerateSplit, UnderResolved
from .field import PotentialField, SpatialGrid, potential_on_grid
from .state import WaveFunction

#: position-space tolerance for declaring a split position degenerate
TOL_CROSS = 1e-6

#: hard cap on the tracked-label closure
CLOSURE_CAP = 64


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True, order=True)
class ModeLabel:
    """Which side of the split an ideal mode lives on, and its index there."""

    side: Side
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"mode index must be >= 1, got {self.index}")

    def __repr__(self):
        return f"{'L' if self.side == Side.LEFT else 'R'}{self.index}"


def mu_value(label: ModeLabel, a: float) -> float:
    """Ideal eigenvalue of a labelled mode at split position a."""
    if label.side == Side.LEFT:
        return (label.index * math.pi / a) ** 2
    return (label.index * math.pi / (1.0 - a)) ** 2


def crossing_position(p: int, q: int) -> float:
    """Split position where left mode p and right mode q are degenerate."""
    return p / (p + q)


def ideal_rank(label: ModeLabel, a: float) -> int:
    """1-based rank of a labelled mode in the merged ideal spectrum at a.

    Uses the counting identity rank(L,p) = p + floor(p(1-a)/a); raises
    DegenerateSplit when a sits within TOL_CROSS of a crossing that would
    make the rank ambiguous.
    """
    if label.side == Side.LEFT:
        p = label.index
        frac = p * (1.0 - a) / a
    else:
        q = label.index
        frac = q * a / (1.0 - a)
    nearest = round(frac)
    if nearest >= 1:
        if label.side == Side.LEFT:
            a_star = crossing_position(label.index, nearest)
        else:
            a_star = crossing_position(nearest, label.index)
        if abs(a - a_star) < TOL_CROSS:
            raise DegenerateSplit(
                f"a={a!r} is within {TOL_CROSS} of crossing {a_star!r} for {label}"
            )
    return label.index + int(math.floor(frac))


@dataclass(frozen=True)
class DiscreteHamiltonian:
    """Symmetric tridiagonal H = -d2/dx2 + V with Dirichlet truncation."""

    diag: np.ndarray
    offdiag: float
    grid: SpatialGrid

    @property
    def n(self) -> int:
        return self.grid.n

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = self.diag * values
        out[:-1] += self.offdiag * values[1:]
        out[1:] += self.offdiag * values[:-1]
        return out

    def scale(self) -> float:
        """Infinity-norm bound used for machine-precision residual floors."""
        return float(np.max(self.diag) + 2.0 * abs(self.offdiag))


def assemble(
    fld: PotentialField, grid: SpatialGrid, strict_resolution: bool = True
) -> DiscreteHamiltonian:
    """Second-order central-difference Hamiltonian for the given walls."""
    V = potential_on_grid(fld, grid, strict_resolution=strict_resolution)
    h = grid.h
    return DiscreteHamiltonian(diag=2.0 / h**2 + V, offdiag=-1.0 / h**2, grid=grid)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Lowest m eigenpairs, h-weighted orthonormal, strictly ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # shape (n, m), columns h-normalized
    grid: SpatialGrid

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    def mode(self, k: int) -> WaveFunction:
        """k-th eigenmode (1-based) as a wavefunction."""
        return WaveFunction(self.eigenvectors[:, k - 1] + 0j, self.grid)


def lowest_eigenpairs(H: DiscreteHamiltonian, m: int) -> SpectralDecomposition:
    """Lowest m eigenpairs via LAPACK Sturm bisection + inverse iteration.

    Eigenvectors come back h-weighted orthonormal with the first component
    of significant magnitude positive, so decompositions vary continuously
    along parameter paths.
    """
    n = H.n
    if m < 1 or m > n // 4:
        raise ValueError(f"need 1 <= m <= n/4 = {n // 4}, got m={m}")
    offs = np.full(n - 1, H.offdiag)
    try:
        lam, vecs = sla.eigh_tridiagonal(
            H.diag, offs, select="i", select_range=(0, m - 1)
        )
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:  # pragma: no cover
        raise ConvergenceFailure(f"tridiagonal eigensolve failed: {exc}") from exc

    # Euclidean-normalized LAPACK vectors -> h-weighted unit columns.
    h = H.grid.h
    vecs = vecs / math.sqrt(h)
    # sign convention: first entry with |v| >= 1% of the peak is positive
    for k in range(m):
        col = vecs[:, k]
        idx = np.argmax(np.abs(col) >= 0.01 * np.max(np.abs(col)))
        if col[idx] < 0:
            vecs[:, k] = -col

    # residual floor: 1e-8 * lambda plus the double-precision limit eps*||H||
    floor = 64.0 * np.finfo(float).eps * H.scale()
    for k in range(m):
        resid = np.linalg.norm(H.apply(vecs[:, k]) - lam[k] * vecs[:, k]) * math.sqrt(h)
        if resid > 1e-8 * max(lam[k], 1.0) + floor:
            raise ConvergenceFailure(
                f"residual {resid:.3e} for eigenpair {k + 1} exceeds target"
            )
    gaps = np.diff(lam)
    if m > 1 and np.min(gaps) <= 1e-9 * lam[-1]:
        raise ConvergenceFailure(
            f"near-degenerate pair: min gap {np.min(gaps):.3e} <= 1e-9*{lam[-1]:.3e}"
        )
    return SpectralDecomposition(eigenvalues=lam, eigenvectors=vecs, grid=H.grid)


@dataclass(frozen=True)
class IdealSpectrum:
    """First M merged split-interval eigenvalues with their side labels."""

    a: float
    values: np.ndarray
    labels: tuple[ModeLabel, ...]

    def rank_of(self, label: ModeLabel) -> int:
        """1-based rank of a label, which must be within the stored range."""
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise KeyError(f"{label} not among the first {len(self.labels)} modes")


def _merged_labels(a: float, M: int) -> tuple[np.ndarray, list[ModeLabel]]:
    ps = np.arange(1, M + 1)
    left = (ps * math.pi / a) ** 2
    right = (ps * math.pi / (1.0 - a)) ** 2
    values = np.concatenate([left, right])
    labels = [ModeLabel(Side.LEFT, int(p)) for p in ps] + [
        ModeLabel(Side.RIGHT, int(q)) for q in ps
    ]
    order = np.argsort(values, kind="stable")[:M]
    return values[order], [labels[i] for i in order]


def ideal_values(a: float, M: int) -> np.ndarray:
    """First M ideal eigenvalues at split position a; ties are permitted."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"split position must lie in (0,1), got {a}")
    values, _ = _merged_labels(a, M)
    return values


def ideal_spectrum(a: float, M: int) -> IdealSpectrum:
    """Labelled merged spectrum; raises DegenerateSplit on a near-tie in range."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"split position must lie in (0,1), got {a}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    values, labels = _merged_labels(a, M + 1)
    for i in range(len(labels) - 1):
        la, lb = labels[i], labels[i + 1]
        if la.side == lb.side:
            continue
        p = la.index if la.side == Side.LEFT else lb.index
        q = lb.index if lb.side == Side.RIGHT else la.index
        a_star = crossing_position(p, q)
        if abs(a - a_star) < TOL_CROSS:
            raise DegenerateSplit(
                f"a={a!r} within {TOL_CROSS} of crossing {a_star!r} "
                f"({la} vs {lb}, ranks {i + 1},{i + 2})"
            )
    return IdealSpectrum(a=a, values=values[:M], labels=tuple(labels[:M]))


def ideal_eigenfunction(label: ModeLabel, a: float, grid: SpatialGrid) -> WaveFunction:
    """Grid sampling of the side-localized sine mode, renormalized to unit norm."""
    x = grid.x
    if label.side == Side.LEFT:
        vals = np.where(
            x <= a, np.sqrt(2.0 / a) * np.sin(label.index * np.pi * x / a), 0.0
        )
    else:
        vals = np.where(
            x >= a,
            np.sqrt(2.0 / (1.0 - a)) * np.sin(label.index * np.pi * (1.0 - x) / (1.0 - a)),
            0.0,
        )
    psi = WaveFunction(vals + 0j, grid)
    nrm = psi.norm()
    if abs(nrm - 1.0) > 1e-3:
        raise ConvergenceFailure(
            f"sampled ideal mode norm {nrm:.6f} too far from 1; grid too coarse"
        )
    return WaveFunction(psi.values / nrm, grid)


def _crossing_partners(
    label: ModeLabel, a_lo: float, a_hi: float
) -> list[tuple[ModeLabel, float]]:
    """Opposite-side labels whose curve crosses label's inside (a_lo, a_hi)."""
    out = []
    m = label.index
    if label.side == Side.LEFT:
        # crossings at a* = m/(m+q): q in (m(1-a_hi)/a_hi, m(1-a_lo)/a_lo)
        q_lo = m * (1.0 - a_hi) / a_hi
        q_hi = m * (1.0 - a_lo) / a_lo
        for q in range(max(1, math.floor(q_lo) + 1), math.floor(q_hi) + 1):
            a_star = crossing_position(m, q)
            if a_lo < a_star < a_hi:
                out.append((ModeLabel(Side.RIGHT, q), a_star))
    else:
        p_lo = m * a_lo / (1.0 - a_lo)
        p_hi = m * a_hi / (1.0 - a_hi)
        for p in range(max(1, math.floor(p_lo) + 1), math.floor(p_hi) + 1):
            a_star = crossing_position(p, m)
            if a_lo < a_star < a_hi:
                out.append((ModeLabel(Side.LEFT, p), a_star))
    return out


@dataclass(frozen=True)
class TrackedClosure:
    """Lowest-N tracked labels, every crossing they make, and the rank ceiling M.

    A left curve's rank only ever decreases as a grows (each of its crossings
    drops it one rank) and a right curve's only increases, so the largest rank
    any tracked curve or crossing partner touches on [a_lo, a_hi] is attained
    at an endpoint.
    """

    a_from: float
    a_lo: float
    a_hi: float
    labels: frozenset[ModeLabel]
    crossings: tuple[tuple[float, ModeLabel, ModeLabel], ...]  # (a*, left, right) ascending
    M: int


def tracked_closure(a_from: float, a_lo: float, a_hi: float, N: int) -> TrackedClosure:
    """Crossings made by the lowest-N labels at a_from while a spans (a_lo, a_hi)."""
    if not (a_lo < a_hi):
        raise ValueError(f"need a_lo < a_hi, got {a_lo}, {a_hi}")
    start = ideal_spectrum(a_from, N)
    tracked: set[ModeLabel] = set(start.labels)
    crossings: dict[tuple[int, int], float] = {}
    for lab in tracked:
        for other, a_star in _crossing_partners(lab, a_lo, a_hi):
            p = lab.index if lab.side == Side.LEFT else other.index
            q = other.index if other.side == Side.RIGHT else lab.index
            crossings[(p, q)] = a_star
    ordered = sorted(
        ((a_star, ModeLabel(Side.LEFT, p), ModeLabel(Side.RIGHT, q))
         for (p, q), a_star in crossings.items()),
        key=lambda t: (t[0], t[1].index),
    )
    participants = set(tracked)
    for _, left, right in ordered:
        participants.add(left)
        participants.add(right)
    M = max(
        max(ideal_rank(lab, a_lo), ideal_rank(lab, a_hi)) for lab in participants
    )
    if M > CLOSURE_CAP:
        raise ClosureExceeded(
            f"tracked crossings reach rank {M} > cap {CLOSURE_CAP} on "
            f"({a_lo}, {a_hi}) with N={N}"
        )
    return TrackedClosure(
        a_from=a_from,
        a_lo=a_lo,
        a_hi=a_hi,
        labels=frozenset(tracked),
        crossings=tuple(ordered),
        M=M,
    )


def crossing_points(
    a_lo: float, a_hi: float, N: int
) -> list[tuple[float, tuple[ModeLabel, ModeLabel]]]:
    """All crossings of the lowest-N tracked curves inside (a_lo, a_hi), ascending.

    Tracking starts from the lowest N modes at a_lo and is closed so that
    every curve a tracked curve meets is itself tracked.
    """
    closure = tracked_closure(a_lo, a_lo, a_hi, N)
    return [(a_star, (left, right)) for a_star, left, right in closure.crossings]


@dataclass(frozen=True)
class ModePermutation:
    """Rank rearrangement induced by tracking side labels from a_i to a_f."""

    a_i: float
    a_f: float
    N: int
    mapping: tuple[int, ...]  # mapping[k-1] = rank at a_f of the rank-k label at a_i
    labels: tuple[ModeLabel, ...]  # label of rank k at a_i, k = 1..len(mapping)

    def __call__(self, k: int) -> int:
        return self.mapping[k - 1]

    @property
    def size(self) -> int:
        return len(self.mapping)


def quasi_adiabatic_permutation(a_i: float, a_f: float, N: int) -> ModePermutation:
    """Label-tracked rank map: rank k at a_i -> rank of the same label at a_f.

    The mapping covers ranks 1..N' where N' >= N is the largest rank touched
    by the tracked curves or their crossing partners; restricted to 1..N it
    is the tracked permutation.
    """
    if a_i == a_f:
        spec = ideal_spectrum(a_i, N)
        return ModePermutation(
            a_i=a_i, a_f=a_f, N=N,
            mapping=tuple(range(1, N + 1)),
            labels=spec.labels,
        )
    lo, hi = min(a_i, a_f), max(a_i, a_f)
    closure = tracked_closure(a_i, lo, hi, N)
    spec_i = ideal_spectrum(a_i, closure.M)
    mapping = tuple(ideal_rank(lab, a_f) for lab in spec_i.labels)
    return ModePermutation(
        a_i=a_i, a_f=a_f, N=N,
        mapping=mapping,
        labels=spec_i.labels,
    )


def permutation_by_composition(a_i: float, a_f: float, N: int) -> dict[int, int]:
    """Tracked rank map built as the ordered product of per-crossing swaps.

    As a grows through a crossing the falling left curve passes below the
    rising right curve, so the left rank drops by one and the right rank
    gains one; a descending sweep does the opposite.  Oracle counterpart of
    quasi_adiabatic_permutation for equivalence testing, defined on ranks
    1..N.
    """
    lo, hi = min(a_i, a_f), max(a_i, a_f)
    if a_i == a_f:
        return {k: k for k in range(1, N + 1)}
    closure = tracked_closure(a_i, lo, hi, N)
    rank: dict[ModeLabel, int] = {lab: ideal_rank(lab, a_i) for lab in closure.labels}
    ascending = a_i < a_f
    events = sorted(closure.crossings, key=lambda t: t[0] if ascending else -t[0])
    start_rank = dict(rank)
    for a_star, left, right in events:
        l_in, r_in = left in rank, right in rank
        if l_in and r_in:
            r1, r2 = rank[left], rank[right]
            if abs(r1 - r2) != 1:
                raise ConvergenceFailure(
                    f"crossing at {a_star}: labels {left},{right} have "
                    f"non-adjacent ranks {r1},{r2}"
                )
            rank[left], rank[right] = r2, r1
        elif l_in:
            rank[left] += -1 if ascending else +1
        elif r_in:
            rank[right] += +1 if ascending else -1
    return {start_rank[lab]: rank[lab] for lab in closure.labels}


def side_signature(a: float, K: int) -> np.ndarray:
    """xi^a(k) = +1 for left modes, -1 for right modes, k = 1..K."""
    spec = ideal_spectrum(a, K)
    return np.array([1 if lab.side == Side.LEFT else -1 for lab in spec.labels])
