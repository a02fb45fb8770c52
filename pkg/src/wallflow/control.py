"""Smooth schedule synthesis: rate-bounded ramps, stages and their concatenation.

All ramps use the exponential smoothstep, so every derivative vanishes at
stage endpoints and concatenated paths stay C-infinity with each parameter's
rate bounded by the declared kappa.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import CrossingInside, Discontinuity, SpeedInfeasible
from .field import WallState

#: phase budget per step: dt = min(dt_target, PHASE_BUDGET * dt_relax / lambda_track)
PHASE_BUDGET = 0.05


def _sigma(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 1e-12
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def theta(s) -> np.ndarray | float:
    """C-infinity smoothstep: 0 at s<=0, 1 at s>=1, all derivatives flat at ends.

    theta(s) = sigma(s) / (sigma(s) + sigma(1-s)) with sigma(s) = exp(-1/s);
    the peak slope is exactly 2 at s = 1/2.
    """
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    num = _sigma(s)
    den = num + _sigma(1.0 - s)
    out = num / den
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmoothRamp:
    """Endpoint-flat ramp v0 -> v1 over a fixed duration."""

    v0: float
    v1: float
    duration: float

    def value(self, t) -> np.ndarray | float:
        if self.duration == 0.0:
            t = np.asarray(t, dtype=float)
            out = np.full_like(t, self.v1)
            return out if out.ndim else float(out)
        return self.v0 + (self.v1 - self.v0) * theta(np.asarray(t, float) / self.duration)

    @property
    def rate_bound(self) -> float:
        """Peak |d value/dt|; the smoothstep slope maxes out at exactly 2."""
        if self.duration == 0.0 or self.v0 == self.v1:
            return 0.0
        return 2.0 * abs(self.v1 - self.v0) / self.duration


def smooth_ramp(v0: float, v1: float, kappa: float) -> SmoothRamp:
    """Ramp whose duration 2|v1-v0|/kappa guarantees peak rate <= kappa."""
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    duration = 2.0 * abs(v1 - v0) / kappa
    return SmoothRamp(v0=v0, v1=v1, duration=duration)


@dataclass(frozen=True)
class WallTracks:
    """Per-wall (I, eta, a) ramps sharing the owning stage's duration."""

    I: tuple[float, float]
    eta: tuple[float, float]
    a: tuple[float, float]


@dataclass(frozen=True)
class Stage:
    """One leg of a control path; every parameter follows the shared smoothstep."""

    kind: str
    duration: float
    walls: tuple[WallTracks, ...]
    lambda_track: float = 0.0
    dt_relax: float = 1.0
    dt_fixed: float = 0.0  # > 0 pins the step size exactly (phase-critical waits)

    @property
    def J(self) -> int:
        return len(self.walls)

    def params_at(self, ts) -> np.ndarray:
        """Sampled parameters, shape (len(ts), J, 3) with columns (I, eta, a)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.duration == 0.0:
            th = np.ones_like(ts)
        else:
            th = theta(ts / self.duration)
        out = np.empty((len(ts), self.J, 3))
        for j, w in enumerate(self.walls):
            for c, (v0, v1) in enumerate((w.I, w.eta, w.a)):
                out[:, j, c] = v0 + (v1 - v0) * th
        return out

    def start_walls(self) -> tuple[WallState, ...]:
        return tuple(WallState(I=w.I[0], eta=w.eta[0], a=w.a[0]) for w in self.walls)

    def end_walls(self) -> tuple[WallState, ...]:
        return tuple(WallState(I=w.I[1], eta=w.eta[1], a=w.a[1]) for w in self.walls)

    def max_rate(self) -> float:
        """Peak parameter speed over all walls and parameters."""
        if self.duration == 0.0:
            return 0.0
        best = 0.0
        for w in self.walls:
            for v0, v1 in (w.I, w.eta, w.a):
                best = max(best, 2.0 * abs(v1 - v0) / self.duration)
        return best

    def dt_for(self, dt_target: float) -> float:
        if self.dt_fixed > 0.0:
            return self.dt_fixed
        if self.lambda_track > 0.0:
            return min(dt_target, PHASE_BUDGET * self.dt_relax / self.lambda_track)
        return dt_target

    def stretched(self, factor: float) -> "Stage":
        return replace(self, duration=self.duration * factor)


def _frozen_tracks(walls: tuple[WallState, ...]) -> list[WallTracks]:
    return [
        WallTracks(I=(w.I, w.I), eta=(w.eta, w.eta), a=(w.a, w.a)) for w in walls
    ]


def vertical_stage(
    walls: tuple[WallState, ...],
    wall: int,
    I_to: float,
    kappa: float,
    lambda_track: float = 0.0,
    dt_relax: float = 1.0,
    duration: float | None = None,
) -> Stage:
    """Grow or shrink one wall's height; position and sharpness stay frozen."""
    if I_to < 0:
        raise ValueError(f"wall height must be >= 0, got {I_to}")
    tracks = _frozen_tracks(walls)
    I_from = walls[wall].I
    ramp = smooth_ramp(I_from, I_to, kappa)
    dur = ramp.duration if duration is None else duration
    if dur < ramp.duration * (1.0 - 1e-12):
        raise SpeedInfeasible(
            f"duration {dur} violates |I'| <= {kappa} for a ramp of size {abs(I_to - I_from)}"
        )
    tracks[wall] = replace(tracks[wall], I=(I_from, I_to))
    return Stage(kind="vertical", duration=dur, walls=tuple(tracks),
                 lambda_track=lambda_track, dt_relax=dt_relax)


def horizontal_stage(
    walls: tuple[WallState, ...],
    wall: int,
    a_to: float,
    kappa: float,
    tracked_n: int | None = None,
    lambda_track: float = 0.0,
    dt_relax: float = 1.0,
    duration: float | None = None,
) -> Stage:
    """Move one wall with height and sharpness frozen; must not span a crossing."""
    a_from = walls[wall].a
    if tracked_n is not None and a_from != a_to:
        from .spectral import crossing_points

        lo, hi = min(a_from, a_to), max(a_from, a_to)
        inside = crossing_points(lo, hi, tracked_n)
        if inside:
            raise CrossingInside(
                f"sweep ({lo}, {hi}) spans tracked crossings at "
                f"{[round(c[0], 6) for c in inside]}"
            )
    tracks = _frozen_tracks(walls)
    ramp = smooth_ramp(a_from, a_to, kappa)
    dur = ramp.duration if duration is None else duration
    if dur < ramp.duration * (1.0 - 1e-12):
        raise SpeedInfeasible(
            f"duration {dur} violates |a'| <= {kappa} for a sweep of size {abs(a_to - a_from)}"
        )
    tracks[wall] = replace(tracks[wall], a=(a_from, a_to))
    return Stage(kind="horizontal", duration=dur, walls=tuple(tracks),
                 lambda_track=lambda_track, dt_relax=dt_relax)


@dataclass(frozen=True)
class CrossingStage:
    """A short sweep through one level crossing: a* +- delta in time tau."""

    a_star: float
    delta: float
    tau: float
    direction: int = +1

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"crossing half-width must be > 0, got {self.delta}")
        if self.tau <= 0:
            raise ValueError(f"crossing time must be > 0, got {self.tau}")
        if self.direction not in (+1, -1):
            raise ValueError("direction must be +1 or -1")


def crossing_stage(
    walls: tuple[WallState, ...],
    wall: int,
    c: CrossingStage,
    kappa: float,
    lambda_track: float = 0.0,
    dt_relax: float = 1.0,
) -> Stage:
    """Sweep one wall across a crossing in time tau; I and eta stay frozen.

    The smoothstep's peak speed is 4 delta / tau, so tau >= 4 delta / kappa
    is required; smaller tau raises SpeedInfeasible.
    """
    if c.tau < 4.0 * c.delta / kappa * (1.0 - 1e-12):
        raise SpeedInfeasible(
            f"tau={c.tau:.4g} needs peak speed {4*c.delta/c.tau:.4g} > kappa={kappa}; "
            "shrink delta or allow more time"
        )
    a_from = c.a_star - c.direction * c.delta
    a_to = c.a_star + c.direction * c.delta
    if abs(walls[wall].a - a_from) > 1e-9:
        raise ValueError(
            f"wall {wall} is at a={walls[wall].a}, crossing stage starts at {a_from}"
        )
    tracks = _frozen_tracks(walls)
    tracks[wall] = replace(tracks[wall], a=(a_from, a_to))
    return Stage(kind="crossing", duration=c.tau, walls=tuple(tracks),
                 lambda_track=lambda_track, dt_relax=dt_relax)


def wait_stage(
    walls: tuple[WallState, ...],
    duration: float,
    lambda_track: float = 0.0,
    dt_relax: float = 1.0,
    dt_fixed: float = 0.0,
) -> Stage:
    """Hold every parameter fixed for a while (used for phase alignment)."""
    if duration < 0:
        raise ValueError(f"wait duration must be >= 0, got {duration}")
    return Stage(kind="wait", duration=duration, walls=tuple(_frozen_tracks(walls)),
                 lambda_track=lambda_track, dt_relax=dt_relax, dt_fixed=dt_fixed)


@dataclass(frozen=True)
class ControlPath:
    """Concatenated stages: total time T and the realized rate bound kappa."""

    stages: tuple[Stage, ...]
    T: float
    kappa: float

    @property
    def J(self) -> int:
        return self.stages[0].J if self.stages else 0

    def start_walls(self) -> tuple[WallState, ...]:
        return self.stages[0].start_walls()

    def end_walls(self) -> tuple[WallState, ...]:
        return self.stages[-1].end_walls()

    def reversed(self) -> "ControlPath":
        """Time-reversed path (run stages backwards, each ramp flipped)."""
        rev = []
        for st in self.stages[::-1]:
            walls = tuple(
                WallTracks(I=w.I[::-1], eta=w.eta[::-1], a=w.a[::-1]) for w in st.walls
            )
            rev.append(replace(st, walls=walls))
        return ControlPath(stages=tuple(rev), T=self.T, kappa=self.kappa)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "kappa": self.kappa,
            "stages": [
                {
                    "kind": st.kind,
                    "duration": st.duration,
                    "lambda_track": st.lambda_track,
                    "dt_relax": st.dt_relax,
                    "dt_fixed": st.dt_fixed,
                    "walls": [
                        {"I": list(w.I), "eta": list(w.eta), "a": list(w.a)}
                        for w in st.walls
                    ],
                }
                for st in self.stages
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @staticmethod
    def from_dict(d: dict) -> "ControlPath":
        stages = tuple(
            Stage(
                kind=s["kind"],
                duration=s["duration"],
                lambda_track=s.get("lambda_track", 0.0),
                dt_relax=s.get("dt_relax", 1.0),
                dt_fixed=s.get("dt_fixed", 0.0),
                walls=tuple(
                    WallTracks(I=tuple(w["I"]), eta=tuple(w["eta"]), a=tuple(w["a"]))
                    for w in s["walls"]
                ),
            )
            for s in d["stages"]
        )
        return ControlPath(stages=stages, T=d["T"], kappa=d["kappa"])

    @staticmethod
    def from_json(text: str) -> "ControlPath":
        return ControlPath.from_dict(json.loads(text))


def concat(stages: list[Stage] | tuple[Stage, ...]) -> ControlPath:
    """Join stages into one path, checking parameter continuity at junctions."""
    live = tuple(st for st in stages if st.duration > 0.0)
    if not live:
        if not stages:
            raise ValueError("cannot concatenate an empty stage list")
        # identity path: keep one zero-duration stage so endpoints are defined
        live = (stages[0],)
    stages = live
    for i in range(len(stages) - 1):
        left, right = stages[i], stages[i + 1]
        if left.J != right.J:
            raise Discontinuity(f"stage {i} has {left.J} walls, stage {i+1} has {right.J}")
        for j, (we, ws) in enumerate(zip(left.end_walls(), right.start_walls())):
            for name, ve, vs in (
                ("I", we.I, ws.I), ("eta", we.eta, ws.eta), ("a", we.a, ws.a)
            ):
                if abs(ve - vs) > 1e-12 * max(1.0, abs(ve)):
                    raise Discontinuity(
                        f"junction {i}->{i+1}, wall {j}: {name} jumps {ve} -> {vs}"
                    )
    T = float(sum(st.duration for st in stages))
    kappa = max(st.max_rate() for st in stages)
    return ControlPath(stages=stages, T=T, kappa=kappa)


def prop42_parameter_budget(
    epsilon: float, N: int, kappa: float, chi_bound: float = 1.0
) -> dict:
    """Asymptotic crossing-stage budget: the truncation width alpha scales as
    (epsilon/N)^(2/3), the wall sharpness as 1/alpha, and the crossing time as
    epsilon^2 over the induced drift constant.

    These are existence-level scalings; the protocol tuners measure instead,
    but the trend (eta grows like epsilon^(-2/3)) is tested against this.
    """
    alpha = (epsilon / N) ** (2.0 / 3.0) * chi_bound
    eta_min = 1.0 / alpha
    drift = N * (alpha**-0.5 + N**2 * alpha**1.5 + (2.0 + N * alpha**1.5) * kappa)
    tau_max = epsilon**2 / drift
    delta_max = kappa * tau_max
    return {"alpha": alpha, "eta_min": eta_min, "tau_max": tau_max, "delta_max": delta_max}
