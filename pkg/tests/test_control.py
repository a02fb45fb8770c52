import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wallflow import (
    ControlPath,
    CrossingInside,
    CrossingStage,
    Discontinuity,
    SpeedInfeasible,
    WallState,
    concat,
    crossing_stage,
    horizontal_stage,
    prop42_parameter_budget,
    smooth_ramp,
    theta,
    vertical_stage,
    wait_stage,
)

WALLS = (WallState(I=0.0, eta=200.0, a=0.43),)


def test_theta_endpoints_and_midpoint():
    assert theta(0.0) == 0.0
    assert theta(1.0) == 1.0
    assert theta(0.5) == pytest.approx(0.5, abs=1e-15)
    assert theta(-3.0) == 0.0 and theta(4.0) == 1.0


def test_smooth_ramp_basic():
    r = smooth_ramp(0.0, 1.0, kappa=0.5)
    assert r.duration == 4.0
    assert r.value(0.0) == 0.0 and r.value(4.0) == 1.0
    assert r.value(2.0) == pytest.approx(0.5)
    const = smooth_ramp(3.0, 3.0, kappa=1.0)
    assert const.duration == 0.0 and const.value(0.0) == 3.0


@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=-50, max_value=50),
    st.floats(min_value=-50, max_value=50),
    st.floats(min_value=1e-3, max_value=10.0),
)
def test_smooth_ramp_rate_bound(v0, v1, kappa):
    r = smooth_ramp(v0, v1, kappa)
    if r.duration == 0.0:
        return
    ts = np.linspace(0.0, r.duration, 10_001)
    vals = r.value(ts)
    rates = np.abs(np.diff(vals)) / np.diff(ts)
    assert rates.max() <= kappa * (1.0 + 1e-6)
    assert r.rate_bound == pytest.approx(kappa)


def test_ramp_endpoint_flatness():
    r = smooth_ramp(0.0, 1.0, kappa=1.0)
    eps = 1e-3 * r.duration
    # first three one-sided numeric derivatives vanish at both endpoints
    for t0, sgn in ((0.0, +1), (r.duration, -1)):
        f = lambda k: r.value(t0 + sgn * k * eps)
        d1 = (f(1) - f(0)) / eps
        d2 = (f(2) - 2 * f(1) + f(0)) / eps**2
        d3 = (f(3) - 3 * f(2) + 3 * f(1) - f(0)) / eps**3
        scale = 1.0 / r.duration
        assert abs(d1) <= 1e-6 * scale
        assert abs(d2) <= 1e-6 * scale**2
        assert abs(d3) <= 1e-6 * scale**3


def test_vertical_stage_freezes_position():
    st_ = vertical_stage(WALLS, 0, 4e4, kappa=1.0)
    assert st_.duration == pytest.approx(8e4)
    p = st_.params_at([0.0, st_.duration / 2, st_.duration])
    np.testing.assert_allclose(p[:, 0, 1], 200.0)  # eta frozen
    np.testing.assert_allclose(p[:, 0, 2], 0.43)   # a frozen
    assert p[0, 0, 0] == 0.0 and p[-1, 0, 0] == pytest.approx(4e4)
    empty = vertical_stage(WALLS, 0, 0.0, kappa=1.0)
    assert empty.duration == 0.0


def test_vertical_stage_rejects_too_fast():
    with pytest.raises(SpeedInfeasible):
        vertical_stage(WALLS, 0, 100.0, kappa=1.0, duration=10.0)


def test_horizontal_stage_freezes_height():
    walls = (WallState(I=500.0, eta=200.0, a=0.43),)
    st_ = horizontal_stage(walls, 0, 0.47, kappa=1.0, tracked_n=2)
    p = st_.params_at([0.0, st_.duration])
    np.testing.assert_allclose(p[:, 0, 0], 500.0)
    assert p[0, 0, 2] == 0.43 and p[-1, 0, 2] == pytest.approx(0.47)


def test_horizontal_stage_guards_crossings():
    walls = (WallState(I=500.0, eta=200.0, a=0.43),)
    with pytest.raises(CrossingInside):
        horizontal_stage(walls, 0, 0.57, kappa=1.0, tracked_n=2)


def test_crossing_stage_speed_floor():
    walls = (WallState(I=500.0, eta=200.0, a=0.49),)
    c = CrossingStage(a_star=0.5, delta=0.01, tau=0.04)
    st_ = crossing_stage(walls, 0, c, kappa=1.0)
    assert st_.duration == pytest.approx(0.04)
    p = st_.params_at([0.0, 0.04])
    assert p[0, 0, 2] == pytest.approx(0.49) and p[-1, 0, 2] == pytest.approx(0.51)
    with pytest.raises(SpeedInfeasible):
        crossing_stage(walls, 0, CrossingStage(a_star=0.5, delta=0.01, tau=0.01),
                       kappa=1.0)


def test_concat_single_stage_roundtrip():
    st_ = vertical_stage(WALLS, 0, 100.0, kappa=2.0)
    path = concat([st_])
    assert path.T == st_.duration
    assert path.kappa == pytest.approx(2.0)
    assert len(path.stages) == 1


def test_concat_checks_junctions():
    up = vertical_stage(WALLS, 0, 100.0, kappa=2.0)
    wrong_start = (WallState(I=90.0, eta=200.0, a=0.43),)
    down = vertical_stage(wrong_start, 0, 0.0, kappa=2.0)
    with pytest.raises(Discontinuity):
        concat([up, down])


def test_concat_junction_rates_stay_bounded():
    kappa = 2.0
    up = vertical_stage(WALLS, 0, 100.0, kappa=kappa)
    mid = (WallState(I=100.0, eta=200.0, a=0.43),)
    move = horizontal_stage(mid, 0, 0.47, kappa=kappa, tracked_n=None)
    path = concat([up, move])
    assert path.kappa <= kappa * (1 + 1e-12)
    # dense sampling across the junction: every parameter rate <= kappa
    ts = np.linspace(up.duration - 1.0, up.duration + 1.0, 4001)
    vals = np.empty((len(ts), 3))
    for i, t in enumerate(ts):
        if t <= up.duration:
            vals[i] = up.params_at([t])[0, 0]
        else:
            vals[i] = move.params_at([t - up.duration])[0, 0]
    rates = np.abs(np.diff(vals, axis=0)) / np.diff(ts)[:, None]
    assert rates.max() <= kappa * (1 + 1e-6)


def test_wait_stage_holds_everything():
    walls = (WallState(I=500.0, eta=200.0, a=0.43),)
    st_ = wait_stage(walls, 7.5)
    p = st_.params_at(np.linspace(0, 7.5, 11))
    np.testing.assert_allclose(p[:, 0, 0], 500.0)
    np.testing.assert_allclose(p[:, 0, 2], 0.43)
    assert st_.duration == 7.5


def test_path_json_roundtrip():
    up = vertical_stage(WALLS, 0, 100.0, kappa=2.0, lambda_track=40.0, dt_relax=8.0)
    mid = (WallState(I=100.0, eta=200.0, a=0.43),)
    move = horizontal_stage(mid, 0, 0.47, kappa=2.0, tracked_n=None)
    path = concat([up, move])
    text = path.to_json()
    back = ControlPath.from_json(text)
    assert back.T == path.T and back.kappa == path.kappa
    ts = np.linspace(0, up.duration, 7)
    np.testing.assert_array_equal(back.stages[0].params_at(ts),
                                  path.stages[0].params_at(ts))
    assert back.stages[0].lambda_track == 40.0
    assert back.stages[0].dt_relax == 8.0


def test_reversed_path_swaps_endpoints():
    up = vertical_stage(WALLS, 0, 100.0, kappa=2.0)
    rev = concat([up]).reversed()
    walls0 = rev.start_walls()
    assert walls0[0].I == 100.0
    assert rev.end_walls()[0].I == 0.0


def test_crossing_budget_trend_in_epsilon():
    # halving epsilon should grow the required sharpness like eps^(-2/3)
    etas = [prop42_parameter_budget(eps, N=2, kappa=1.0)["eta_min"]
            for eps in (0.2, 0.1, 0.05)]
    for lo, hi in zip(etas, etas[1:]):
        ratio = hi / lo
        assert 1.4 <= ratio <= 1.9  # 2^(2/3) ~ 1.587
    taus = [prop42_parameter_budget(eps, N=2, kappa=1.0)["tau_max"]
            for eps in (0.2, 0.1, 0.05)]
    assert taus[0] > taus[1] > taus[2]
