import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdcycle import central as cm
from hdcycle.errors import AtBreakpoint


def test_linear_and_thetas():
    assert cm.Linear(2.0)(0.3) == 0.6
    th1 = cm.Theta1(-1, 0.25)
    assert th1(0.5) == -0.25 and th1.inverse(-0.25) == 0.5 and not th1.increasing
    th2 = cm.Theta2(-1)
    # s2 (x - 1) - 1
    assert th2(1.2) == pytest.approx(-1.2) and th2.inverse(th2(0.9)) == pytest.approx(0.9)


def test_window_patch_keeps_value_and_slope():
    xs, ys = cm.window_patch(2.0, 0.1, 0.2003, 1.9, 0.001)
    f = cm.PiecewiseLinear(2.0, [(xs, ys)])
    assert f(0.1) == pytest.approx(0.2003, abs=1e-16)
    assert f.deriv(0.1) == pytest.approx(1.9)
    assert f(0.5) == 1.0 and f(0.0) == 0.0
    # worst node is x0 - eta: 0.2003 - 0.0019 against 2 * 0.099
    assert f.sup_distance() == pytest.approx(4e-4)


def test_window_patch_rejects_non_monotone():
    with pytest.raises(ValueError):
        cm.window_patch(2.0, 0.1, 0.3, 2.0, 0.001)


def test_derivative_at_node():
    f = cm.PiecewiseLinear(2.0, [((0.1, 0.2, 0.3), (0.2, 0.5, 0.6))])
    with pytest.raises(AtBreakpoint):
        f.deriv(0.2)
    assert f.deriv(0.2, side=-1) == pytest.approx(3.0)
    assert f.deriv(0.2, side=1) == pytest.approx(1.0)
    assert f.inverse(f(0.17)) == pytest.approx(0.17)


def test_dict_roundtrip():
    f = cm.PiecewiseLinear(-2.0, [((-0.3, -0.1), (0.6, 0.2))])
    assert cm.from_dict(f.to_dict()) == f
    assert cm.from_dict(cm.Linear(0.5).to_dict()) == cm.Linear(0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.3, 4.0), st.sampled_from([-1, 1]), st.floats(1e-4, 1e-2))
def test_route_steps_parity(beta_abs, sgn, seed):
    beta = sgn * beta_abs
    landing = 0.3
    n, n_float = cm.route_steps(beta, seed, landing)
    assert n >= 1 and abs(n - n_float) <= 3
    if beta < 0:
        assert math.copysign(1, landing) == math.copysign(1, seed) * (-1) ** n


@pytest.mark.parametrize("beta", [2.0, 2.5, -2.2])
def test_planned_routes_are_orbits(beta):
    upper = abs(beta) ** -6
    seeds = [0.013 * upper, 0.0071 * upper, 0.0023 * upper]
    landings = [1.3 * upper, 1.6 * upper, 1.9 * upper]
    if beta < 0:
        landings = [-x for x in landings]
    orbits, lower = cm.plan_routes(beta, list(zip(seeds, landings)), upper)
    psi = cm.PiecewiseLinear(beta, cm.reroute_orbits(beta, orbits, upper, lower))
    for w, s, land in zip(orbits, seeds, landings):
        assert w[0] == s and w[-1] == land
        x = s
        for _ in range(len(w) - 1):
            x = psi(x)
        assert x == pytest.approx(land, rel=1e-12)
    # untouched outside (lower, upper) on both sides
    for x in (upper * 1.01, -upper * 1.5, lower * 0.5):
        assert psi(x) == beta * x
    xs = np.linspace(-upper, upper, 2001)
    ys = psi(xs)
    assert np.all(np.diff(ys) * np.sign(beta) > 0)
