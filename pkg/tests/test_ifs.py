import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdcycle import central as cm
from hdcycle.errors import OutOfDomain, TooFewDomains
from hdcycle.ifs import (
    compose_return, derivative, evaluate, fixed_points, maps_from, perturb_psi_fundamental_domains,
)
from hdcycle.model import CycleSpec

from conftest import closed_form_fixed_point, closed_form_return


def test_dyadic_fixed_point_at_one(dyadic_t):
    g = compose_return(dyadic_t, (5, 5))
    # 2^5 * (0.5^5 * (-1) + 1/16) = -1 + 2 = 1
    assert evaluate(g, 1.0) == 1.0
    assert derivative(g, 1.0) == 1.0


def test_empty_when_orbit_leaves(dyadic):
    # psi^0 theta1 phi^0 theta2 sends I near -1, never back to I
    g = compose_return(dyadic, (0, 0))
    assert g.empty
    with pytest.raises(OutOfDomain):
        evaluate(g, 1.0)


def test_negative_itinerary_rejected(dyadic):
    with pytest.raises(ValueError):
        compose_return(dyadic, (-1, 2))


signs = st.sampled_from([-1, 1])
lams = st.one_of(st.floats(-0.8, -0.2), st.floats(0.2, 0.8))
betas = st.one_of(st.floats(-5, -1.25), st.floats(1.25, 5))


@st.composite
def specs(draw):
    return CycleSpec(draw(lams), draw(betas), sign_t1=draw(signs), sign_t2=draw(signs),
                     t=draw(st.floats(-0.3, 0.3)))


@settings(max_examples=150, deadline=None)
@given(specs(), st.integers(0, 6), st.integers(0, 6), st.floats(0.8, 1.2))
def test_matches_closed_form(spec, k, n, x):
    g = compose_return(spec, (k, n))
    if g.empty or not g.domain[0] <= x <= g.domain[1]:
        return
    assert math.isclose(evaluate(g, x), closed_form_return(spec, k, n, x), rel_tol=1e-12, abs_tol=1e-12)
    assert 0.8 <= evaluate(g, x) <= 1.2


@settings(max_examples=150, deadline=None)
@given(specs(), st.integers(0, 6), st.integers(0, 6))
def test_domain_is_exactly_admissible(spec, k, n):
    """Sampled points outside the domain leave the charts somewhere along the chain."""
    g = compose_return(spec, (k, n))
    maps = maps_from(spec)
    lo_c, hi_c = maps.central_range
    for x in np.linspace(0.8, 1.2, 41):
        ok = True
        y = x
        for f in g.chain:
            y = f(y)
            if not lo_c <= y <= hi_c:
                ok = False
        ok = ok and 0.8 <= y <= 1.2
        inside = not g.empty and g.domain[0] <= x <= g.domain[1]
        if inside:
            assert ok
        elif ok:
            # only floating-point slivers at the domain ends may disagree
            assert not g.empty and min(abs(x - g.domain[0]), abs(x - g.domain[1])) < 1e-12


@settings(max_examples=150, deadline=None)
@given(specs(), st.integers(0, 6), st.integers(0, 6))
def test_fixed_points_match_closed_form(spec, k, n):
    g = compose_return(spec, (k, n))
    fps = fixed_points(g)
    x_star, a = closed_form_fixed_point(spec, k, n)
    expected = (x_star is not None and not g.empty and g.domain[0] <= x_star <= g.domain[1])
    if not expected:
        assert all(fp.flag == "continuum" for fp in fps) or not fps
        return
    assert len(fps) == 1
    assert math.isclose(fps[0].root, x_star, rel_tol=1e-11, abs_tol=1e-11)
    assert math.isclose(fps[0].derivative, a, rel_tol=1e-12)


def test_continuum_flagged():
    # slope one return map that is the identity: beta^k lambda^n = 1 with matching offset
    spec = CycleSpec(0.5, 2.0, t=0.0625)
    g = compose_return(spec, (4, 4))
    # 2^4 (0.5^4 (x - 2) + 1/16) = x - 2 + 1: no fixed point at all
    assert fixed_points(g) == []


def test_breakpoint_root_is_ambiguous():
    # Gamma^{5,4}(x) = 2x - 4 + 32t, fixed at 1 for t = 3/32, where the first psi input is 1/32
    spec = CycleSpec(0.5, 2.0, t=3 / 32)
    h, y = 1e-3, 1 / 32
    kink = ((y - h, y, y + h, y + 3 * h), (2 * (y - h), 2 * y, 2 * y + 3 * h, 2 * (y + 3 * h)))
    psi = cm.PiecewiseLinear(2.0, [kink])
    g = compose_return(maps_from(spec)._replace(psi=psi), (5, 4))
    fps = fixed_points(g)
    assert len(fps) == 1
    assert abs(fps[0].root - 1.0) < 1e-12 and fps[0].flag == "ambiguous"
    # one-sided derivative from the right: slope 3 instead of 2 at the first psi step
    assert math.isclose(fps[0].derivative, 3.0, rel_tol=1e-9)


def test_fundamental_domain_perturbation_hits_target():
    psi = cm.Linear(2.0)
    psi_t, n_j, sup = perturb_psi_fundamental_domains(psi, 0.003, 3)
    x = 0.003
    for _ in range(n_j):
        x = psi_t(x)
    assert math.isclose(x, 2.0 ** -3, rel_tol=1e-12)
    assert sup < 0.01
    # unchanged above beta^-(m+1)
    assert psi_t(0.3) == psi(0.3)


def test_fundamental_domain_exact_orbit_is_unperturbed():
    psi_t, n_j, sup = perturb_psi_fundamental_domains(cm.Linear(2.0), 2.0 ** -10, 3)
    assert sup == 0.0 and n_j == 7


def test_too_few_domains():
    with pytest.raises(TooFewDomains):
        perturb_psi_fundamental_domains(cm.Linear(2.0), 0.1, 3)


@settings(max_examples=100, deadline=None)
@given(specs(), st.integers(0, 6), st.integers(0, 6), st.floats(0.05, 0.5))
def test_linear_derivative_and_domain_monotonicity(spec, k, n, d2):
    g = compose_return(spec, (k, n))
    if not g.empty:
        x = 0.5 * (g.domain[0] + g.domain[1])
        expected = spec.sign_t1 * spec.sign_t2 * spec.beta ** k * spec.lam ** n
        assert math.isclose(derivative(g, x), expected, rel_tol=1e-12)
    small, big = sorted((spec.delta, d2))
    g_small = compose_return(spec.__class__(**{**spec.__dict__, "delta": small}), (k, n))
    g_big = compose_return(spec.__class__(**{**spec.__dict__, "delta": big}), (k, n))
    if not g_small.empty:
        assert not g_big.empty
        assert g_big.domain[0] <= g_small.domain[0] + 1e-15 and g_small.domain[1] <= g_big.domain[1] + 1e-15


def test_perturbation_is_local():
    psi = cm.Linear(2.0)
    psi_t, _, _ = perturb_psi_fundamental_domains(psi, 0.003, 3)
    rng = np.random.default_rng(1)
    outside = np.concatenate([rng.uniform(2.0 ** -4, 1.2, 500), -rng.uniform(0, 1.2, 300),
                              rng.uniform(0, psi_t.patches[0][0][0], 200)])
    assert all(psi_t(float(x)) == psi(float(x)) for x in outside)


def test_derivative_matches_finite_differences():
    spec = CycleSpec(0.5, 2.0, t=3 / 32)
    maps = maps_from(spec)
    patch = cm.window_patch(2.0, 1 / 32, 1 / 16 + 2e-5, 1.97, 2e-3)
    g = compose_return(maps._replace(psi=cm.PiecewiseLinear(2.0, [patch])), (5, 4))
    rng = np.random.default_rng(2)
    bps = [g.domain[0], g.domain[1]] + list(breakpoints_of(g))
    checked = 0
    for x in rng.uniform(g.domain[0], g.domain[1], 1000):
        h = 1e-7
        if min(abs(x - b) for b in bps) < 10 * h:
            continue
        fd = (evaluate(g, x + h) - evaluate(g, x - h)) / (2 * h)
        assert math.isclose(derivative(g, x), fd, rel_tol=1e-5)
        checked += 1
    assert checked > 900


def breakpoints_of(g):
    from hdcycle.ifs import breakpoints
    return breakpoints(g)
