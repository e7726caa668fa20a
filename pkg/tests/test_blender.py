import math

import numpy as np
import pytest

from hdcycle.blender import (
    BlenderModel, assemble_robust_cycle_certificate, place_blender, split_saddle_node, verify_robust,
    verify_superposition,
)
from hdcycle.errors import EmptyRegion, MarginViolated, RootsOutsideBase
from hdcycle.model import CycleSpec
from hdcycle.stabilizer import stabilize

EX1 = BlenderModel((1.2, -0.3), (1.2, 0.3), (-1.0, 1.0))


def test_example_one_region_and_margin():
    cert = verify_superposition(EX1, 60)
    assert cert.region == (-1.0, 1.0)
    # at x = 1 the best branch is A: 1.2 - 0.3 = 0.9, slack 0.1
    assert cert.margin == pytest.approx(0.1)
    assert cert.required_depth == math.ceil(math.log(2 / 1e-9) / math.log(1.2))
    assert all(w is not None for _, w in cert.itinerary_table)


@pytest.mark.parametrize("model", [
    BlenderModel((1.2, -0.3), (1.2, -0.3), (-1.0, 1.0)),
    BlenderModel((3.0, -2.0), (3.0, 2.0), (-1.0, 1.0)),
    BlenderModel((0.9, -0.3), (1.2, 0.3), (-1.0, 1.0)),
])
def test_empty_regions(model):
    with pytest.raises(EmptyRegion):
        verify_superposition(model, 60)


def _brute_force_ok(model, x, depth):
    lo, hi = model.base
    stack = [(x, 0)]
    while stack:
        y, d = stack.pop()
        if d == depth:
            return True
        for br in model.branches:
            z = br(y)
            if lo <= z <= hi:
                stack.append((z, d + 1))
    return False


def test_greedy_agrees_with_exhaustive_search():
    model = BlenderModel((1.5, -0.4), (1.5, 0.4), (-1.0, 1.0))
    cert = verify_superposition(model, 60)
    a, b = cert.region
    for x in np.linspace(a, b, 2000):
        assert _brute_force_ok(model, float(x), 12)


def test_region_grows_with_overlap():
    """Overlap is measured between the inverse-branch images of the region."""
    rows = []
    for c in (0.1, 0.2, 0.3, 0.4):
        model = BlenderModel((1.5, -c), (1.5, c), (-1.0, 1.0))
        a, b = verify_superposition(model, 40).region
        ga = model.branch_A.preimage((a, b))
        gb = model.branch_B.preimage((a, b))
        overlap = min(ga[1], gb[1]) - max(ga[0], gb[0])
        rows.append((overlap, b - a))
        # the region runs between the fixed points -+2c
        assert (a, b) == pytest.approx((-2 * c, 2 * c))
    rows.sort()
    assert all(w1 <= w2 for (_, w1), (_, w2) in zip(rows, rows[1:]))


def test_robustness():
    ok, worst = verify_robust(EX1, 0.01)
    # the worst corner lowers the slope and pushes an offset outward
    assert ok and 0 < worst < 0.1
    assert verify_robust(EX1, 0.5)[0] is False
    assert verify_robust(EX1, 0.0) == (True, pytest.approx(0.1))


def test_split():
    sp = split_saddle_node(1.0, 0.01)
    assert (sp.S_minus, sp.S_plus) == pytest.approx((0.9, 1.1))
    assert (sp.deriv_minus, sp.deriv_plus) == pytest.approx((0.8, 1.2))
    assert abs(sp(sp.S_minus) - sp.S_minus) <= 1e-15 and abs(sp(sp.S_plus) - sp.S_plus) <= 1e-15
    with pytest.raises(RootsOutsideBase):
        split_saddle_node(1.0, 0.01, (0.95, 1.05))


def test_placement_keeps_slopes():
    sp = split_saddle_node(1.0, 0.01)
    m = place_blender(EX1, sp)
    assert m.A_c == pytest.approx(1.1) and m.B_c == pytest.approx(1.1 - 0.4)
    assert m.branch_A.slope == 1.2 and m.branch_B.slope == 1.2


@pytest.fixture(scope="module")
def dyadic_cert():
    return stabilize(CycleSpec(0.5, 2.0))


def test_robust_cycle_report(dyadic_cert):
    sp = split_saddle_node(1.0, 0.01)
    rep = assemble_robust_cycle_certificate(sp, place_blender(EX1, sp), dyadic_cert)
    assert all(v > 0 for v in rep["margins"].values())
    assert rep["superposition"]["region"][0] < rep["witness"] < rep["superposition"]["region"][1]


def test_robust_cycle_negative_controls(dyadic_cert):
    sp = split_saddle_node(1.0, 0.01)
    narrow = place_blender(EX1, sp, width=0.05)
    with pytest.raises(MarginViolated) as e:
        assemble_robust_cycle_certificate(sp, narrow, dyadic_cert)
    assert e.value.step == "II"
    with pytest.raises(MarginViolated) as e:
        assemble_robust_cycle_certificate(sp, place_blender(EX1, sp), dyadic_cert, rho=0.5)
    assert e.value.step == "III"
    with pytest.raises(MarginViolated) as e:
        assemble_robust_cycle_certificate(sp, EX1, dyadic_cert)
    assert e.value.step == "I"


def test_margin_slope_is_order_rho(dyadic_cert):
    sp = split_saddle_node(1.0, 0.01)
    m = place_blender(EX1, sp)
    m0 = verify_superposition(m).margin
    for rho in (1e-4, 1e-5):
        _, worst = verify_robust(m, rho)
        assert 0 < m0 - worst <= 10 * rho * max(1.0, m0)
