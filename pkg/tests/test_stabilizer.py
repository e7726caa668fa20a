import json
import math

import pytest

from hdcycle.errors import BudgetExceeded, NotTwisted, NoAccumulationData, TwistedWithoutAccumulation
from hdcycle.ifs import compose_return, derivative, evaluate
from hdcycle.model import CycleSpec
from hdcycle.stabilizer import (
    build_adapted_homoclinics, classify, construct_lemma_ifs, derivative_bounds, detwist,
    flatten_to_saddle_node, normalize_signs, solve_beta, stabilize, tune_resonance, verify_certificate,
)

ACC = [2.0 ** -i for i in range(1, 30)]


@pytest.mark.parametrize("kw,verdict", [
    (dict(lam=0.5, beta=2.0, sign_t1=-1), "Twisted"),
    (dict(lam=0.5, beta=2.0), "NonTwisted"),
    (dict(lam=-0.5, beta=2.0, sign_t1=-1), "NonTwisted"),
    (dict(lam=0.5, beta=-2.0, sign_t1=-1), "NonTwisted"),
])
def test_classify(kw, verdict):
    assert classify(CycleSpec(**kw)).verdict == verdict


def test_normalize_signs_witness():
    spec, w = normalize_signs(CycleSpec(-0.5, 2.0, sign_t1=-1))
    assert spec.sign_t1 == 1
    # lam^1 beta^0 = -0.5 is the first negative product in (1/4, 4)
    assert (w.n, w.m, w.factor) == (1, 0, 0.5)
    assert normalize_signs(CycleSpec(0.5, 2.0)) == (CycleSpec(0.5, 2.0), None)


def test_solve_beta_dyadic():
    # beta^-5 = 0.5^4 (1 - 0.5) = 2^-5
    assert solve_beta("BothPositive", 0.5, 2.1, 4, 5) == 2.0
    # a negative beta to an odd power cannot equal the positive 0.5^3
    assert solve_beta("LambdaK_eq_BetaNegM", 0.5, -2.1, 3, 3) is None
    # even power: beta^-2 = 1/8 gives beta = -2 sqrt 2
    assert solve_beta("LambdaK_eq_BetaNegM", 0.5, -2.1, 3, 2) == pytest.approx(-2 * math.sqrt(2))


def test_tune_resonance_budget():
    res = tune_resonance(CycleSpec(0.5, 2.003), "BothPositive", k_range=range(2, 10), m_range=range(1, 12))
    assert res.spec.beta == 2.0 and res.rel_change == pytest.approx(0.003 / 2.003)
    with pytest.raises(BudgetExceeded):
        tune_resonance(CycleSpec(0.5, 2.3), "BothPositive", k_range=[4], m_range=[5], eps_pert=1e-3)


def test_adapted_homoclinic_offsets():
    data = build_adapted_homoclinics(CycleSpec(0.5, 2.0), 3, 3, count=4)
    # delta_i = 2^3 2^(-2i) (1 - 0.5), first one inside delta = 0.2 is i = 3
    assert data.index == (3, 4, 5, 6)
    assert data.delta_list == tuple(8 * 4.0 ** -i * 0.5 for i in (3, 4, 5, 6))
    assert data.zeta == tuple(1 - d for d in data.delta_list)
    assert data.t_k == 0.125


def _dyadic_pieces():
    spec = CycleSpec(0.5, 2.0)
    res = tune_resonance(spec, "BothPositive", k_range=[4], m_range=[5])
    data = build_adapted_homoclinics(spec, 3, 3, count=8)
    return res, data


def test_lemma_ifs_fixed_point_and_derivative():
    res, data = _dyadic_pieces()
    cert = construct_lemma_ifs(res, data)
    ch = cert.chosen
    g = compose_return(cert.maps, ch["saddle_node_itinerary"])
    assert abs(evaluate(g, 1.0) - 1.0) <= 1e-12
    d = derivative(g, 1.0)
    assert d == pytest.approx(0.5 / (1 - 0.5 + ch["delta_j"]), rel=1e-9)
    lo, hi = derivative_bounds(0.5)
    assert lo < d < hi


def test_flatten_makes_neutral():
    res, data = _dyadic_pieces()
    cert = flatten_to_saddle_node(construct_lemma_ifs(res, data))
    g = compose_return(cert.maps, cert.chosen["saddle_node_itinerary"])
    assert derivative(g, 1.0) == pytest.approx(1.0, abs=1e-10)
    assert cert.saddle_node.neutral
    assert cert.perturbation_sizes["flattening"] <= 1e-2


def test_dyadic_pipeline_certificate_roundtrip():
    cert = stabilize(CycleSpec(0.5, 2.0))
    assert max(cert.residuals.values()) <= 1e-10
    for key in ("h2_strong_homoclinic", "h3_Wu_P_meets_Wss_S", "h4_Ws_P_meets_Wuu_S"):
        assert cert.flags[key]
    text = cert.to_json()
    check = verify_certificate(text)
    assert check["ok"]
    d = json.loads(text)
    d["psi_tilde"]["slope"] = 2.001
    assert not verify_certificate(json.dumps(d))["ok"]


def test_twisted_needs_data():
    with pytest.raises(TwistedWithoutAccumulation):
        stabilize(CycleSpec(0.5, 2.0, sign_t1=-1))
    with pytest.raises(NotTwisted):
        detwist(CycleSpec(0.5, 2.0), ACC)
    with pytest.raises(NoAccumulationData):
        detwist(CycleSpec(0.5, 2.0, sign_t1=-1), [])


def test_detwist_small_case():
    out = detwist(CycleSpec(0.5, 2.0, sign_t1=-1), ACC, k=3, m=3)
    assert out.chosen["unperturbed_return_at_1"] == 1.0
    assert abs(out.chosen["unperturbed_derivative"]) == 1.0
    # |Gamma'| = 1 - lam^(ell - k) with ell = 9
    assert abs(out.R_record.central_eigenvalue) == pytest.approx(1 - 0.5 ** 6, rel=1e-12)
    assert classify(out.spec).verdict == "NonTwisted"
    assert max(out.residuals.values()) <= 1e-12


def test_twisted_pipeline():
    cert = stabilize(CycleSpec(0.5, 2.0, sign_t1=-1), ACC)
    assert max(cert.residuals.values()) <= 1e-10
    assert cert.original_spec.sign_t1 == -1


def test_budget_too_small():
    with pytest.raises(BudgetExceeded):
        stabilize(CycleSpec(0.5, 2.07), eps_pert=1e-6)


def test_resonance_improves_with_wider_ranges():
    spec = CycleSpec(0.5, 2.13)
    prev = math.inf
    for top in (5, 10, 15, 20):
        rel = tune_resonance(spec, "BothPositive", k_range=range(2, top + 1), m_range=range(1, 60),
                             eps_pert=1.0).rel_change
        assert rel <= prev
        prev = rel
    assert prev < 1e-2


def test_detwist_saddle_has_index_s_plus_one():
    out = detwist(CycleSpec(0.5, 2.0, sign_t1=-1), ACC, k=3, m=3)
    assert out.R_record.s_index == 2 and abs(out.R_record.central_eigenvalue) < 1


def test_normalize_keeps_nontwisted():
    for spec in (CycleSpec(0.5, 2.0), CycleSpec(-0.5, 2.0, sign_t1=-1), CycleSpec(0.5, -3.0, sign_t1=-1)):
        out, _ = normalize_signs(spec)
        assert classify(out).verdict == "NonTwisted"
