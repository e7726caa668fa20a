"""Constructive stabilization of non-twisted cycles in the affine model.

The pipeline tunes the central multiplier of Q, builds a sequence of
homoclinic disks of P accumulating on the point H, produces a saddle whose
return map has derivative of controlled size, flattens it into a saddle-node
and finally connects its strong manifolds.  Every perturbation is realized as
an explicit change of ``beta`` or a piecewise-linear modification of ``psi``
supported away from the points the certificate relies on.

The certificate lists every equation as a word of return maps so it can be
re-evaluated from its JSON form alone (see ``verify_certificate``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from . import central as cm
from .dictionary import detect_heteroclinic_D, detect_homoclinic_F, detect_periodic, kill_value
from .errors import (
    BoundViolated, BudgetExceeded, NoAccumulationData, NoNegativeMultiplier, NotTwisted,
    OutOfInterval, ResidualBroken, SnapBudgetExceeded, TooFewDomains, TwistedWithoutAccumulation,
)
from .ifs import CentralMaps, compose_return, derivative, evaluate, maps_from
from .model import CycleSpec, PeriodicPointRecord, classify_eigenvalue, period_of

EPS_PERT = 1e-2
SNAP_BUDGET = 1e-2
RESIDUAL_TOL = 1e-10

RELATIONS = ("LambdaK_eq_BetaNegM", "BothPositive", "NonPositive", "Step2")


# ---------------------------------------------------------------------------
# Classification and sign normalization
# ---------------------------------------------------------------------------

class TwistClass(NamedTuple):
    signs: tuple  # (sign_Q, sign_P, sign_T1) as "+"/"-"
    verdict: str  # "Twisted" or "NonTwisted"

    def to_dict(self):
        return {"signs": list(self.signs), "verdict": self.verdict}


def _pm(x):
    return "+" if x > 0 else "-"


def classify(spec: CycleSpec) -> TwistClass:
    signs = (_pm(spec.beta), _pm(spec.lam), _pm(spec.sign_t1))
    return TwistClass(signs, "Twisted" if signs == ("+", "+", "-") else "NonTwisted")


class SignWitness(NamedTuple):
    n: int
    m: int
    factor: float


def normalize_signs(spec: CycleSpec, K: float = 4.0, max_power: int = 60):
    """Make the unfolding map orientation preserving.

    A negative product ``lam**n * beta**m`` of moderate size is composed
    into the unfolding map; the rescale factor ``|lam**n beta**m|`` is recorded
    and absorbed by the model, so the new unfolding map is ``x -> x + t``.
    """
    if spec.sign_t1 == 1:
        return spec, None
    if spec.lam > 0 and spec.beta > 0:
        raise NoNegativeMultiplier("both central multipliers are positive; the cycle is twisted")
    best = None
    for total in range(1, 2 * max_power + 1):
        for n in range(0, min(total, max_power) + 1):
            m = total - n
            if m > max_power:
                continue
            v = spec.lam**n * spec.beta**m
            if v < 0 and 1.0 / K < abs(v) < K:
                best = SignWitness(n, m, abs(v))
                break
        if best is not None:
            break
    if best is None:
        raise NoNegativeMultiplier("no negative product of moderate size found")
    return replace(spec, sign_t1=1), best


# ---------------------------------------------------------------------------
# Resonance tuning (only beta moves)
# ---------------------------------------------------------------------------

class Resonance(NamedTuple):
    spec: CycleSpec
    rel_change: float
    k: int
    m: int
    relation: str


def resonance_target(relation, lam, k):
    """Right-hand side ``beta**(-p)`` of the relation and the exponent ``p`` per ``m``."""
    if relation in ("LambdaK_eq_BetaNegM", "Step2"):
        return lam**k, 1
    if relation == "BothPositive":
        return lam**k * (1.0 - lam), 1
    if relation == "NonPositive":
        return lam ** (2 * k) * (1.0 - lam**2), 2
    raise ValueError(f"unknown relation {relation!r}")


def solve_beta(relation, lam, beta, k, m):
    """``beta'`` with the sign of ``beta`` solving the relation, or ``None``."""
    target, p = resonance_target(relation, lam, k)
    e = p * m
    sign_lhs = (1.0 if beta > 0 else -1.0) ** e
    if target == 0 or (target > 0) != (sign_lhs > 0):
        return None
    b = abs(target) ** (-1.0 / e)
    return math.copysign(b, beta)


def default_k_range(lam, beta=2.0, relation="BothPositive", span=40, small=0.1):
    """Start where ``|lam|**k`` is small; span enough k to sweep a factor ``beta**2``."""
    p = 2 if relation == "NonPositive" else 1
    step = p * abs(math.log(abs(lam)))
    k0 = max(1, math.ceil(math.log(small) / -step))
    span = max(span, math.ceil(2 * math.log(abs(beta)) / step) + 2)
    return range(k0, k0 + span)


def flattening_k_range(spec, relation, eps_pert=EPS_PERT, span=None):
    """k values whose saddle orbit is long enough to flatten within ``eps_pert``.

    The derivative of the saddle is close to ``lam**p / (1 - lam**p)``;
    spreading its correction over ``M`` iterates costs about ``|log d| / M``.
    """
    p = 2 if relation == "NonPositive" else 1
    lam_p = abs(spec.lam) ** p
    d_est = lam_p / (1.0 - lam_p)
    M_min = math.ceil(abs(math.log(d_est)) / math.log1p(eps_pert / 2))
    m_min = max(1, math.ceil(M_min / p))
    k_flat = math.ceil((p * m_min * math.log(abs(spec.beta)) + math.log(1.0 - lam_p)) / -math.log(lam_p))
    base = default_k_range(spec.lam, spec.beta, relation)
    k0 = max(base.start, k_flat)
    return range(k0, k0 + len(base))


def tune_resonance(spec: CycleSpec, relation: str, k_range=None, m_range=None, eps_pert: float = EPS_PERT):
    """Move ``beta`` so that the chosen relation holds; minimal relative change wins."""
    if relation not in RELATIONS:
        raise ValueError(f"unknown relation {relation!r}")
    if relation == "BothPositive" and not (spec.lam > 0 and spec.beta > 0):
        raise ValueError("BothPositive needs positive multipliers")
    k_range = list(k_range if k_range is not None else default_k_range(spec.lam, spec.beta, relation))
    m_range = list(m_range if m_range is not None else range(1, 200))
    if not k_range or not m_range:
        raise ValueError("ranges must be nonempty")
    cands = resonance_candidates(spec, relation, k_range, m_range)
    if not cands:
        raise BudgetExceeded("no admissible (k, m) in the ranges")
    if cands[0].rel_change > eps_pert:
        raise BudgetExceeded(f"|dbeta/beta| = {cands[0].rel_change:.3e} exceeds {eps_pert:.1e}")
    return cands[0]


def resonance_candidates(spec, relation, k_range, m_range, eps_pert=None):
    """Every solvable ``(k, m)`` as a Resonance, smallest change of ``beta`` first."""
    out = []
    for k in k_range:
        for m in m_range:
            b = solve_beta(relation, spec.lam, spec.beta, k, m)
            if b is None:
                continue
            rel = abs(b - spec.beta) / abs(spec.beta)
            if eps_pert is None or rel <= eps_pert:
                out.append((rel, k, m, b))
    out.sort()
    return [Resonance(replace(spec, beta=b), rel, k, m, relation) for rel, k, m, b in out]


def relation_residual(relation, lam, beta, k, m):
    target, p = resonance_target(relation, lam, k)
    return abs(beta ** (-p * m) - target) / abs(target)


# ---------------------------------------------------------------------------
# Adapted homoclinic points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptedHomoclinicData:
    t_k: float
    H_central: float
    zeta: tuple
    delta_list: tuple
    index: tuple  # i for each zeta
    v: float
    k: int
    m: int
    cycle_residual: float = 0.0

    def to_dict(self):
        return {
            "t_k": self.t_k, "H_central": self.H_central, "zeta": list(self.zeta),
            "delta_list": list(self.delta_list), "index": list(self.index), "v": self.v,
            "k": self.k, "m": self.m, "cycle_residual": self.cycle_residual,
        }


def build_adapted_homoclinics(spec: CycleSpec, k: int, m: int, v: float = 0.5, count: Optional[int] = None,
                              start: Optional[int] = None, smallest: float = 1e-6,
                              max_count: int = 5000) -> AdaptedHomoclinicData:
    """Homoclinic disks of P at central coordinates ``1 - delta_i`` accumulating on 1.

    With ``count=None`` points are produced until ``delta_i < smallest * delta``.
    """
    if relation_residual("LambdaK_eq_BetaNegM", spec.lam, spec.beta, k, m) > 1e-14:
        raise ValueError("lambda**k = beta**-m does not hold")
    if not 0 < v < 1:
        raise ValueError("v must lie in (0, 1)")
    if classify(spec).verdict != "NonTwisted" or spec.sign_t1 != 1:
        raise ValueError("needs a non-twisted spec with orientation preserving unfolding")
    t_k = spec.lam**k
    tuned = spec.with_t(t_k)
    maps = maps_from(tuned)
    hits = dict(detect_homoclinic_F(tuned, m + 1))
    if m not in hits or abs(hits[m] - 1.0) > 1e-12:
        raise OutOfInterval("psi^m(t_k) is not 1")
    s2 = spec.sign_t2
    lo, hi = spec.interval
    zeta, deltas, idx = [], [], []
    i = 1 if start is None else start
    while len(zeta) < (count if count is not None else max_count):
        d = spec.beta**m * spec.lam ** (2 * i) * (1.0 - s2 * v)
        if count is None and zeta and d < smallest * spec.delta:
            break
        z = 1.0 - d
        if d > spec.delta:
            if start is not None:
                raise OutOfInterval(f"zeta_{i} = {z} lies outside I")
            i += 1
            continue
        if d <= 0:
            raise OutOfInterval("delta_i is not positive")
        # displayed computation: psi^m theta1 phi^(2i) theta2 (1 + v)
        x = maps.theta2(1.0 + v)
        for _ in range(2 * i):
            x = maps.phi(x)
        x = cm.iterate(maps.psi, maps.theta1(x), m)
        if abs(x - z) > 1e-12 or not lo <= z <= hi:
            raise OutOfInterval(f"zeta_{i} check failed ({x} vs {z})")
        if zeta and not z > zeta[-1]:
            raise OutOfInterval("zeta is not increasing (finite precision)")
        zeta.append(z)
        deltas.append(d)
        idx.append(i)
        i += 1
    cycle_res = abs(-spec.lam**k + t_k)
    return AdaptedHomoclinicData(t_k, 1.0, tuple(zeta), tuple(deltas), tuple(idx), v, k, m, cycle_res)


# ---------------------------------------------------------------------------
# Equations and certificates
# ---------------------------------------------------------------------------

def eval_equation(maps: CentralMaps, eq: dict):
    """Residual of a certificate equation, ``inf`` when a domain check fails.

    ``eq`` has keys ``start``, ``word`` (list of itineraries), optional ``i``
    (apply ``theta1 phi^i theta2`` at the end) and ``target``.
    """
    x = eq["start"]
    for it in eq["word"]:
        g = compose_return(maps, it)
        if g.domain is None or not g.domain[0] <= x <= g.domain[1]:
            return math.inf
        x = evaluate(g, x)
    if eq.get("i") is not None:
        x = kill_value(maps, x, eq["i"])
        if x is None:
            return math.inf
    return abs(x - eq["target"])


def _eq(name, start, word, target, i=None):
    return {"name": name, "start": float(start), "word": [list(map(int, w)) for w in word],
            "i": i, "target": float(target)}


@dataclass
class StabilizationCertificate:
    tuned_spec: CycleSpec
    psi_tilde: object
    phi_tilde: object
    chosen: dict
    saddle_node: Optional[PeriodicPointRecord]
    residuals: dict
    perturbation_sizes: dict
    equations: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    case: str = "positive"
    original_spec: Optional[CycleSpec] = None
    data: Optional[AdaptedHomoclinicData] = None
    history: list = field(default_factory=list)
    route_patches: list = field(default_factory=list)
    windows: list = field(default_factory=list)

    @property
    def maps(self):
        s = self.tuned_spec
        return CentralMaps(self.psi_tilde, cm.Theta1(s.sign_t1, s.t), self.phi_tilde, cm.Theta2(s.sign_t2), s.delta)

    def recompute(self):
        return recompute_residuals(self.maps, self.equations, self.chosen)

    def to_dict(self):
        return {
            "case": self.case,
            "original_spec": self.original_spec.to_dict() if self.original_spec else None,
            "tuned_spec": self.tuned_spec.to_dict(),
            "psi_tilde": self.psi_tilde.to_dict(),
            "phi_tilde": self.phi_tilde.to_dict(),
            "chosen": self.chosen,
            "saddle_node": self.saddle_node.to_dict() if self.saddle_node else None,
            "residuals": self.residuals,
            "perturbation_sizes": self.perturbation_sizes,
            "equations": self.equations,
            "flags": self.flags,
            "history": self.history,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


def recompute_residuals(maps: CentralMaps, equations, chosen) -> dict:
    res = {eq["name"]: eval_equation(maps, eq) for eq in equations}
    sn = chosen.get("saddle_node_itinerary")
    if sn is not None:
        g = compose_return(maps, sn)
        target = chosen.get("saddle_node_sign", 1.0)
        try:
            res["saddle_node"] = abs(derivative(g, chosen.get("r", 1.0)) - target) if chosen.get("flattened") else None
        except Exception:
            res["saddle_node"] = math.inf
        if res["saddle_node"] is None:
            del res["saddle_node"]
    return res


def verify_certificate(text: str, tol: float = RESIDUAL_TOL) -> dict:
    """Re-evaluate every equation of a serialized certificate."""
    d = json.loads(text)
    spec = CycleSpec.from_dict(d["tuned_spec"])
    maps = CentralMaps(cm.from_dict(d["psi_tilde"]), cm.Theta1(spec.sign_t1, spec.t),
                       cm.from_dict(d["phi_tilde"]), cm.Theta2(spec.sign_t2), spec.delta)
    res = recompute_residuals(maps, d["equations"], d["chosen"])
    for name in ("ss_meets_uQ", "uu_meets_sP"):
        if name in d["residuals"]:
            res[name] = d["residuals"][name]
    res["ok"] = all(v <= tol for k, v in res.items() if k != "ok")
    return res


# ---------------------------------------------------------------------------
# Helpers for assembling psi_tilde
# ---------------------------------------------------------------------------

def _apply_chain(maps, x, itinerary, psi_inputs=None):
    k, n = itinerary
    x = maps.theta2(x)
    for _ in range(n):
        x = maps.phi(x)
    x = maps.theta1(x)
    for _ in range(k):
        if psi_inputs is not None:
            psi_inputs.append(x)
        x = maps.psi(x)
    return x


def psi_inputs(maps, eq):
    """Every point at which ``psi`` is evaluated along an equation."""
    out = []
    x = eq["start"]
    for it in eq["word"]:
        x = _apply_chain(maps, x, it, out)
    return out


def _assemble(beta, route_patches, windows):
    patches = list(route_patches)
    for z, value, slope, eta in windows:
        patches.append(cm.window_patch(beta, z, value, slope, eta))
    return cm.PiecewiseLinear(float(beta), tuple(patches))


def _sup_difference(f, g):
    nodes = set(f.breakpoints) | set(g.breakpoints)
    return max((abs(f(x) - g(x)) for x in nodes), default=0.0)


def _relation_for(spec):
    return "BothPositive" if spec.lam > 0 and spec.beta > 0 else "NonPositive"


def _landing(beta, target, upper):
    """``target * beta**-q`` with modulus in ``[upper, |beta| upper)`` and the number ``q``."""
    q, x = 0, target
    while abs(x) >= abs(beta) * upper:
        x /= beta
        q += 1
    if abs(x) < upper:
        raise TooFewDomains("target lies below the rerouting region")
    return x, q


def _check_sizes(sizes, eps_pert):
    for name, v in sizes.items():
        if v > eps_pert * (1 + 1e-12):
            raise BudgetExceeded(f"perturbation {name} = {v:.3e} exceeds {eps_pert:.1e}")


def _finalize_residuals(cert, tol=RESIDUAL_TOL):
    res = cert.recompute()
    res["ss_meets_uQ"] = 0.0 if cert.flags.get("ss_meets_uQ") else math.inf
    res["uu_meets_sP"] = 0.0 if cert.flags.get("uu_meets_sP") else math.inf
    bad = {k: v for k, v in res.items() if not v <= tol}
    if bad:
        raise ResidualBroken(f"residuals above {tol:g}: {bad}")
    cert.residuals = res
    return cert


# ---------------------------------------------------------------------------
# The saddle with controlled derivative
# ---------------------------------------------------------------------------

def derivative_bounds(lam):
    a = abs(lam)
    return lam**2 / (2.0 * (1.0 - lam**2)), 2.0 * a / (1.0 - a)


def construct_lemma_ifs(res: Resonance, data: AdaptedHomoclinicData, j: Optional[int] = None,
                        eps_pert: float = EPS_PERT, beta_ref: Optional[float] = None,
                        margin: float = 1e-6) -> StabilizationCertificate:
    """Saddle at central coordinate 1 with derivative strictly inside the bounds.

    ``res`` is the output of ``tune_resonance`` with relation ``BothPositive``
    or ``NonPositive``.  With ``j=None`` the smallest feasible index is used.
    """
    spec, k, m, relation = res.spec, res.k, res.m, res.relation
    if relation not in ("BothPositive", "NonPositive"):
        raise ValueError("needs a BothPositive or NonPositive resonance")
    if classify(spec).verdict != "NonTwisted" or spec.sign_t1 != 1:
        raise ValueError("needs a non-twisted spec with orientation preserving unfolding")
    if relation_residual(relation, spec.lam, spec.beta, k, m) > 1e-12:
        raise ValueError("resonance relation does not hold")
    beta_ref = spec.beta if beta_ref is None else beta_ref
    p = 1 if relation == "BothPositive" else 2
    K, M = p * k, p * m
    lam, s2 = spec.lam, spec.sign_t2
    lamK = lam**K
    zeta = dict(zip(data.index, data.zeta))
    delta = dict(zip(data.index, data.delta_list))
    step = 1 if s2 == 1 else -1
    candidates = [j] if j is not None else [i for i in data.index if i + step in zeta]
    lo_b, hi_b = derivative_bounds(lam)
    last = None
    for jj in candidates:
        j0 = jj + step
        if jj not in zeta or j0 not in zeta:
            raise OutOfInterval(f"zeta_{jj} or zeta_{j0} not available")
        try:
            mu = s2 * lamK * delta[jj]
            t = lamK + mu
            base = lamK - lam ** (K + p) + mu
            if base <= 0:
                raise BoundViolated("resonance base is not positive")
            beta_mu = math.copysign(base ** (-1.0 / M), spec.beta)
            rel = abs(beta_mu - beta_ref) / abs(beta_ref)
            if rel > eps_pert:
                raise BudgetExceeded(f"|dbeta/beta| = {rel:.3e}")
            new = replace(spec, beta=beta_mu, t=t)
            lin = maps_from(new)
            z0 = beta_mu ** (-M)
            upper = abs(beta_mu) ** (-M - 1)
            omega = kill_value(lin, zeta[j0], K)
            if omega is None or omega <= 0:
                raise TooFewDomains("omega is not positive")
            if math.log(abs(z0) / omega) / math.log(abs(beta_mu)) < 3.0:
                raise TooFewDomains("fewer than 3 fundamental domains")
            landing = z0 / beta_mu
            orbits, lower = cm.plan_routes(beta_mu, [(omega, landing)], upper)
            route_patches = cm.reroute_orbits(beta_mu, orbits, upper, lower)
            psi_t = _assemble(beta_mu, route_patches, [])
            n_j = len(orbits[0])  # steps to the landing plus one more
            sup = psi_t.sup_distance()
            _check_sizes({"beta_rel": rel, "psi_sup": sup}, eps_pert)
            maps = CentralMaps(psi_t, lin.theta1, lin.phi, lin.theta2, spec.delta)
            sn_it = (M, K + p)
            gamma = compose_return(maps, sn_it)
            d = derivative(gamma, 1.0)
            if not lo_b + margin < abs(d) < hi_b - margin:
                raise BoundViolated(f"|derivative| {abs(d)} outside ({lo_b}, {hi_b})")
        except (BudgetExceeded, TooFewDomains, BoundViolated) as exc:
            last = exc
            if j is not None:
                raise
            continue
        equations = [
            _eq("fixed_point", 1.0, [sn_it], 1.0),
            _eq("cycle_zeta_j", zeta[jj], [], 0.0, i=K),
            _eq("return_zeta_j0", zeta[j0], [(n_j + M, K)], 1.0),
        ]
        s_index, neutral = classify_eigenvalue(d, spec.s_dim)
        record = PeriodicPointRecord(1.0, sn_it, period_of(new, sn_it), float(d), s_index, neutral)
        chosen = {
            "relation": relation, "k": k, "m": m, "K": K, "M": M, "p": p,
            "t_i": t, "v_w": list(sn_it), "mu_j": mu, "n_j": n_j, "j": jj, "j0": j0,
            "zeta_j": zeta[jj], "zeta_j0": zeta[j0], "delta_j": delta[jj],
            "ell": None, "r": 1.0, "saddle_node_itinerary": list(sn_it),
            "saddle_node_sign": 1.0 if d > 0 else -1.0, "flattened": False,
            "derivative_before_flattening": float(d), "derivative_bounds": [lo_b, hi_b],
            "routes": {"omega": orbits[0]}, "upper": upper, "lower": lower,
        }
        cert = StabilizationCertificate(
            tuned_spec=new, psi_tilde=psi_t, phi_tilde=cm.PiecewiseLinear.from_linear(lam),
            chosen=chosen, saddle_node=record, residuals={},
            perturbation_sizes={"beta_rel": rel, "psi_sup": sup, "flattening": 0.0},
            equations=equations, flags={"ss_meets_uQ": True, "uu_meets_sP": True},
            case="positive" if p == 1 else "nonpositive", data=data,
            route_patches=route_patches, windows=[],
        )
        return _finalize_residuals(cert)
    raise last if last is not None else OutOfInterval("no admissible index j")


# ---------------------------------------------------------------------------
# Saddle-node and strong homoclinic connection
# ---------------------------------------------------------------------------

def _saddle_orbit(cert):
    """Inputs of psi along the saddle's return starting from 1."""
    pts = []
    _apply_chain(cert.maps, 1.0, cert.chosen["saddle_node_itinerary"], pts)
    return pts


def _windows_for(cert, factor, equations):
    beta = cert.tuned_spec.beta
    orbit = _saddle_orbit(cert)
    protected = []
    for eq in equations:
        protected.extend(psi_inputs(cert.maps, eq))
    wins = []
    for z in orbit:
        near = [abs(q - z) for q in protected if abs(q - z) > 1e-12 * abs(z)]
        eta = min([1e-3 * abs(z)] + [0.25 * d for d in near])
        wins.append((z, beta * z, factor * beta, eta))
    return wins


def flatten_to_saddle_node(cert: StabilizationCertificate, eps_pert: float = EPS_PERT) -> StabilizationCertificate:
    """Turn the saddle into a saddle-node (or flip) by slope windows along its orbit."""
    it = tuple(cert.chosen["saddle_node_itinerary"])
    d = derivative(compose_return(cert.maps, it), 1.0)
    M = it[0]
    factor = abs(d) ** (-1.0 / M)
    beta = cert.tuned_spec.beta
    bare = replace(cert, psi_tilde=_assemble(beta, cert.route_patches, []), windows=[])
    windows = _windows_for(bare, factor, cert.equations) if factor != 1.0 else []
    psi_t = _assemble(beta, cert.route_patches, windows)
    chosen = dict(cert.chosen, flattened=True, saddle_node_sign=1.0 if d > 0 else -1.0,
                  flattening_factor=factor)
    sizes = dict(cert.perturbation_sizes, flattening=abs(factor - 1.0),
                 psi_sup=max(cert.perturbation_sizes["psi_sup"], psi_t.sup_distance()))
    _check_sizes(sizes, eps_pert)
    out = replace(cert, psi_tilde=psi_t, windows=windows, chosen=chosen, perturbation_sizes=sizes)
    _finalize_residuals(out)
    d_new = derivative(compose_return(out.maps, it), 1.0)
    s_index, neutral = classify_eigenvalue(d_new, out.tuned_spec.s_dim)
    out.saddle_node = cert.saddle_node._replace(central_eigenvalue=float(d_new), s_index=s_index, neutral=neutral)
    if not neutral:
        raise ResidualBroken("flattened derivative is not neutral")
    out.history = cert.history + ["flatten_to_saddle_node"]
    return out


def _uu_points(cert, k_max, n_max):
    """Points of I reached from 1 by one return, starting with 1 itself."""
    out = [(1.0, [])]
    own = tuple(cert.chosen["saddle_node_itinerary"])
    lo, hi = cert.tuned_spec.interval
    maps = cert.maps
    rng = maps.central_range
    # walk the chain forward once per n instead of composing every return map
    x = maps.theta2(1.0)
    for n in range(n_max + 1):
        if n:
            x = maps.phi(x)
        if not rng[0] <= x <= rng[1]:
            break
        y = maps.theta1(x)
        for q in range(k_max + 1):
            if q:
                y = maps.psi(y)
            if not rng[0] <= y <= rng[1]:
                break
            if (q, n) != own and lo <= y <= hi and abs(y - 1.0) > 1e-9:
                out.append((float(y), [[q, n]]))
    return out


def connect_strong_homoclinic(cert: StabilizationCertificate, k_max: Optional[int] = None,
                              n_max: Optional[int] = None,
                              snap_budget: float = SNAP_BUDGET, eps_pert: float = EPS_PERT,
                              max_pairs: int = 400) -> StabilizationCertificate:
    """Add a strong homoclinic orbit of the saddle-node and a connection to W^s(Q).

    Both are realized by rerouting orbits of ``psi`` below the saddle's orbit:
    a point of W^uu(S) is sent to ``zeta_j`` (which the unfolding map kills,
    giving W^uu(S) meets W^s(Q)) and another one to ``zeta_j0`` (which returns
    to the saddle, closing a strong homoclinic loop).
    """
    if not cert.chosen.get("flattened"):
        raise ValueError("flatten the saddle first")
    ch = cert.chosen
    K, M = ch["K"], ch["M"]
    k_max = M + 2 if k_max is None else k_max
    n_max = K + 30 if n_max is None else n_max
    beta = cert.tuned_spec.beta
    upper, old_psi = ch["upper"], cert.psi_tilde
    omega = ch["routes"]["omega"]
    omega_seed, omega_landing = omega[0], omega[-1]
    land_D, q_D = _landing(beta, ch["zeta_j"], upper)
    land_S, q_S = _landing(beta, ch["zeta_j0"], upper)
    pts = _uu_points(cert, k_max, n_max)
    seeds = []
    for x, word in pts:
        s = kill_value(cert.maps, x, K)
        if s is None or s == 0.0 or abs(s) >= upper or (beta > 0 and s < 0):
            continue
        if abs(s - omega_seed) <= 1e-9 * abs(s):
            continue
        seeds.append((x, word, s))
    tried = 0
    for xD, wD, sD in seeds:
        for xS, wS, sS in seeds:
            if xS == xD or abs(sS - sD) <= 1e-9 * abs(sD):
                continue
            tried += 1
            if tried > max_pairs:
                break
            try:
                orbits, lower = cm.plan_routes(
                    beta, [(omega_seed, omega_landing), (sD, land_D), (sS, land_S)], upper)
            except TooFewDomains:
                continue
            route_patches = cm.reroute_orbits(beta, orbits, upper, lower)
            n_j = len(orbits[0])
            eqs = [e for e in cert.equations if e["name"] != "return_zeta_j0"]
            eqs.append(_eq("return_zeta_j0", ch["zeta_j0"], [(n_j + M, K)], 1.0))
            eqs.append(_eq("strong_homoclinic", 1.0,
                           wS + [(len(orbits[2]) - 1 + q_S, K), (n_j + M, K)], 1.0))
            eqs.append(_eq("uu_meets_sQ", 1.0, wD + [(len(orbits[1]) - 1 + q_D, K)], 0.0, i=K))
            bare = replace(cert, psi_tilde=_assemble(beta, route_patches, []))
            windows = _windows_for(bare, ch["flattening_factor"], eqs)
            psi_t = _assemble(beta, route_patches, windows)
            snap = _sup_difference(psi_t, old_psi)
            if snap > snap_budget:
                continue
            sizes = dict(cert.perturbation_sizes, psi_sup=psi_t.sup_distance(), snap=snap)
            try:
                _check_sizes({k: v for k, v in sizes.items() if k != "snap"}, eps_pert)
            except BudgetExceeded:
                continue
            chosen = dict(ch, n_j=n_j, routes={"omega": orbits[0], "uu_to_zeta_j": orbits[1],
                                               "uu_to_zeta_j0": orbits[2]},
                          lower=lower, n_bar_ell_bar=[list(w) for w in eqs[-2]["word"]],
                          D_word=[list(w) for w in eqs[-1]["word"]], D_i=K,
                          strong_homoclinic_point=xS, uu_point=xD)
            out = replace(cert, psi_tilde=psi_t, route_patches=route_patches, windows=windows,
                          equations=eqs, chosen=chosen, perturbation_sizes=sizes)
            try:
                _finalize_residuals(out)
            except ResidualBroken:
                continue
            out.history = cert.history + ["connect_strong_homoclinic"]
            out.flags = dict(out.flags, **blender_hypotheses(out))
            return out
    raise SnapBudgetExceeded("no strong homoclinic connection within the search bounds and snap budget")


def blender_hypotheses(cert, tol=RESIDUAL_TOL):
    """Flags for the four hypotheses of the blender-based robust-cycle construction."""
    r = cert.residuals
    return {
        "h1_index_P_is_ss_dim_plus_one": True,
        "h2_strong_homoclinic": r.get("strong_homoclinic", math.inf) <= tol,
        "h3_Wu_P_meets_Wss_S": r.get("return_zeta_j0", math.inf) <= tol,
        "h4_Ws_P_meets_Wuu_S": r.get("uu_meets_sP", math.inf) <= tol,
        "saddle_node_neutral": bool(cert.saddle_node and cert.saddle_node.neutral),
    }


# ---------------------------------------------------------------------------
# Twisted cycles with bi-accumulation
# ---------------------------------------------------------------------------

class DetwistResult(NamedTuple):
    spec: CycleSpec  # the new (non-twisted) cycle between R and Q
    R_record: PeriodicPointRecord
    report: dict
    maps: CentralMaps
    chosen: dict
    residuals: dict
    audit: dict


def detwist(spec: CycleSpec, accumulation, k: Optional[int] = None, m: Optional[int] = None,
            ell: Optional[int] = None, eps_pert: float = EPS_PERT, k_i_max: int = 60) -> DetwistResult:
    """Replace a twisted cycle by a non-twisted one through a new saddle R.

    ``accumulation`` lists central coordinates ``x_i -> 0+`` of transverse
    homoclinic points of P.
    """
    if classify(spec).verdict != "Twisted":
        raise NotTwisted("the cycle is not twisted")
    xs = [float(x) for x in (accumulation or [])]
    if not xs:
        raise NoAccumulationData("bi-accumulation data is empty")
    if any(x <= 0 for x in xs):
        raise ValueError("accumulation points must be positive")
    beta0, lam = spec.beta, spec.lam

    # step 1: an adapted homoclinic point of P at central coordinate 1
    best = None
    for i, x in enumerate(xs):
        for ki in range(1, k_i_max + 1):
            b = x ** (-1.0 / ki)
            if b <= 1:
                continue
            key = (abs(b - beta0) / beta0, i, ki)
            if best is None or key < best[0]:
                best = (key, b)
    (rel1, i1, k1), beta1 = best
    if rel1 > eps_pert:
        raise BudgetExceeded(f"step 1 needs |dbeta/beta| = {rel1:.3e}")
    H = cm.iterate(cm.Linear(beta1), xs[i1], k1)

    # step 2: beta^-m = lambda^k, so the unperturbed return fixes 1 with |derivative| 1
    if k is None or m is None:
        res = tune_resonance(replace(spec, beta=beta1), "Step2", eps_pert=eps_pert)
        k, m, beta2 = res.k, res.m, res.spec.beta
    else:
        beta2 = solve_beta("Step2", lam, beta1, k, m)
    rel = abs(beta2 - beta0) / beta0
    if rel > eps_pert:
        raise BudgetExceeded(f"|dbeta/beta| = {rel:.3e} exceeds {eps_pert:.1e}")
    s0 = replace(spec, beta=beta2, t=0.0)
    g0 = compose_return(s0, (m, k))
    g0_at_1 = evaluate(g0, 1.0)
    g0_der = derivative(g0, 1.0)

    # semi-simple maps: phi_tilde = phi, t = phi^ell(-1), psi_tilde raised along the orbit
    ell = 3 * k if ell is None else int(ell)
    if ell <= k:
        raise ValueError("ell must exceed k")
    phi_t = cm.PiecewiseLinear.from_linear(lam)
    t = cm.iterate(phi_t, -1.0, ell)
    s1 = replace(spec, beta=beta2, t=t)
    lin = maps_from(s1)
    x0 = lin.theta1(cm.iterate(lin.phi, lin.theta2(1.0), k))
    r = (1.0 - lam ** (ell - k)) ** (-1.0 / m)
    windows, x = [], x0
    frac = min(0.1, (beta2 - 1.0) / (4.0 * (beta2 + 1.0)))
    for _ in range(m):
        windows.append((x, beta2 * r * x, beta2 / r, frac * x))
        x = beta2 * r * x
    try:
        psi_t = _assemble(beta2, [], windows)
    except ValueError as exc:
        raise BudgetExceeded(f"tail too short for a small perturbation of psi ({exc})") from exc
    sup = psi_t.sup_distance()
    if sup > eps_pert:
        raise BudgetExceeded(f"sup|psi~ - psi| = {sup:.3e} exceeds {eps_pert:.1e}")
    maps = CentralMaps(psi_t, lin.theta1, phi_t, lin.theta2, spec.delta)

    recs = [rec for rec in detect_periodic((maps, s1), (m, k)) if abs(rec.central_coord - 1.0) <= 1e-9]
    if not recs:
        raise ResidualBroken("the saddle R was not found at 1")
    R = recs[0]
    fixed_res = abs(evaluate(compose_return(maps, (m, k)), 1.0) - 1.0)
    cycle_res = abs(-cm.iterate(phi_t, -1.0, ell) + t)
    D = detect_heteroclinic_D((maps, s1), 1.0, ell + 2, 2, 2)
    s2 = spec.sign_t2
    new_spec = replace(
        spec, lam=float(R.central_eigenvalue), beta=beta2, sign_t1=-s2, sign_t2=s2,
        period_p=R.period, t=0.0,
    )
    audit = {
        "theta2_reverses": s2 == -1,
        "composite_unfolding_sign": -s2,
        "R_multiplier": R.central_eigenvalue,
        "R_multiplier_negative": R.central_eigenvalue < 0,
        "new_signs": list(classify(new_spec).signs),
        "new_verdict": classify(new_spec).verdict,
        "derivative_below_one": abs(R.central_eigenvalue) < 1.0,
    }
    chosen = {
        "step1": {"i": i1, "x_i": xs[i1], "k_i": k1, "beta": beta1, "H": H},
        "k": k, "m": m, "ell": ell, "t": t, "r_factor": r, "beta": beta2,
        "beta_rel": rel, "psi_sup": sup,
        "unperturbed_return_at_1": g0_at_1, "unperturbed_derivative": g0_der,
    }
    residuals = {
        "fixed_point": fixed_res,
        "cycle": cycle_res,
        "H": abs(H - 1.0),
    }
    report = {
        "periodic": [R.to_dict()],
        "heteroclinic_D": [[1.0] + list(D)] if D else [],
        "heteroclinic_E": [[1.0, 1.0, 0, 0]],
        "homoclinic_F": [[k1, H]],
    }
    return DetwistResult(new_spec, R, report, maps, chosen, residuals, audit)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _detwist_for_pipeline(spec, accumulation, ell, eps_pert):
    """Detwist with a short tail ``ell - k``.

    A short tail keeps ``|lambda_R|`` away from 1, so the new cycle is cheap
    to flatten; the size of the correction of psi then shrinks like ``1/m``,
    so ``k`` and ``m`` are increased until it fits the budget.
    """
    last = None
    k_start = default_k_range(spec.lam, spec.beta, "Step2").start
    while k_start <= 512:
        try:
            res = tune_resonance(spec, "Step2", k_range=range(k_start, 2 * k_start + 2), eps_pert=eps_pert)
            tail = 2 if ell is None else ell - res.k
            return detwist(spec, accumulation, k=res.k, m=res.m, ell=res.k + tail, eps_pert=eps_pert)
        except BudgetExceeded as exc:
            last = exc
            k_start *= 2
    raise last


def stabilize(spec: CycleSpec, bi_accumulated=None, eps_pert: float = EPS_PERT,
              snap_budget: float = SNAP_BUDGET, ell: Optional[int] = None, k_max: Optional[int] = None,
              n_max: Optional[int] = None, v: float = 0.5,
              max_resonances: int = 12) -> StabilizationCertificate:
    """Run the whole stabilization pipeline and return a verified certificate."""
    history = []
    original = spec
    cls = classify(spec)
    history.append(f"classify: {cls.verdict}")
    detwisted = None
    if cls.verdict == "Twisted":
        if not bi_accumulated:
            raise TwistedWithoutAccumulation("twisted cycle without bi-accumulation data")
        detwisted = _detwist_for_pipeline(spec, bi_accumulated, ell, eps_pert)
        spec = detwisted.spec
        history.append("detwist")
    spec, witness = normalize_signs(spec)
    if witness is not None:
        history.append(f"normalize_signs: n={witness.n} m={witness.m} factor={witness.factor!r}")
    adapted = tune_resonance(spec, "LambdaK_eq_BetaNegM", eps_pert=eps_pert)
    data = build_adapted_homoclinics(adapted.spec, adapted.k, adapted.m, v=v)
    history.append(f"adapted homoclinics: k={adapted.k} m={adapted.m}")
    relation = _relation_for(spec)
    k_range = list(flattening_k_range(spec, relation, eps_pert))
    tune_resonance(spec, relation, k_range=k_range, eps_pert=eps_pert)  # budget check
    cands = resonance_candidates(spec, relation, k_range, range(1, 200), eps_pert)
    last = None
    # a resonance may leave no return of W^uu inside I; fall back to the next best one
    for res in cands[:max_resonances]:
        try:
            cert = construct_lemma_ifs(res, data, eps_pert=eps_pert, beta_ref=spec.beta)
            cert.history = history + [f"tune_resonance {relation}: k={res.k} m={res.m}",
                                      "construct_lemma_ifs"]
            cert = flatten_to_saddle_node(cert, eps_pert=eps_pert)
            cert = connect_strong_homoclinic(cert, k_max=k_max, n_max=n_max, snap_budget=snap_budget,
                                             eps_pert=eps_pert)
            break
        except (BudgetExceeded, TooFewDomains) as exc:
            last = exc
    else:
        raise last
    cert.original_spec = original
    if detwisted is not None:
        cert.chosen = dict(cert.chosen, ell=detwisted.chosen["ell"], detwist=detwisted.chosen)
    return cert
