"""Affine simple-cycle model on the charts U_P and U_Q.

The model is block-diagonal in the splitting (strong stable, central, strong
unstable).  ``step`` applies one block: a period of P, a period of Q, or one
of the two transition maps.  ``oracle_periodic`` solves for a periodic point
of the full return map and is the ground truth the central quotient is
checked against.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Optional

import numpy as np

from . import central as cm
from .errors import DomainEscape, InvalidMatrix, InvalidSpec, LeftNeighborhood, NoFixedPoint

NEUTRAL_BAND = 1e-10

_JSON_KEYS = (
    "lambda", "beta", "sign_t1", "sign_t2", "period_p", "period_q",
    "tau_pq", "tau_qp", "s_dim", "u_dim", "delta", "t", "epsilon",
)


@dataclass(frozen=True)
class CycleSpec:
    lam: float
    beta: float
    sign_t1: int = 1
    sign_t2: int = 1
    period_p: int = 1
    period_q: int = 1
    tau_pq: int = 1
    tau_qp: int = 1
    s_dim: int = 1
    u_dim: int = 1
    delta: float = 0.2
    t: float = 0.0
    epsilon: float = 0.5

    def __post_init__(self):
        if not (0 < abs(self.lam) < 1):
            raise InvalidSpec(f"need 0 < |lambda| < 1, got {self.lam}")
        if not abs(self.beta) > 1:
            raise InvalidSpec(f"need |beta| > 1, got {self.beta}")
        if self.sign_t1 not in (1, -1) or self.sign_t2 not in (1, -1):
            raise InvalidSpec("signs must be +1 or -1")
        for name in ("period_p", "period_q", "tau_pq", "tau_qp"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidSpec(f"{name} must be a positive integer")
        for name in ("s_dim", "u_dim"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidSpec(f"{name} must be an integer >= 1")
        if not (0 < self.delta < 1):
            raise InvalidSpec("delta must lie in (0, 1)")
        if not self.epsilon > 0:
            raise InvalidSpec("epsilon must be positive")
        if not abs(self.t) <= self.epsilon:
            raise InvalidSpec(f"|t| = {abs(self.t)} exceeds epsilon = {self.epsilon}")

    @property
    def interval(self):
        return (1.0 - self.delta, 1.0 + self.delta)

    def with_t(self, t):
        return replace(self, t=float(t))

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lambda"] = d.pop("lam")
        return {k: d[k] for k in _JSON_KEYS}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(_JSON_KEYS)
        if unknown:
            raise InvalidSpec(f"unknown keys: {sorted(unknown)}")
        if "lambda" not in d or "beta" not in d:
            raise InvalidSpec("lambda and beta are required")
        kw = dict(d)
        kw["lam"] = kw.pop("lambda")
        for k in ("lam", "beta", "delta", "t", "epsilon"):
            if k in kw:
                if isinstance(kw[k], bool) or not isinstance(kw[k], (int, float)):
                    raise InvalidSpec(f"{k} must be a number")
                kw[k] = float(kw[k])
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"malformed JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise InvalidSpec("spec must be a JSON object")
        return cls.from_dict(d)


class ChartPoint(NamedTuple):
    chart: str  # "P" or "Q"
    xs: np.ndarray
    xc: float
    xu: np.ndarray


def chart_point(chart, xs, xc, xu):
    return ChartPoint(chart, np.atleast_1d(np.asarray(xs, dtype=float)), float(xc),
                      np.atleast_1d(np.asarray(xu, dtype=float)))


@dataclass(frozen=True)
class ModelDiffeomorphism:
    spec: CycleSpec
    a_s: np.ndarray
    a_u: np.ndarray
    A_s: np.ndarray
    B_s: np.ndarray
    T1_s: np.ndarray
    T2_s: np.ndarray
    A_u: np.ndarray
    B_u: np.ndarray
    T1_u: np.ndarray
    T2_u: np.ndarray
    phi_central: object
    psi_central: object
    transit_radius_1: float
    transit_radius_2: float

    @property
    def theta1(self):
        return cm.Theta1(self.spec.sign_t1, self.spec.t)

    @property
    def theta2(self):
        return cm.Theta2(self.spec.sign_t2)

    @property
    def central_range(self):
        d = self.spec.delta
        return (-1.0 - d, 1.0 + d)

    def chart_box(self, chart):
        lo, hi = self.central_range
        return {"s": (-1.0, 1.0), "c": (lo, hi), "u": (-1.0, 1.0)}

    def in_box(self, p):
        lo, hi = self.central_range
        return (lo <= p.xc <= hi and np.all(np.abs(p.xs) <= 1.0) and np.all(np.abs(p.xu) <= 1.0))

    @property
    def Y_P(self):
        return chart_point("P", np.zeros(self.spec.s_dim), 0.0, self.a_u)

    @property
    def X_Q(self):
        return chart_point("Q", np.zeros(self.spec.s_dim), 1.0, np.zeros(self.spec.u_dim))

    def with_central(self, psi=None, phi=None, spec=None):
        kw = {}
        if psi is not None:
            kw["psi_central"] = psi
        if phi is not None:
            kw["phi_central"] = phi
        if spec is not None:
            kw["spec"] = spec
        return replace(self, **kw)


def _as_matrix(m, dim, name):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape != (dim, dim):
        raise InvalidMatrix(f"{name} must be {dim}x{dim}, got {m.shape}")
    return m


def build_model(spec: CycleSpec, overrides: Optional[dict] = None, transit_radii=None) -> ModelDiffeomorphism:
    """Instantiate the affine model; ``overrides`` may replace any matrix or offset."""
    if not isinstance(spec, CycleSpec):
        raise InvalidSpec("spec must be a CycleSpec")
    s, u = spec.s_dim, spec.u_dim
    mats = {
        "A_s": 0.5 * np.eye(s), "B_s": 0.5 * np.eye(s), "T1_s": 0.5 * np.eye(s), "T2_s": 0.5 * np.eye(s),
        "A_u": 2.0 * np.eye(u), "B_u": 2.0 * np.eye(u), "T1_u": 2.0 * np.eye(u), "T2_u": 2.0 * np.eye(u),
    }
    offsets = {"a_s": np.full(s, 0.5), "a_u": np.full(u, 0.5)}
    overrides = dict(overrides or {})
    central = {"phi_central": cm.Linear(spec.lam), "psi_central": cm.Linear(spec.beta)}
    for key in ("phi_central", "psi_central"):
        if key in overrides:
            central[key] = overrides.pop(key)
    for key, val in overrides.items():
        if key in mats:
            dim = s if key.endswith("_s") else u
            mats[key] = _as_matrix(val, dim, key)
        elif key in offsets:
            dim = s if key == "a_s" else u
            v = np.atleast_1d(np.asarray(val, dtype=float))
            if v.shape != (dim,):
                raise InvalidMatrix(f"{key} must have length {dim}")
            offsets[key] = v
        else:
            raise InvalidMatrix(f"unknown override {key!r}")
    for key, m in mats.items():
        if key.endswith("_s"):
            if np.linalg.norm(m, 2) >= 1.0:
                raise InvalidMatrix(f"{key} is not a contraction")
        else:
            sv = np.linalg.svd(m, compute_uv=False)
            if sv.min() <= 1.0:
                raise InvalidMatrix(f"{key} is not an expansion")
    if np.any(np.abs(offsets["a_s"]) > 1) or np.any(np.abs(offsets["a_u"]) > 1):
        raise InvalidMatrix("heteroclinic offsets must lie in the chart box")
    r1, r2 = transit_radii if transit_radii is not None else (1.0 + spec.delta, spec.delta)
    return ModelDiffeomorphism(spec=spec, **offsets, **mats, **central,
                               transit_radius_1=float(r1), transit_radius_2=float(r2))


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

def _block(model, p, transit):
    """Return (target chart, s-affine, central map, u-affine) for one block."""
    if p.chart == "P":
        if transit:
            return "Q", (model.T1_s, model.a_s), model.theta1, (model.T1_u, -model.T1_u @ model.a_u)
        return "P", (model.A_s, 0.0), model.phi_central, (model.A_u, 0.0)
    if p.chart == "Q":
        if transit:
            zs = np.zeros(model.spec.s_dim)
            return "P", (model.T2_s, zs), model.theta2, (model.T2_u, np.zeros(model.spec.u_dim))
        return "Q", (model.B_s, 0.0), model.psi_central, (model.B_u, 0.0)
    raise ValueError(f"unknown chart {p.chart!r}")


def in_transit_window(model, p):
    if p.chart == "P":
        return abs(p.xc) <= model.transit_radius_1
    return abs(p.xc - 1.0) <= model.transit_radius_2


def step(model: ModelDiffeomorphism, p: ChartPoint, transit: bool = False) -> ChartPoint:
    """Apply one block of the model to ``p``."""
    if not model.in_box(p):
        raise LeftNeighborhood(f"{p} is outside its chart box")
    if transit and not in_transit_window(model, p):
        raise LeftNeighborhood("point is not in the transit window")
    chart, (Ms, cs), f, (Mu, cu) = _block(model, p, transit)
    try:
        xc = float(f(p.xc))
    except cm.OutOfDomain as exc:
        raise LeftNeighborhood(str(exc)) from exc
    q = ChartPoint(chart, Ms @ p.xs + cs, xc, Mu @ p.xu + cu)
    if not model.in_box(q):
        raise LeftNeighborhood(f"image {q} escapes the chart box")
    return q


def step_inverse(model: ModelDiffeomorphism, q: ChartPoint, transit: bool = False) -> ChartPoint:
    """Undo ``step``; ``transit`` refers to the block being undone."""
    if q.chart == "Q":
        src = "P" if transit else "Q"
    else:
        src = "Q" if transit else "P"
    probe = ChartPoint(src, q.xs, 0.0, q.xu)
    _, (Ms, cs), f, (Mu, cu) = _block(model, probe, transit)
    xs = np.linalg.solve(Ms, q.xs - cs)
    xu = np.linalg.solve(Mu, q.xu - cu)
    return ChartPoint(src, xs, float(f.inverse(q.xc)), xu)


def blocks_for(itinerary):
    """Block schedule of the return along ``(k, n)`` starting near X_Q."""
    k, n = itinerary
    return [True] + [False] * n + [True] + [False] * k


def run_blocks(model, p, schedule):
    for transit in schedule:
        p = step(model, p, transit)
    return p


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

class PeriodicPointRecord(NamedTuple):
    central_coord: float
    itinerary: tuple
    period: int
    central_eigenvalue: float
    s_index: Optional[int]
    neutral: bool
    full_coords: Optional[tuple] = None
    spectrum: Optional[tuple] = None
    flag: str = ""
    ss_meets_uQ: bool = True
    uu_meets_sP: bool = True

    def to_dict(self):
        d = {
            "central_coord": self.central_coord,
            "itinerary": list(self.itinerary),
            "period": self.period,
            "central_eigenvalue": self.central_eigenvalue,
            "s_index": self.s_index,
            "neutral": self.neutral,
            "flag": self.flag,
            "ss_meets_uQ": self.ss_meets_uQ,
            "uu_meets_sP": self.uu_meets_sP,
        }
        if self.full_coords is not None:
            d["full_coords"] = [list(map(float, self.full_coords[0])), list(map(float, self.full_coords[1]))]
        return d


def period_of(spec, itinerary):
    k, n = itinerary
    return int(k) * int(spec.period_q) + int(n) * int(spec.period_p) + int(spec.tau_pq) + int(spec.tau_qp)


def classify_eigenvalue(ev, s_dim):
    a = abs(ev)
    if abs(a - 1.0) <= NEUTRAL_BAND:
        return None, True
    return (s_dim if a > 1 else s_dim + 1), False


def _central_chain(model, itinerary):
    k, n = itinerary
    return [model.theta2] + [model.phi_central] * n + [model.theta1] + [model.psi_central] * k


def central_composite(model, itinerary, x):
    """Central value and derivative of the return (one-sided from the right at kinks)."""
    d = 1.0
    for f in _central_chain(model, itinerary):
        d *= f.deriv(x, side=1)
        x = f(x)
    return x, d


def _affine_chain(model, itinerary, part):
    """Compose the s- or u-affine parts of the return: x -> M x + c."""
    dim = model.spec.s_dim if part == "s" else model.spec.u_dim
    M, c = np.eye(dim), np.zeros(dim)
    chart = "Q"
    for transit in blocks_for(itinerary):
        probe = ChartPoint(chart, np.zeros(model.spec.s_dim), 0.0, np.zeros(model.spec.u_dim))
        chart, s_aff, _, u_aff = _block(model, probe, transit)
        Mb, cb = s_aff if part == "s" else u_aff
        M = Mb @ M
        c = Mb @ c + cb
    return M, c


def _solve_strong(M, c, expanding, tol=1e-15, maxit=10_000):
    dim = len(c)
    x = np.zeros(dim)
    if expanding:
        Minv = np.linalg.inv(M)
        g = lambda y: Minv @ (y - c)
    else:
        g = lambda y: M @ y + c
    for _ in range(maxit):
        y = g(x)
        if np.max(np.abs(y - x), initial=0.0) <= tol * max(1.0, np.max(np.abs(y), initial=0.0)):
            return y
        x = y
    return x


def oracle_periodic(model: ModelDiffeomorphism, itinerary, central_guess: float) -> PeriodicPointRecord:
    """Periodic point of the full return map along ``itinerary`` near ``central_guess``."""
    itinerary = (int(itinerary[0]), int(itinerary[1]))
    lo, hi = model.spec.interval
    x = float(central_guess)
    try:
        gx, dg = central_composite(model, itinerary, x)
        if abs(gx - x) > 1e-13:
            for _ in range(100):
                if abs(dg - 1.0) < 1e-14:
                    raise NoFixedPoint("degenerate central derivative")
                x_new = x - (gx - x) / (dg - 1.0)
                if not (lo - 1e-12 <= x_new <= hi + 1e-12):
                    raise NoFixedPoint("central Newton iteration left the interval")
                gx, dg = central_composite(model, itinerary, x_new)
                done = abs(x_new - x) <= 1e-15 * max(1.0, abs(x)) or abs(gx - x_new) <= 1e-15
                x = x_new
                if done:
                    break
            # strong expansion amplifies rounding in x by |dg|
            if abs(gx - x) > 1e-11 * max(1.0, abs(dg)):
                raise NoFixedPoint("central iteration did not converge")
    except cm.OutOfDomain as exc:
        raise DomainEscape(str(exc)) from exc
    if not (lo <= x <= hi):
        raise NoFixedPoint(f"central root {x} outside the interval")

    Ms, cs = _affine_chain(model, itinerary, "s")
    Mu, cu = _affine_chain(model, itinerary, "u")
    rs = _solve_strong(Ms, cs, expanding=False)
    ru = _solve_strong(Mu, cu, expanding=True)

    start = ChartPoint("Q", rs, x, ru)
    try:
        end = run_blocks(model, start, blocks_for(itinerary))
    except LeftNeighborhood as exc:
        raise DomainEscape(str(exc)) from exc
    if end.chart != "Q" or abs(end.xc - x) > 1e-9 or np.max(np.abs(end.xs - rs), initial=0) > 1e-9:
        raise DomainEscape("full orbit does not close up")

    spectrum = tuple(sorted(
        [complex(v) for v in np.linalg.eigvals(Ms)] + [complex(dg)] + [complex(v) for v in np.linalg.eigvals(Mu)],
        key=abs,
    ))
    s_index, neutral = classify_eigenvalue(dg, model.spec.s_dim)
    return PeriodicPointRecord(
        central_coord=x,
        itinerary=itinerary,
        period=period_of(model.spec, itinerary),
        central_eigenvalue=float(dg),
        s_index=s_index,
        neutral=neutral,
        full_coords=(rs, ru),
        spectrum=spectrum,
    )
