"""Central return maps of the cycle and their fixed points."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import central as cm
from .errors import AtBreakpoint, OutOfDomain, TooFewDomains
from .model import CycleSpec, ModelDiffeomorphism

GRID_CELLS = 2**12
ROOT_TOL = 1e-13
BREAKPOINT_TOL = 1e-10


class Itinerary(NamedTuple):
    k: int  # number of psi iterates
    n: int  # number of phi iterates


class CentralMaps(NamedTuple):
    psi: object
    theta1: object
    phi: object
    theta2: object
    delta: float

    @property
    def interval(self):
        return (1.0 - self.delta, 1.0 + self.delta)

    @property
    def central_range(self):
        return (-1.0 - self.delta, 1.0 + self.delta)

    @property
    def t(self):
        return self.theta1.t


def maps_from(obj) -> CentralMaps:
    if isinstance(obj, CentralMaps):
        return obj
    if isinstance(obj, ModelDiffeomorphism):
        return CentralMaps(obj.psi_central, obj.theta1, obj.phi_central, obj.theta2, obj.spec.delta)
    if isinstance(obj, CycleSpec):
        return CentralMaps(cm.Linear(obj.beta), cm.Theta1(obj.sign_t1, obj.t), cm.Linear(obj.lam),
                           cm.Theta2(obj.sign_t2), obj.delta)
    raise TypeError(f"cannot build central maps from {type(obj).__name__}")


@dataclass(frozen=True)
class IFSReturnMap:
    maps: CentralMaps
    itinerary: Itinerary
    domain: Optional[tuple]

    @property
    def chain(self):
        k, n = self.itinerary
        m = self.maps
        return [m.theta2] + [m.phi] * n + [m.theta1] + [m.psi] * k

    @property
    def empty(self):
        return self.domain is None

    def __call__(self, x):
        return evaluate(self, x)


def _constraints(maps, itinerary):
    """Admissible range for the output of each factor of the chain."""
    k, n = itinerary
    rp = maps.central_range
    rq = maps.central_range
    out = [rp] * (n + 1) + [rq] * (k + 1)
    lo, hi = maps.interval
    out[-1] = (max(out[-1][0], lo), min(out[-1][1], hi))
    return out


def _forward_ok(chain, cons, x):
    for f, (lo, hi) in zip(chain, cons):
        x = f(x)
        if not lo <= x <= hi:
            return False
    return True


def _preimage(f, lo, hi):
    a, b = f.inverse(lo), f.inverse(hi)
    return (a, b) if a <= b else (b, a)


def compose_return(spec_or_maps, itinerary) -> IFSReturnMap:
    """Return map along ``itinerary`` with its certified domain inside I."""
    maps = maps_from(spec_or_maps)
    itinerary = Itinerary(int(itinerary[0]), int(itinerary[1]))
    if itinerary.k < 0 or itinerary.n < 0:
        raise ValueError("itinerary entries must be nonnegative")
    k, n = itinerary
    chain = [maps.theta2] + [maps.phi] * n + [maps.theta1] + [maps.psi] * k
    cons = _constraints(maps, itinerary)
    lo, hi = cons[-1]
    for j in range(len(chain) - 1, -1, -1):
        lo, hi = _preimage(chain[j], lo, hi)
        c = cons[j - 1] if j > 0 else maps.interval
        lo, hi = max(lo, c[0]), min(hi, c[1])
        if lo > hi:
            return IFSReturnMap(maps, itinerary, None)
    # shrink until both endpoints verify forward (monotone chain: endpoints suffice)
    for _ in range(64):
        ok_lo = _forward_ok(chain, cons, lo)
        ok_hi = _forward_ok(chain, cons, hi)
        if ok_lo and ok_hi:
            return IFSReturnMap(maps, itinerary, (lo, hi))
        w = max(abs(lo), abs(hi), 1.0) * 4e-16
        if not ok_lo:
            lo = lo + w
        if not ok_hi:
            hi = hi - w
        if lo > hi:
            break
    return IFSReturnMap(maps, itinerary, None)


def _in_domain(gamma, x):
    return gamma.domain is not None and gamma.domain[0] <= x <= gamma.domain[1]


def evaluate(gamma: IFSReturnMap, x):
    if not _in_domain(gamma, x):
        raise OutOfDomain(f"{x!r} not in domain {gamma.domain}")
    for f in gamma.chain:
        x = f(x)
    return x


def _eval_array(gamma, xs):
    for f in gamma.chain:
        xs = f(xs)
    return xs


def derivative(gamma: IFSReturnMap, x, side=0):
    """Chain-rule derivative; ``side=0`` raises at kinks, ``+-1`` gives one-sided values."""
    if not _in_domain(gamma, x):
        raise OutOfDomain(f"{x!r} not in domain {gamma.domain}")
    d = 1.0
    for f in gamma.chain:
        d *= f.deriv(x, side=side)
        x = f(x)
    return d


def breakpoints(gamma: IFSReturnMap):
    """Points of the domain where some factor of the chain is not differentiable."""
    if gamma.domain is None:
        return []
    lo, hi = gamma.domain
    chain = gamma.chain
    out = set()
    for j, f in enumerate(chain):
        for b in f.breakpoints:
            x = b
            for g in reversed(chain[:j]):
                x = g.inverse(x)
            if lo <= x <= hi:
                out.add(float(x))
    return sorted(out)


class FixedPoint(NamedTuple):
    root: float
    derivative: float
    flag: str = ""  # "", "ambiguous" or "continuum"


def _bisect(g, a, ga, b):
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm > 0) == (ga > 0):
            a, ga = mid, gm
        else:
            b = mid
        if b - a <= 1e-15 * max(1.0, abs(a)):
            break
    return 0.5 * (a + b)


def fixed_points(gamma: IFSReturnMap, cells: int = GRID_CELLS):
    """All solutions of ``gamma(x) = x`` in its domain."""
    if gamma.domain is None:
        return []
    lo, hi = gamma.domain
    g = lambda x: evaluate(gamma, x) - x
    if lo == hi:
        return [_record(gamma, lo, [])] if abs(g(lo)) <= ROOT_TOL else []
    xs = np.linspace(lo, hi, cells + 1)
    gs = _eval_array(gamma, xs.copy()) - xs
    scale = np.maximum(1.0, np.abs(xs))
    zero = np.abs(gs) <= ROOT_TOL * scale
    bps = breakpoints(gamma)
    roots = []
    i = 0
    while i <= cells:
        if zero[i]:
            j = i
            while j + 1 <= cells and zero[j + 1]:
                j += 1
            if j > i:
                a, b = xs[i], xs[j]
                rep = 1.0 if a <= 1.0 <= b else 0.5 * (a + b)
                roots.append(_record(gamma, rep, bps, flag="continuum"))
            else:
                roots.append(_record(gamma, xs[i], bps))
            i = j + 1
            continue
        if i < cells and not zero[i + 1] and (gs[i] > 0) != (gs[i + 1] > 0):
            r = _bisect(g, xs[i], gs[i], xs[i + 1])
            roots.append(_record(gamma, r, bps, polish=(xs[i], xs[i + 1])))
        i += 1
    return roots


def _record(gamma, r, bps, flag="", polish=None):
    r = float(r)
    near = any(abs(r - b) <= BREAKPOINT_TOL for b in bps)
    if polish is not None and not near:
        try:
            d = derivative(gamma, r)
            if d != 1.0:
                cand = r - (evaluate(gamma, r) - r) / (d - 1.0)
                if polish[0] <= cand <= polish[1] and abs(evaluate(gamma, cand) - cand) <= abs(evaluate(gamma, r) - r):
                    r = cand
        except (AtBreakpoint, OutOfDomain):
            pass
    if near and not flag:
        flag = "ambiguous"
    try:
        d = derivative(gamma, r, side=0 if not near else 1)
    except AtBreakpoint:
        d = derivative(gamma, r, side=1)
        flag = flag or "ambiguous"
    return FixedPoint(r, float(d), flag)


def perturb_psi_fundamental_domains(psi, omega: float, m: int, min_domains: float = 3.0):
    """Reroute ``psi`` near 0 so that the orbit of ``omega`` hits ``beta**-m``.

    Returns ``(psi_tilde, n_j, sup_distance)``.  ``psi_tilde`` equals ``psi`` on
    ``[beta**(-m-1), inf)`` and on a neighbourhood of 0.
    """
    beta = float(cm.slope_of(psi))
    if beta <= 1:
        raise ValueError("psi must be an increasing expansion")
    target = beta ** (-m)
    if not 0 < omega < target:
        raise TooFewDomains("need 0 < omega < beta**-m")
    n_float = math.log(target / omega) / math.log(beta)
    if n_float < min_domains:
        raise TooFewDomains(f"only {n_float:.2f} fundamental domains between omega and beta**-m")
    upper = beta ** (-m - 1)
    steps, _ = cm.route_steps(beta, omega, upper)
    if cm.iterate(cm.Linear(beta), omega, steps) == upper:
        return cm.PiecewiseLinear.from_linear(beta), steps + 1, 0.0
    last_err = None
    for s in (steps, steps + 1, steps - 1):
        if s < 1:
            continue
        try:
            pt = cm.reroute(beta, [(omega, upper, s)], upper)
        except TooFewDomains as exc:
            last_err = exc
            continue
        return pt, s + 1, pt.sup_distance()
    raise TooFewDomains(str(last_err))
