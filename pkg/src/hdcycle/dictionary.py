"""Translate solutions of central equations into dynamical objects.

Each ``detect_*`` function solves one family of one-dimensional equations
built from the central maps and reports what the solution means for the full
model: periodic points, strong homoclinic intersections, heterodimensional
cycles, heteroclinic and homoclinic points.  ``cross_check`` replays the
entries through the full model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import central as cm
from .errors import DomainEscape, LeftNeighborhood, NoFixedPoint, OracleMismatch
from .ifs import CentralMaps, Itinerary, compose_return, evaluate, fixed_points, maps_from
from .model import (
    ChartPoint, CycleSpec, ModelDiffeomorphism, PeriodicPointRecord, build_model,
    classify_eigenvalue, oracle_periodic, period_of, step,
)

DETECT_TOL = 1e-10
ZERO_TOL = 1e-12
ORACLE_TOL = 1e-8


def _context(system):
    """(central maps, spec) for a spec, a model or a (maps, spec) pair."""
    if isinstance(system, tuple) and len(system) == 2 and isinstance(system[1], CycleSpec):
        return maps_from(system[0]), system[1]
    if isinstance(system, ModelDiffeomorphism):
        return maps_from(system), system.spec
    if isinstance(system, CycleSpec):
        return maps_from(system), system
    raise TypeError(f"unsupported system {type(system).__name__}")


def _in_range(x, rng):
    return rng[0] <= x <= rng[1]


@dataclass
class DictionaryReport:
    periodic: list = field(default_factory=list)
    strong_homoclinic: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    heteroclinic_D: list = field(default_factory=list)
    heteroclinic_E: list = field(default_factory=list)
    homoclinic_F: list = field(default_factory=list)

    def to_dict(self):
        return {
            "periodic": [r.to_dict() for r in self.periodic],
            "strong_homoclinic": [[r.to_dict(), list(it)] for r, it in self.strong_homoclinic],
            "cycles": [[d, i, h] for d, i, h in self.cycles],
            "heteroclinic_D": [list(e) for e in self.heteroclinic_D],
            "heteroclinic_E": [list(e) for e in self.heteroclinic_E],
            "homoclinic_F": [list(e) for e in self.homoclinic_F],
        }


# (A) -------------------------------------------------------------------------

def detect_periodic(system, itinerary, interval=None) -> list:
    """One record per fixed point of the return map along ``itinerary``."""
    maps, spec = _context(system)
    gamma = compose_return(maps, itinerary)
    if interval is not None and gamma.domain is not None:
        lo, hi = max(gamma.domain[0], interval[0]), min(gamma.domain[1], interval[1])
        if lo > hi:
            return []
    out = []
    for fp in fixed_points(gamma):
        s_index, neutral = classify_eigenvalue(fp.derivative, spec.s_dim)
        inside = _in_range(fp.root, maps.interval)
        out.append(PeriodicPointRecord(
            central_coord=fp.root,
            itinerary=tuple(gamma.itinerary),
            period=period_of(spec, gamma.itinerary),
            central_eigenvalue=fp.derivative,
            s_index=s_index,
            neutral=neutral,
            flag=fp.flag,
            ss_meets_uQ=inside,
            uu_meets_sP=inside,
        ))
    return out


# (B) -------------------------------------------------------------------------

def return_residual(maps, itinerary, x):
    """``|Gamma(x) - x|`` along ``itinerary`` or ``None`` if ``x`` is outside its domain."""
    gamma = compose_return(maps, itinerary)
    if gamma.domain is None or not _in_range(x, gamma.domain):
        return None
    return abs(evaluate(gamma, x) - x)


def detect_strong_homoclinic(system, record, k_max, n_max) -> Optional[Itinerary]:
    """First ``(k, n) != record.itinerary`` whose return also fixes ``record``'s point."""
    maps, _ = _context(system)
    r = record.central_coord
    own = tuple(record.itinerary)
    for k in range(k_max + 1):
        for n in range(n_max + 1):
            if (k, n) == own:
                continue
            res = return_residual(maps, (k, n), r)
            if res is not None and res <= DETECT_TOL:
                return Itinerary(k, n)
    return None


# (C) -------------------------------------------------------------------------

def kill_value(maps, d, i):
    """``theta1(phi^i(theta2(d)))`` or ``None`` if an intermediate leaves the charts."""
    rng = maps.central_range
    x = maps.theta2(d)
    if not _in_range(x, rng):
        return None
    for _ in range(i):
        x = maps.phi(x)
        if not _in_range(x, rng):
            return None
    y = maps.theta1(x)
    return y if _in_range(y, rng) else None


def detect_cycle_from_disk(system, d, i_max, h=None) -> Optional[int]:
    """Smallest ``i`` with ``theta1 phi^i theta2 (d) = 0``.

    With ``h`` given, ``d`` is replaced by ``psi^h(t)``, which must lie in I.
    """
    maps, _ = _context(system)
    if h is not None:
        d = cm.iterate(maps.psi, maps.t, h)
    if not _in_range(d, maps.interval):
        return None
    for i in range(i_max + 1):
        v = kill_value(maps, d, i)
        if v is not None and abs(v) <= ZERO_TOL:
            return i
    return None


# (D) -------------------------------------------------------------------------

def _returns_of(maps, r, k_max, n_max):
    """Images of ``r`` under every admissible return, (0, 0) meaning no return."""
    out = [((0, 0), r)]
    for k in range(k_max + 1):
        for n in range(n_max + 1):
            if (k, n) == (0, 0):
                continue
            gamma = compose_return(maps, (k, n))
            if gamma.domain is not None and _in_range(r, gamma.domain):
                out.append(((k, n), evaluate(gamma, r)))
    out.sort(key=lambda e: e[0])
    return out


def detect_heteroclinic_D(system, r, i_max, k_max, n_max):
    """First ``(i, k~, n~)`` with ``theta1 phi^i theta2 Gamma^{k~,n~}(r) = 0``."""
    maps, _ = _context(system)
    images = _returns_of(maps, r, k_max, n_max)
    for i in range(i_max + 1):
        for (k, n), y in images:
            v = kill_value(maps, y, i)
            if v is not None and abs(v) <= ZERO_TOL:
                return (i, k, n)
    return None


# (E) -------------------------------------------------------------------------

def detect_heteroclinic_E(system, d, r, i_max, j_max):
    """First ``(i, j)`` with ``Gamma^{i,j}(d) = r``.

    The special cases are tried first: ``r == d`` gives ``(0, 0)`` and
    ``psi^i(t) == r`` gives ``(i, None)``.
    """
    maps, _ = _context(system)
    if abs(d - r) <= DETECT_TOL:
        return (0, 0)
    x = maps.t
    for i in range(i_max + 1):
        if not _in_range(x, maps.central_range):
            break
        if abs(x - r) <= DETECT_TOL:
            return (i, None)
        x = maps.psi(x)
    for i in range(i_max + 1):
        for j in range(j_max + 1):
            res = None
            gamma = compose_return(maps, (i, j))
            if gamma.domain is not None and _in_range(d, gamma.domain):
                res = abs(evaluate(gamma, d) - r)
            if res is not None and res <= DETECT_TOL:
                return (i, j)
    return None


# (F) -------------------------------------------------------------------------

def detect_homoclinic_F(system, i_max) -> list:
    """All ``(i, psi^i(t))`` with ``psi^i(t)`` in I."""
    maps, _ = _context(system)
    out = []
    x = maps.t
    for i in range(i_max + 1):
        if not _in_range(x, maps.central_range):
            break
        if _in_range(x, maps.interval):
            out.append((i, x))
        x = maps.psi(x)
    return out


# -----------------------------------------------------------------------------

def build_report(system, k_max=8, n_max=8, i_max=40) -> DictionaryReport:
    """Run every detector over the given bounds."""
    maps, spec = _context(system)
    rep = DictionaryReport()
    for k in range(k_max + 1):
        for n in range(n_max + 1):
            rep.periodic.extend(detect_periodic(system, (k, n)))
    for rec in rep.periodic:
        it = detect_strong_homoclinic(system, rec, k_max, n_max)
        if it is not None:
            rep.strong_homoclinic.append((rec, tuple(it)))
    rep.homoclinic_F = detect_homoclinic_F(system, i_max)
    for h, hhat in rep.homoclinic_F:
        i = detect_cycle_from_disk(system, hhat, i_max)
        if i is not None:
            rep.cycles.append((hhat, i, h))
    for rec in rep.periodic:
        hit = detect_heteroclinic_D(system, rec.central_coord, i_max, min(k_max, 4), min(n_max, 4))
        if hit is not None:
            rep.heteroclinic_D.append((rec.central_coord,) + hit)
    return rep


def cross_check(model: ModelDiffeomorphism, report: DictionaryReport) -> list:
    """Replay ``report`` through the full model; one row per checked entry."""
    rows = []
    for idx, rec in enumerate(report.periodic):
        try:
            o = oracle_periodic(model, rec.itinerary, rec.central_coord)
        except (NoFixedPoint, DomainEscape) as exc:
            raise OracleMismatch(f"periodic entry {idx}: oracle failed ({exc})") from exc
        disc = max(abs(o.central_coord - rec.central_coord),
                   abs(o.central_eigenvalue - rec.central_eigenvalue) / max(1.0, abs(o.central_eigenvalue)))
        if o.period != rec.period:
            disc = float("inf")
        rows.append({"kind": "periodic", "index": idx, "discrepancy": disc})
        if disc > ORACLE_TOL:
            raise OracleMismatch(f"periodic entry {idx} differs by {disc:.3e}")
    s, u = model.spec.s_dim, model.spec.u_dim
    for idx, (i, hhat) in enumerate(report.homoclinic_F):
        p = ChartPoint("Q", model.a_s.copy(), model.spec.t, np.zeros(u))
        try:
            for _ in range(i):
                p = step(model, p)
        except LeftNeighborhood as exc:
            raise OracleMismatch(f"F entry {idx}: orbit left the charts") from exc
        disc = abs(p.xc - hhat)
        if np.any(np.abs(p.xu) > 1.0):
            disc = float("inf")
        rows.append({"kind": "homoclinic_F", "index": idx, "discrepancy": disc})
        if disc > ORACLE_TOL:
            raise OracleMismatch(f"F entry {idx} differs by {disc:.3e}")
    return rows
