"""Blender-horseshoes in the central coordinate.

A blender is modelled by two affine expanding branches on a base interval.
A central coordinate belongs to the superposition region when some choice of
branches keeps its forward orbit inside the region forever; in the affine
model this is what makes every vertical disk through it meet the local stable
set.  The saddle-node produced by the stabilization is split into two saddles
and the blender is placed at the expanding one.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import EmptyRegion, MarginViolated, RootsOutsideBase

REGION_TOL = 1e-9
MAX_PIECES = 4096
ROBUST_SAMPLES = 100
ROBUST_SEED = 20240611


class AffineBranch(NamedTuple):
    slope: float
    offset: float

    def __call__(self, x):
        return self.slope * x + self.offset

    def inverse(self, y):
        return (y - self.offset) / self.slope

    @property
    def fixed_point(self):
        return self.offset / (1.0 - self.slope)

    def image(self, iv):
        a, b = self(iv[0]), self(iv[1])
        return (min(a, b), max(a, b))

    def preimage(self, iv):
        a, b = self.inverse(iv[0]), self.inverse(iv[1])
        return (min(a, b), max(a, b))

    def to_dict(self):
        return {"slope": self.slope, "offset": self.offset}


def _branch(b):
    if isinstance(b, AffineBranch):
        return b
    if isinstance(b, dict):
        return AffineBranch(float(b["slope"]), float(b["offset"]))
    return AffineBranch(float(b[0]), float(b[1]))


@dataclass(frozen=True)
class BlenderModel:
    branch_A: AffineBranch
    branch_B: AffineBranch
    base: tuple

    def __post_init__(self):
        object.__setattr__(self, "branch_A", _branch(self.branch_A))
        object.__setattr__(self, "branch_B", _branch(self.branch_B))
        lo, hi = (float(v) for v in self.base)
        if not lo < hi:
            raise ValueError("base must be a nondegenerate interval")
        object.__setattr__(self, "base", (lo, hi))

    @property
    def branches(self):
        return (self.branch_A, self.branch_B)

    @property
    def mu_min(self):
        return min(abs(b.slope) for b in self.branches)

    @property
    def A_c(self):
        return self.branch_A.fixed_point

    @property
    def B_c(self):
        return self.branch_B.fixed_point

    def overlap(self):
        """Intersection of the two branch images of the base, or ``None``."""
        ia, ib = self.branch_A.image(self.base), self.branch_B.image(self.base)
        lo, hi = max(ia[0], ib[0]), min(ia[1], ib[1])
        return (lo, hi) if lo < hi else None

    def conjugate(self, scale, shift):
        """The model seen through ``x -> scale*x + shift``."""
        def move(b):
            return AffineBranch(b.slope, scale * b.offset + shift * (1.0 - b.slope))
        a, c = scale * self.base[0] + shift, scale * self.base[1] + shift
        return BlenderModel(move(self.branch_A), move(self.branch_B), (min(a, c), max(a, c)))

    def perturbed(self, d):
        """Slopes and offsets shifted by ``d = (dsA, doA, dsB, doB)``.

        Offset shifts are measured in half-widths of the base, so a perturbation
        means the same thing for every affine placement of the model.
        """
        a, b = self.branch_A, self.branch_B
        h = 0.5 * (self.base[1] - self.base[0])
        return BlenderModel(AffineBranch(a.slope + d[0], a.offset + h * d[1]),
                            AffineBranch(b.slope + d[2], b.offset + h * d[3]), self.base)

    def to_dict(self):
        return {"branch_A": self.branch_A.to_dict(), "branch_B": self.branch_B.to_dict(),
                "base": list(self.base)}

    @classmethod
    def from_dict(cls, d):
        return cls(_branch(d["branch_A"]), _branch(d["branch_B"]), tuple(d["base"]))


@dataclass
class SuperpositionCertificate:
    region: tuple
    depth: int
    margin: float
    required_depth: int
    itinerary_table: list = field(default_factory=list)

    @property
    def certified(self):
        return self.depth >= self.required_depth and self.margin > 0

    def contains(self, x):
        return self.region[0] <= x <= self.region[1]

    def to_dict(self):
        return {"region": list(self.region), "depth": self.depth, "margin": self.margin,
                "required_depth": self.required_depth,
                "itinerary_table": [[x, w] for x, w in self.itinerary_table]}


def _merge(pieces):
    pieces = sorted(p for p in pieces if p[1] - p[0] > 0)
    out = []
    for a, b in pieces:
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _refine(model, pieces):
    """Points of the base sent by some branch into ``pieces``."""
    lo, hi = model.base
    new = []
    for br in model.branches:
        for p in pieces:
            a, b = br.preimage(p)
            a, b = max(a, lo), min(b, hi)
            if a < b:
                new.append((a, b))
    return _merge(new)


def _slack(br, x, iv):
    y = br(x)
    return min(y - iv[0], iv[1] - y)


def _region_margin(model, iv):
    """Least over ``x`` in ``iv`` of the best branch slack of ``x`` inside the base.

    Each slack is the minimum of two affine functions of ``x``; the pointwise
    maximum over branches is piecewise linear, so its minimum sits at an
    endpoint or where two of the four affine pieces cross.
    """
    base = model.base
    lines = []
    for br in model.branches:
        lines.append((br.slope, br.offset - base[0]))
        lines.append((-br.slope, base[1] - br.offset))
    xs = {iv[0], iv[1]}
    for (s1, c1), (s2, c2) in itertools.combinations(lines, 2):
        if s1 != s2:
            x = (c2 - c1) / (s1 - s2)
            if iv[0] < x < iv[1]:
                xs.add(x)
    return min(max(_slack(br, x, base) for br in model.branches) for x in xs)


def _greedy_word(model, x, iv, depth):
    """Branch word keeping ``x`` inside ``iv``, choosing the largest slack each step."""
    word = []
    for _ in range(depth):
        br_i = max(range(2), key=lambda i: _slack(model.branches[i], x, iv))
        br = model.branches[br_i]
        if _slack(br, x, iv) < -REGION_TOL:
            return None
        word.append("AB"[br_i])
        x = min(max(br(x), iv[0]), iv[1])
    return "".join(word)


def verify_superposition(model: BlenderModel, depth: int = 60, samples: int = 5) -> SuperpositionCertificate:
    """Certify the interval of central coordinates with an in-base forward itinerary.

    The region is the largest component of the points whose orbit can be kept
    in the base for ``depth`` steps, cut down to the band between the two
    distinguished fixed points.
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    lo, hi = model.base
    if model.mu_min <= 1.0:
        raise EmptyRegion(f"branches must expand, least slope {model.mu_min:.3g}")
    pieces = [model.base]
    for _ in range(depth):
        pieces = _refine(model, pieces)
        if not pieces:
            raise EmptyRegion("no point keeps an in-base itinerary")
        if len(pieces) > MAX_PIECES:
            pieces = sorted(pieces, key=lambda p: p[1] - p[0])[-MAX_PIECES:]
            pieces.sort()
    a, b = max(pieces, key=lambda p: p[1] - p[0])
    fa, fb = sorted((model.A_c, model.B_c))
    a, b = max(a, fa), min(b, fb)
    if b - a <= REGION_TOL:
        raise EmptyRegion("superposition region is degenerate")
    # every point of the region must have a branch keeping it strictly inside the base
    margin = _region_margin(model, (a, b))
    if margin <= 0:
        raise EmptyRegion(f"covering fails inside the region (margin {margin:.3e})")
    required = math.ceil(math.log((hi - lo) / REGION_TOL) / math.log(model.mu_min))
    table = []
    for x in np.linspace(a, b, samples):
        table.append((float(x), _greedy_word(model, float(x), (a, b), min(depth, 16))))
    return SuperpositionCertificate((a, b), depth, margin, required, table)


def _perturbations(rho, samples, seed):
    corners = [tuple(rho * s for s in signs) for signs in itertools.product((-1, 0, 1), repeat=4)]
    rng = np.random.default_rng(seed)
    inner = [tuple(float(v) for v in row) for row in rng.uniform(-rho, rho, size=(samples, 4))]
    return corners + inner


def verify_robust(model: BlenderModel, rho: float, depth: int = 60, samples: int = ROBUST_SAMPLES,
                  seed: int = ROBUST_SEED):
    """``(ok, worst_margin)`` over the 3^4 corner perturbations and random interior ones."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    worst = math.inf
    ok = True
    perts = [(0.0,) * 4] if rho == 0 else _perturbations(rho, samples, seed)
    for d in perts:
        try:
            m = verify_superposition(model.perturbed(d), depth).margin
        except EmptyRegion:
            ok, m = False, -math.inf
        worst = min(worst, m)
        if m <= 0:
            ok = False
    return ok, worst


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaddleNodeSplit:
    r: float
    e: float
    S_minus: float
    S_plus: float
    deriv_minus: float
    deriv_plus: float

    def __call__(self, x):
        return x + (x - self.r) ** 2 - self.e

    @property
    def connecting_interval(self):
        return (self.S_minus, self.S_plus)

    def to_dict(self):
        return {"r": self.r, "e": self.e, "S_minus": self.S_minus, "S_plus": self.S_plus,
                "deriv_minus": self.deriv_minus, "deriv_plus": self.deriv_plus}


def split_saddle_node(r: float, e: float, base=None) -> SaddleNodeSplit:
    """Fixed points ``r -+ sqrt(e)`` of ``x + (x - r)**2 - e``."""
    if not e > 0:
        raise ValueError("e must be positive")
    h = math.sqrt(e)
    lo, hi = r - h, r + h
    if base is not None and not (base[0] <= lo and hi <= base[1]):
        raise RootsOutsideBase(f"roots {lo!r}, {hi!r} not inside {tuple(base)}")
    return SaddleNodeSplit(r, e, lo, hi, 1.0 - 2.0 * h, 1.0 + 2.0 * h)


def place_blender(model: BlenderModel, split: SaddleNodeSplit, width: Optional[float] = None) -> BlenderModel:
    """Conjugate ``model`` so that ``A_c`` lands on ``S_plus`` and ``B_c`` on ``S_plus - width``."""
    if width is None:
        width = 2.0 * (split.S_plus - split.S_minus)
    gap = model.A_c - model.B_c
    if gap == 0:
        raise EmptyRegion("distinguished points coincide")
    scale = width / gap
    return model.conjugate(scale, split.S_plus - scale * model.A_c)


def _witness(stab_cert):
    ch = stab_cert.chosen
    return float(ch.get("strong_homoclinic_point", ch.get("saddle_node_point", 1.0)))


def _beta_slopes(stab_cert, rho):
    """Change of each certificate residual when ``beta`` moves by a relative ``rho``."""
    from .stabilizer import eval_equation
    spec = stab_cert.tuned_spec
    base = stab_cert.maps
    moved = base._replace(psi=_scaled_psi(stab_cert.psi_tilde, 1.0 + rho))
    out = {}
    for eq in stab_cert.equations:
        r0, r1 = eval_equation(base, eq), eval_equation(moved, eq)
        out[eq["name"]] = (r1 - r0) / (rho * abs(spec.beta)) if math.isfinite(r1) else None
    return out


def _scaled_psi(psi, factor):
    from .central import PiecewiseLinear
    patches = tuple((xs, tuple(y * factor for y in ys)) for xs, ys in psi.patches)
    return PiecewiseLinear(psi.slope * factor, patches, psi.domain)


def assemble_robust_cycle_certificate(split: SaddleNodeSplit, model: BlenderModel, stab_cert,
                                      rho: float = 0.01, depth: int = 60, tol: float = 1e-10) -> dict:
    """Tie the stabilization certificate to a blender at the split saddle-node.

    ``model`` must already have ``S_plus`` as the fixed point of ``branch_A``;
    see ``place_blender``.
    """
    flags = stab_cert.flags
    for key in ("h2_strong_homoclinic", "h3_Wu_P_meets_Wss_S", "h4_Ws_P_meets_Wuu_S"):
        if not flags.get(key):
            raise MarginViolated("hypotheses", 0.0)
    # S_plus must be branch A's fixed point and both must be expanding there
    m1 = min(split.deriv_plus, abs(model.branch_A.slope)) - 1.0
    gap = abs(model.A_c - split.S_plus)
    if gap > tol or m1 <= 0:
        raise MarginViolated("I", m1 if gap <= tol else -gap)
    try:
        sup = verify_superposition(model, depth)
    except EmptyRegion:
        raise MarginViolated("II", -math.inf) from None
    w = _witness(stab_cert)
    m2 = min(w - sup.region[0], sup.region[1] - w)
    if m2 <= 0:
        raise MarginViolated("II", m2)
    ok, m3 = verify_robust(model, rho, depth)
    if not ok or m3 <= 0:
        raise MarginViolated("III", m3)
    slopes = _beta_slopes(stab_cert, rho) if rho > 0 else {}
    return {
        "split": split.to_dict(),
        "blender": model.to_dict(),
        "superposition": sup.to_dict(),
        "witness": w,
        "margins": {"I": m1, "II": m2, "III": m3},
        "rho": rho,
        "residual_beta_slopes": slopes,
        "cycle_flags": {k: bool(v) for k, v in sorted(flags.items())},
        "residuals": dict(sorted(stab_cert.residuals.items())),
    }
