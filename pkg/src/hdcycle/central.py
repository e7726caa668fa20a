"""One-dimensional central maps.

Every map here is a frozen dataclass that evaluates on floats and on numpy
arrays.  The monotone ones also expose ``inverse`` so that domains of
compositions can be pulled back interval by interval.

``PiecewiseLinear`` is a linear map ``x -> slope * x`` with finitely many
disjoint patches where it is replaced by linear interpolation through a node
list.  Away from the patches evaluation is exactly ``slope * x``, so a
perturbed map agrees bit for bit with the unperturbed one there.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AtBreakpoint, OutOfDomain, TooFewDomains

REAL_LINE = (-math.inf, math.inf)


def _check_domain(domain, x):
    lo, hi = domain
    if np.isscalar(x):
        if not lo <= x <= hi:
            raise OutOfDomain(f"{x!r} outside [{lo}, {hi}]")
    elif np.any((x < lo) | (x > hi)):
        raise OutOfDomain(f"values outside [{lo}, {hi}]")


@dataclass(frozen=True)
class Linear:
    slope: float
    domain: tuple = REAL_LINE

    kind = "linear"

    def __call__(self, x):
        _check_domain(self.domain, x)
        return self.slope * x

    def deriv(self, x, side=0):
        return self.slope if np.isscalar(x) else np.full_like(x, self.slope, dtype=float)

    def inverse(self, y):
        return y / self.slope

    @property
    def breakpoints(self):
        return ()

    @property
    def increasing(self):
        return self.slope > 0

    def to_dict(self):
        return {"kind": self.kind, "slope": self.slope}


@dataclass(frozen=True)
class Theta1:
    """Central unfolding map ``x -> sign * x + t``."""

    sign: int
    t: float
    domain: tuple = REAL_LINE

    kind = "theta1"

    def __call__(self, x):
        _check_domain(self.domain, x)
        return self.sign * x + self.t

    def deriv(self, x, side=0):
        return float(self.sign) if np.isscalar(x) else np.full_like(x, self.sign, dtype=float)

    def inverse(self, y):
        return self.sign * (y - self.t)

    @property
    def breakpoints(self):
        return ()

    @property
    def increasing(self):
        return self.sign > 0

    def to_dict(self):
        return {"kind": self.kind, "sign": self.sign, "t": self.t}


@dataclass(frozen=True)
class Theta2:
    """Central transition map ``x -> sign * (x - 1) - 1``."""

    sign: int
    domain: tuple = REAL_LINE

    kind = "theta2"

    def __call__(self, x):
        _check_domain(self.domain, x)
        return self.sign * (x - 1.0) - 1.0

    def deriv(self, x, side=0):
        return float(self.sign) if np.isscalar(x) else np.full_like(x, self.sign, dtype=float)

    def inverse(self, y):
        return self.sign * (y + 1.0) + 1.0

    @property
    def breakpoints(self):
        return ()

    @property
    def increasing(self):
        return self.sign > 0

    def to_dict(self):
        return {"kind": self.kind, "sign": self.sign}


@dataclass(frozen=True)
class PiecewiseLinear:
    """``x -> slope * x`` outside ``patches``; node interpolation inside.

    Each patch is a pair ``(xs, ys)`` of equal-length tuples with strictly
    increasing ``xs`` and ``ys[0] == slope * xs[0]``, ``ys[-1] == slope * xs[-1]``.
    Patches are disjoint and sorted.
    """

    slope: float
    patches: tuple = ()
    domain: tuple = REAL_LINE
    _starts: tuple = field(init=False, repr=False, compare=False)

    kind = "piecewise"

    def __post_init__(self):
        patches = tuple((tuple(map(float, xs)), tuple(map(float, ys))) for xs, ys in self.patches)
        patches = tuple(sorted(patches, key=lambda p: p[0][0]))
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "_starts", tuple(p[0][0] for p in patches))
        prev_end = -math.inf
        for xs, ys in patches:
            if len(xs) != len(ys) or len(xs) < 2:
                raise ValueError("patch needs at least two nodes")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("patch nodes must be strictly increasing")
            if xs[0] < prev_end:
                raise ValueError("patches overlap")
            prev_end = xs[-1]
            d = np.diff(ys)
            if not (np.all(d * self.slope > 0)):
                raise ValueError("patch is not strictly monotone in the direction of the slope")

    @classmethod
    def from_linear(cls, slope, domain=REAL_LINE):
        return cls(float(slope), (), domain)

    def _patch_at(self, x):
        i = bisect.bisect_right(self._starts, x) - 1
        if i >= 0 and x <= self.patches[i][0][-1]:
            return i
        return -1

    def _eval_scalar(self, x):
        i = self._patch_at(x)
        if i < 0:
            return self.slope * x
        xs, ys = self.patches[i]
        j = bisect.bisect_right(xs, x) - 1
        if j >= len(xs) - 1:
            return ys[-1]
        if x == xs[j]:
            return ys[j]
        return ys[j] + (x - xs[j]) * ((ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]))

    def __call__(self, x):
        _check_domain(self.domain, x)
        if np.isscalar(x):
            return self._eval_scalar(float(x))
        x = np.asarray(x, dtype=float)
        out = self.slope * x
        for xs, ys in self.patches:
            m = (x >= xs[0]) & (x <= xs[-1])
            if np.any(m):
                out[m] = np.interp(x[m], xs, ys)
        return out

    def deriv(self, x, side=0):
        """Derivative; at a breakpoint ``side=0`` raises, ``side=+-1`` is one-sided."""
        if not np.isscalar(x):
            return np.array([self.deriv(float(v), side=1) for v in np.ravel(x)]).reshape(np.shape(x))
        i = self._patch_at(x)
        if i < 0:
            return self.slope
        xs, ys = self.patches[i]
        j = bisect.bisect_left(xs, x)
        if j < len(xs) and xs[j] == x:
            if side == 0:
                raise AtBreakpoint(f"{x!r} is a breakpoint")
            if side > 0:
                if j == len(xs) - 1:
                    return self.slope
                return (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])
            if j == 0:
                return self.slope
            return (ys[j] - ys[j - 1]) / (xs[j] - xs[j - 1])
        j -= 1
        return (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])

    def inverse(self, y):
        for xs, ys in self.patches:
            lo, hi = min(ys[0], ys[-1]), max(ys[0], ys[-1])
            if lo <= y <= hi:
                if self.slope > 0:
                    return float(np.interp(y, ys, xs))
                return float(np.interp(y, ys[::-1], xs[::-1]))
        return y / self.slope

    @property
    def breakpoints(self):
        return tuple(x for xs, _ in self.patches for x in xs)

    @property
    def increasing(self):
        return self.slope > 0

    def sup_distance(self):
        """``sup |self - x -> slope x|``, attained at a node."""
        return max((abs(y - self.slope * x) for xs, ys in self.patches for x, y in zip(xs, ys)), default=0.0)

    def max_slope_deviation(self):
        """Largest relative deviation of a patch slope from ``slope``."""
        dev = 0.0
        for xs, ys in self.patches:
            for j in range(len(xs) - 1):
                s = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])
                dev = max(dev, abs(s / self.slope - 1.0))
        return dev

    def with_patches(self, patches):
        return PiecewiseLinear(self.slope, tuple(self.patches) + tuple(patches), self.domain)

    def to_dict(self):
        return {
            "kind": self.kind,
            "slope": self.slope,
            "patches": [[list(xs), list(ys)] for xs, ys in self.patches],
        }


@dataclass(frozen=True)
class QuadraticUnfolding:
    """Saddle-node normal form ``x -> x + (x - r)**2 - eps``."""

    r: float
    eps: float
    domain: tuple = REAL_LINE

    kind = "quadratic"

    def __call__(self, x):
        _check_domain(self.domain, x)
        return x + (x - self.r) ** 2 - self.eps

    def deriv(self, x, side=0):
        return 1.0 + 2.0 * (x - self.r)

    @property
    def breakpoints(self):
        return ()

    def to_dict(self):
        return {"kind": self.kind, "r": self.r, "eps": self.eps}


def from_dict(d):
    kind = d["kind"]
    if kind == "linear":
        return Linear(float(d["slope"]))
    if kind == "theta1":
        return Theta1(int(d["sign"]), float(d["t"]))
    if kind == "theta2":
        return Theta2(int(d["sign"]))
    if kind == "piecewise":
        return PiecewiseLinear(float(d["slope"]), tuple((tuple(xs), tuple(ys)) for xs, ys in d["patches"]))
    if kind == "quadratic":
        return QuadraticUnfolding(float(d["r"]), float(d["eps"]))
    raise ValueError(f"unknown central map kind {kind!r}")


def iterate(f, x, n):
    for _ in range(n):
        x = f(x)
    return x


def slope_of(f):
    """Slope at 0 of a linear or piecewise map (the multiplier it perturbs)."""
    return f.slope


def as_piecewise(f):
    if isinstance(f, PiecewiseLinear):
        return f
    return PiecewiseLinear.from_linear(f.slope)


# ---------------------------------------------------------------------------
# Local modifications of expanding/contracting linear maps
# ---------------------------------------------------------------------------

def window_patch(slope, x0, value, local_slope, eta):
    """Patch on ``[x0 - 2 eta, x0 + 2 eta]`` with slope ``local_slope`` on
    ``[x0 - eta, x0 + eta]`` and value ``value`` at ``x0``, rejoining ``slope * x``.

    ``x0`` itself is not a node, so the patched map stays differentiable there.
    Raises ``ValueError`` when the result would not be strictly monotone.
    """
    xs = (x0 - 2 * eta, x0 - eta, x0 + eta, x0 + 2 * eta)
    ys = (slope * xs[0], value - local_slope * eta, value + local_slope * eta, slope * xs[3])
    if not all((b - a) * slope > 0 for a, b in zip(ys, ys[1:])):
        raise ValueError("window too narrow for the requested displacement")
    return xs, ys


def _route_nodes(beta, seed, landing, steps):
    """Geometric interpolation of an orbit from ``seed`` to ``landing``.

    Returns the node pairs ``(w_i, w_{i+1} / beta)`` of the reparametrization
    ``h`` with ``beta * h(w_i) = w_{i+1}``.
    """
    ratio = abs(landing / seed) ** (1.0 / steps)
    w = [seed]
    for i in range(1, steps):
        w.append(seed * ratio**i * math.copysign(1.0, beta) ** i)
    w.append(landing)
    return [(w[i], w[i + 1] / beta) for i in range(steps)]


def reroute(beta, routes, upper, lower=None):
    """Piecewise-linear ``psi~ = psi o h`` rerouting orbits near 0.

    ``psi(x) = beta x`` with ``|beta| > 1``.  Each route ``(seed, landing, steps)``
    asks that ``psi~^steps(seed) == landing`` exactly, with ``|landing|`` in
    ``[upper, |beta| upper)`` and every intermediate point of modulus below
    ``upper``.  ``h`` is supported on ``lower <= |x| <= upper``, so ``psi~``
    equals ``psi`` on ``|x| >= upper`` and on a neighbourhood of 0.

    Returns a ``PiecewiseLinear`` (one patch per side of 0).
    """
    pairs = []
    for seed, landing, steps in routes:
        pairs.extend(_route_nodes(beta, seed, landing, steps))
    if lower is None:
        lower = min(min(abs(x), abs(y)) for x, y in pairs) / abs(beta)
    patches = []
    for side in (-1.0, 1.0):
        side_pairs = sorted((x, y) for x, y in pairs if x * side > 0)
        if not side_pairs:
            continue
        nodes = [(side * lower, side * lower)] + side_pairs + [(side * upper, side * upper)]
        nodes.sort()
        xs = [x for x, _ in nodes]
        hs = [y for _, y in nodes]
        if any(b <= a for a, b in zip(xs, xs[1:])) or any(b <= a for a, b in zip(hs, hs[1:])):
            raise TooFewDomains("rerouted orbits interleave non-monotonically")
        ys = [beta * h for h in hs]
        ys[0] = beta * xs[0]
        ys[-1] = beta * xs[-1]
        patches.append((tuple(xs), tuple(ys)))
    return PiecewiseLinear(float(beta), tuple(patches))


def route_steps(beta, seed, landing):
    """Ideal number of steps from ``seed`` to ``landing`` with sign parity respected."""
    n_float = math.log(abs(landing / seed)) / math.log(abs(beta))
    n = max(1, round(n_float))
    if beta < 0:
        want = math.copysign(1.0, landing) == math.copysign(1.0, seed) * (-1.0) ** n
        if not want:
            n = n + 1 if n_float >= n else max(1, n - 1)
            if math.copysign(1.0, landing) != math.copysign(1.0, seed) * (-1.0) ** n:
                n += 2
    return n, n_float


def _route_points(beta, seed, landing, steps, shift_at=None):
    """Orbit ``w_0 = seed, ..., w_steps = landing`` under a rerouted ``psi``.

    ``shift_at=None`` spreads the correction geometrically over all steps;
    an integer concentrates it in that single step.
    """
    sgn = math.copysign(1.0, beta)
    if shift_at is None:
        ratio = abs(landing / seed) ** (1.0 / steps)
        w = [seed * ratio**i * sgn**i for i in range(steps)]
    else:
        ab = abs(beta)
        w = [seed * ab**i * sgn**i for i in range(shift_at + 1)]
        tail = [landing / beta ** (steps - i) for i in range(shift_at + 1, steps)]
        w = w + tail
    w.append(landing)
    return w


def _pairs_ok(pairs, upper, lower):
    """Strict monotonicity of ``h`` through ``pairs`` plus the fixed ends."""
    for side in (-1.0, 1.0):
        pts = [(x, y) for x, y in pairs if x * side > 0]
        if not pts:
            continue
        nodes = sorted(pts + [(side * lower, side * lower), (side * upper, side * upper)])
        for (x0, y0), (x1, y1) in zip(nodes, nodes[1:]):
            if x1 - x0 <= 1e-12 * abs(x1) or not y1 > y0:
                return False
    return True


def route_candidates(beta, seed, landing, upper):
    """Candidate orbits from ``seed`` to ``landing``, geometric ones first."""
    n0, _ = route_steps(beta, seed, landing)
    out = []
    step_options = [n0] + [n for n in (n0 - 1, n0 + 1, n0 - 2, n0 + 2) if n >= 1]
    if beta < 0:
        sgn_ok = lambda n: math.copysign(1.0, landing) == math.copysign(1.0, seed) * (-1.0) ** n
        step_options = [n for n in step_options if sgn_ok(n)]
    for n in step_options:
        cand = [_route_points(beta, seed, landing, n)] + [
            _route_points(beta, seed, landing, n, s) for s in range(n - 1, -1, -1)
        ]
        for w in cand:
            # landings computed as z0 / beta may undershoot upper by an ulp
            if all(abs(x) < upper for x in w[:-1]) and upper * (1 - 1e-12) <= abs(w[-1]) < abs(beta) * upper:
                out.append(w)
    return out


def plan_routes(beta, routes, upper, max_candidates=40):
    """Pick one orbit per route so that all of them fit in a single monotone ``h``.

    ``routes`` is a list of ``(seed, landing)``.  Returns the list of orbits
    (each a list of points) or raises ``TooFewDomains``.
    """
    cands = [route_candidates(beta, s, l, upper)[:max_candidates] for s, l in routes]
    if any(not c for c in cands):
        raise TooFewDomains("a route has no admissible orbit")
    lower = min(abs(s) for s, _ in routes) / abs(beta) / 2.0

    def pairs_of(w):
        return [(w[i], w[i + 1] / beta) for i in range(len(w) - 1)]

    pair_cache = [[pairs_of(w) for w in c] for c in cands]
    single_ok = [[_pairs_ok(p, upper, lower) for p in pc] for pc in pair_cache]

    def search(r, chosen, acc):
        if r == len(routes):
            return list(chosen)
        for idx, p in enumerate(pair_cache[r]):
            if not single_ok[r][idx]:
                continue
            if _pairs_ok(acc + p, upper, lower):
                chosen.append(cands[r][idx])
                got = search(r + 1, chosen, acc + p)
                if got is not None:
                    return got
                chosen.pop()
        return None

    got = search(0, [], [])
    if got is None:
        raise TooFewDomains("routes cannot be realized by one monotone reparametrization")
    return got, lower


def reroute_orbits(beta, orbits, upper, lower):
    """``PiecewiseLinear`` realizing the given orbits below ``upper``."""
    pairs = []
    for w in orbits:
        pairs.extend((w[i], w[i + 1] / beta) for i in range(len(w) - 1))
    patches = []
    for side in (-1.0, 1.0):
        pts = sorted((x, y) for x, y in pairs if x * side > 0)
        if not pts:
            continue
        nodes = sorted(pts + [(side * lower, side * lower), (side * upper, side * upper)])
        xs = [x for x, _ in nodes]
        ys = [beta * y for _, y in nodes]
        ys[0], ys[-1] = beta * xs[0], beta * xs[-1]
        patches.append((tuple(xs), tuple(ys)))
    return patches
