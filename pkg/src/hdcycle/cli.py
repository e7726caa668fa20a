"""Command line front end: ``hdcycle <subcommand> --input FILE [options]``.

Exit codes: 0 success, 1 malformed input, 2 numeric budget exceeded,
3 twisted cycle without bi-accumulation data, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .blender import BlenderModel, verify_robust, verify_superposition
from .dictionary import build_report, cross_check, return_residual
from .errors import (
    BudgetExceeded, EmptyRegion, HDCycleError, InvalidMatrix, InvalidSpec, OracleMismatch,
    ResidualBroken, TooFewDomains, TwistedWithoutAccumulation,
)
from .ifs import maps_from
from .model import CycleSpec, build_model
from .stabilizer import classify, stabilize

EXIT_OK, EXIT_MALFORMED, EXIT_BUDGET, EXIT_TWISTED, EXIT_ORACLE = 0, 1, 2, 3, 4
SCAN_PARAMS = ("beta", "delta", "lambda", "t")  # keys of the spec JSON
CSV_HEADER = "param_value,n_periodic,n_neutral,has_cycle,has_strong_homoclinic,min_residual"
SUBCOMMANDS = ("classify", "stabilize", "dictionary", "scan", "blender-verify", "oracle-check")


class Malformed(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    input: str
    output: Optional[str] = None
    i_max: int = 40
    k_max: Optional[int] = None
    n_max: Optional[int] = None
    depth: int = 60
    rho: float = 0.01
    eps_pert: float = 1e-2
    snap_budget: float = 1e-2
    ell: Optional[int] = None
    scan: Optional[tuple] = None  # (name, lo, hi, steps)
    workers: int = 1

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise Malformed(f"unknown subcommand {self.subcommand!r}")
        for name in ("i_max", "k_max", "n_max", "depth", "ell", "workers"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise Malformed(f"--{name.replace('_', '-')} must be positive")
        if self.rho < 0 or self.eps_pert <= 0 or self.snap_budget <= 0:
            raise Malformed("numeric knobs must be positive")
        if self.subcommand == "scan" and self.scan is None:
            raise Malformed("scan needs --scan PARAM:LO:HI:STEPS")


def parse_scan(text: str):
    parts = text.split(":")
    if len(parts) != 4 or parts[0] not in SCAN_PARAMS:
        raise Malformed(f"bad --scan {text!r}; expected PARAM:LO:HI:STEPS with PARAM in {list(SCAN_PARAMS)}")
    try:
        lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError as exc:
        raise Malformed(f"bad --scan {text!r}") from exc
    if steps < 1:
        raise Malformed("scan steps must be >= 1")
    return parts[0], lo, hi, steps


def grid(lo, hi, steps):
    """Grid points computed as weighted means so both ends are hit exactly."""
    if steps == 1:
        return [lo]
    n = steps - 1
    return [(lo * (n - i) + hi * i) / n for i in range(steps)]


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise Malformed(f"cannot read {path}: {exc}") from exc


def _load_spec(path):
    """Spec and optional accumulation data.

    The file holds either a bare spec object or ``{"spec": {...}, "accumulation": [...]}``.
    """
    d = _load_json(path)
    acc = None
    if isinstance(d, dict) and "spec" in d:
        acc = d.get("accumulation")
        d = d["spec"]
    if not isinstance(d, dict):
        raise Malformed("spec must be a JSON object")
    return CycleSpec.from_dict(d), acc


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def scan_row(spec_dict, name, value, k_max, n_max, i_max):
    """One CSV row for the spec with ``name`` set to ``value``."""
    spec = CycleSpec.from_dict(dict(spec_dict, **{name: value}))
    rep = build_report(spec, k_max=k_max, n_max=n_max, i_max=i_max)
    maps = maps_from(spec)
    res = [return_residual(maps, r.itinerary, r.central_coord) for r in rep.periodic]
    res = [r for r in res if r is not None]
    cols = [value, len(rep.periodic), sum(1 for r in rep.periodic if r.neutral),
            bool(rep.cycles), bool(rep.strong_homoclinic), min(res) if res else math.inf]
    return ",".join(_fmt(c) for c in cols)


def _scan_chunk(args):
    spec_dict, name, values, k_max, n_max, i_max = args
    return [scan_row(spec_dict, name, v, k_max, n_max, i_max) for v in values]


def run_scan(spec: CycleSpec, cfg: RunConfig) -> str:
    name, lo, hi, steps = cfg.scan
    values = grid(lo, hi, steps)
    spec_dict = spec.to_dict()
    k_max, n_max = cfg.k_max or 6, cfg.n_max or 6
    # contiguous chunks, merged back in grid order
    w = max(1, min(cfg.workers, len(values)))
    size = -(-len(values) // w)
    jobs = [(spec_dict, name, values[i:i + size], k_max, n_max, cfg.i_max)
            for i in range(0, len(values), size)]
    if w == 1:
        chunks = [_scan_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=w) as ex:
            chunks = list(ex.map(_scan_chunk, jobs))
    rows = [r for c in chunks for r in c]
    return "\n".join([CSV_HEADER] + rows) + "\n"


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute one subcommand; the return value is the exit code."""
    stdout = stdout or sys.stdout
    try:
        text = _dispatch(cfg)
    except TwistedWithoutAccumulation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TWISTED
    except OracleMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (BudgetExceeded, TooFewDomains, ResidualBroken, EmptyRegion) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (Malformed, InvalidSpec, InvalidMatrix, KeyError, TypeError, ValueError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except HDCycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    if cfg.output:
        with open(cfg.output, "w", newline="\n") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return EXIT_OK


def _dispatch(cfg: RunConfig) -> str:
    if cfg.subcommand == "blender-verify":
        d = _load_json(cfg.input)
        model = BlenderModel.from_dict(d)
        cert = verify_superposition(model, cfg.depth)
        ok, worst = verify_robust(model, cfg.rho, cfg.depth)
        return _dumps({"superposition": cert.to_dict(), "robust": ok,
                       "rho": cfg.rho, "worst_margin": worst if math.isfinite(worst) else None})
    spec, acc = _load_spec(cfg.input)
    if cfg.subcommand == "classify":
        return _dumps(classify(spec).to_dict())
    if cfg.subcommand == "stabilize":
        cert = stabilize(spec, acc, eps_pert=cfg.eps_pert, snap_budget=cfg.snap_budget,
                         ell=cfg.ell, k_max=cfg.k_max, n_max=cfg.n_max)
        return cert.to_json()
    if cfg.subcommand == "dictionary":
        rep = build_report(spec, k_max=cfg.k_max or 8, n_max=cfg.n_max or 8, i_max=cfg.i_max)
        return _dumps(rep.to_dict())
    if cfg.subcommand == "oracle-check":
        rep = build_report(spec, k_max=cfg.k_max or 8, n_max=cfg.n_max or 8, i_max=cfg.i_max)
        rows = cross_check(build_model(spec), rep)
        return _dumps({"checked": len(rows), "max_discrepancy": max((r["discrepancy"] for r in rows), default=0.0),
                       "rows": rows})
    return run_scan(spec, cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="hdcycle", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--input", required=True, metavar="PATH")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--i-max", type=int, default=40)
    p.add_argument("--k-max", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--depth", type=int, default=60)
    p.add_argument("--rho", type=float, default=0.01)
    p.add_argument("--eps-pert", type=float, default=1e-2)
    p.add_argument("--snap-budget", type=float, default=1e-2)
    p.add_argument("--ell", type=int)
    p.add_argument("--scan", metavar="PARAM:LO:HI:STEPS")
    p.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_MALFORMED
    try:
        cfg = RunConfig(ns.subcommand, ns.input, ns.output, ns.i_max, ns.k_max, ns.n_max,
                        ns.depth, ns.rho, ns.eps_pert, ns.snap_budget, ns.ell,
                        parse_scan(ns.scan) if ns.scan else None, ns.workers)
    except Malformed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
