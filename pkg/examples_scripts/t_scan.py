"""Sweep the unfolding parameter t of the dyadic cycle and list where cycles reappear."""
from hdcycle.cli import grid
from hdcycle.dictionary import build_report
from hdcycle.model import CycleSpec

base = CycleSpec(0.5, 2.0)
for t in grid(0.0, 0.1, 161):
    rep = build_report(base.with_t(t), k_max=6, n_max=6, i_max=30)
    if rep.cycles or rep.strong_homoclinic:
        kinds = []
        if rep.cycles:
            hhat, i, h = rep.cycles[0]
            kinds.append(f"cycle (psi^{h}(t) = {hhat}, killed after {i} phi-steps)")
        if rep.strong_homoclinic:
            rec, it = rep.strong_homoclinic[0]
            kinds.append(f"strong homoclinic of {rec.itinerary} via {it}")
        print(f"t = {t:<10g}", "; ".join(kinds))
