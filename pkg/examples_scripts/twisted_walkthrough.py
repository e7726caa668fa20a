"""A twisted cycle cannot be unfolded directly; detwist it through a new saddle first."""
from hdcycle.model import CycleSpec
from hdcycle.stabilizer import classify, detwist, stabilize

spec = CycleSpec(0.5, 2.0, sign_t1=-1)
print("signs", classify(spec).signs, "->", classify(spec).verdict)

# transverse homoclinic points of P accumulating on both sides
acc = [2.0**-i for i in range(1, 30)]

out = detwist(spec, acc, k=3, m=3)
print("\nunperturbed return at 1:", out.chosen["unperturbed_return_at_1"],
      "derivative", out.chosen["unperturbed_derivative"])
print("new saddle R: eigenvalue", out.R_record.central_eigenvalue, "period", out.R_record.period)
print("new cycle:", classify(out.spec).verdict, "residuals", out.residuals)

cert = stabilize(spec, acc)
print("\nfull pipeline history:")
for line in cert.history:
    print("  ", line)
print("worst residual", max(cert.residuals.values()))
