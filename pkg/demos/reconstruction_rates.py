"""How the fitted coefficient error shrinks with the offline mesh, per polynomial degree.

Uses exact effective matrices at the sampling points, so only the fit is
measured. Also prints the cell-problem budget needed to reach a target error.

    python demos/reconstruction_rates.py
"""

import numpy as np

from oohomog.coeffs import analytic_effective
from oohomog.harness import fit_slope
from oohomog.macrosolver import emod_report
from oohomog.mesh import build_offline_mesh
from oohomog.microcell import analytic_table
from oohomog.reconstruct import reconstruct_field

qs = [8, 16, 32, 64]
errors = {}
for m in (1, 2, 3):
    errors[m] = []
    for q in qs:
        mesh = build_offline_mesh((0, 0, 1, 1), q)
        field = reconstruct_field(mesh, analytic_table(mesh, analytic_effective), m)
        errors[m].append(emod_report(field, analytic_effective, probe=256).emod)

print("   q " + "".join(f"{'m=' + str(m):>12s}" for m in errors))
for i, q in enumerate(qs):
    print(f"{q:4d} " + "".join(f"{errors[m][i]:12.3e}" for m in errors))
print("slope" + "".join(f"{fit_slope(qs, errors[m])[0]:12.2f}" for m in errors))

# cells needed for e(MOD) ~ 1e-2, from the fitted power laws
target = 1e-2
for m, e in errors.items():
    s, _ = fit_slope(qs, e)
    c = np.exp(np.mean(np.log(e) - s * np.log(qs)))
    q = int(np.ceil((target / c) ** (1 / s)))
    print(f"m={m}: q ~ {q:3d}, {q * q:5d} cell problems")
