"""Offline-online homogenization, start to finish, on the locally periodic example.

Offline: one periodic cell problem per element of a coarse Q x Q mesh, then a
local least-squares polynomial fit of the sampled effective matrices.
Online: a P2 finite element solve with the fitted field as coefficient.

    python demos/offline_online_walkthrough.py
"""

import time

import numpy as np

from oohomog.coeffs import AnalyticEffective, LocallyPeriodic, analytic_effective
from oohomog.macrosolver import assemble_solve, emod_report, fem_space, relative_errors
from oohomog.mesh import build_offline_mesh
from oohomog.microcell import CellSpec, effective_sample, offline_sweep
from oohomog.reconstruct import lambda_summary, reconstruct_field

DOMAIN = (0.0, 0.0, 1.0, 1.0)
a_eps = LocallyPeriodic(epsilon=1e-6)

# %% one cell problem
# With the slow part frozen, the cell at the origin should give 2 I.
for res in (8, 16, 32):
    s = effective_sample(CellSpec(center=(0.0, 0.0), delta=1e-6, resolution=res, degree=2, freeze_slow=True), a_eps)
    print(f"cell res {res:3d}: A_H =", np.round(s.matrix, 8).tolist())

# %% offline sweep
Q, M = 12, 3
mesh = build_offline_mesh(DOMAIN, Q)
template = CellSpec(delta=1e-6, resolution=16, degree=2, freeze_slow=True)
t0 = time.perf_counter()
table = offline_sweep(mesh, a_eps, template)
print(f"\n{table.cell_problems} cell problems in {time.perf_counter() - t0:.1f}s")

field = reconstruct_field(mesh, table, M)
rep = emod_report(field, analytic_effective, probe=256)
print(f"m={M}: e(MOD) = {rep.emod:.3e} at {rep.argmax}, e1(MOD) = {rep.e1:.3e}")
lam = lambda_summary(mesh, M)
print(f"norming constant estimate: max {lam['max']:.2f}, median {np.median(lam['per_element']):.2f}")

# %% online solve against a fine solve with the exact effective matrix
ref = assemble_solve(fem_space(DOMAIN, 128, 2), AnalyticEffective())
for n in (16, 32, 64):
    sol = assemble_solve(fem_space(DOMAIN, n, 2), field)
    h1, l2 = relative_errors(sol, ref)
    print(f"N={n:3d}: relative H1 {h1:.3e}, L2 {l2:.3e}")
