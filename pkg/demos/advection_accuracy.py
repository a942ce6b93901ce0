"""Time-dependent versus time-independent reduced spaces on 1D advection.

A single trajectory spans an exact one-dimensional time-dependent space,
while a fixed POD space needs tens of modes for the same accuracy.
"""

import numpy as np

from tdrom import build_advection_1d, solve_full
from tdrom.cli import table1_rows
from tdrom.estimator import relative_errors
from tdrom.reduced import (build_time_dependent_basis, compute_offline_quantities, reconstruct_trajectory,
                           solve_reduced)

XI = 0.65

model, grid, _ = build_advection_1d()
ref = solve_full(model, [XI])
basis = build_time_dependent_basis([ref])
off = compute_offline_quantities(basis, model)
ur = reconstruct_trajectory(basis, solve_reduced(off, model, [[XI]]).alpha[0])
print(f"time-dependent space, r = 1: E2 = {relative_errors(ref.states, ur):.3e}")

print("time-independent POD spaces:")
for row in table1_rows(2001, ranks=(1, 5, 10, 20, 50)):
    print(f"  {row['ic']:<14} r = {row['r']:>3}  E2 = {row['E2']:.3e}  Einf = {row['Einf']:.3e}")
