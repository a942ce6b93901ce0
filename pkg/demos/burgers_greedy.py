"""Greedy construction on the viscous Burgers benchmark.

Runs T-greedy and POD-greedy on 60 training diffusivities, prints the
indicator histories and compares validation errors at r = 15.
"""

import numpy as np

from tdrom import build_burgers_1d, pod_greedy, solve_full, t_greedy
from tdrom.estimator import evaluate_rom, relative_errors
from tdrom.reduced import reconstruct_trajectory

model, grid, dom = build_burgers_1d()
dom = dom.with_training_set(dom.sample(60, 11))
runs = {"T-greedy": t_greedy(model, dom, 1e-30, r_max=12), "POD-greedy": pod_greedy(model, dom, 1e-30, r_max=15)}
for name, res in runs.items():
    hist = " ".join(f"{v:.1e}" for v in res.indicators_by_iteration)
    print(f"{name}: dim {res.basis.r}, EIM terms {res.eim.m}\n  indicators: {hist}")

val = dom.sample(10, 3)
for name, res in runs.items():
    traj, est = evaluate_rom(res.offline, model, val, basis=res.basis)
    errs = [relative_errors(solve_full(model, xi).states, reconstruct_trajectory(res.basis, traj.alpha[i]))
            for i, xi in enumerate(val)]
    print(f"{name}: mean E2 = {np.mean(errs):.3e}, mean indicator = {np.mean(est.global_value):.3e}")
