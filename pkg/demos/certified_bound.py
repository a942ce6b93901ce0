"""Error estimate versus true error along a trajectory (2D advection-diffusion)."""

import numpy as np

from tdrom import build_advdiff_2d, solve_full, t_greedy
from tdrom.estimator import effectivity, evaluate_rom
from tdrom.reduced import reconstruct_trajectory

model, grid, dom = build_advdiff_2d(21)
dom = dom.with_training_set(dom.sample(20, 11))
res = t_greedy(model, dom, 1e-30, r_max=6)
xi = np.array([0.37, -0.52])
traj, est = evaluate_rom(res.offline, model, [xi], basis=res.basis)
err = np.linalg.norm(solve_full(model, xi).states - reconstruct_trajectory(res.basis, traj.alpha[0]), axis=1)
kappa = effectivity(est.delta[0], err)
print(f"{'k':>5} {'t':>8} {'error':>11} {'estimate':>11} {'kappa':>7}")
for k in range(0, grid.K + 1, grid.K // 10):
    print(f"{k:>5} {k * grid.dt:>8.4f} {err[k]:>11.3e} {est.delta[0][k]:>11.3e} {kappa[k]:>7.2f}")
