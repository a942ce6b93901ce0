"""Full-order time integration.

The semi-implicit scheme treats the linear part implicitly and the nonlinear
flux and source explicitly::

    (I - dt A^{k+1}) u^{k+1} = u^k + dt h(u^k, t^k) + dt g^k

The explicit scheme is forward Euler on the whole flux. With ``h = 0`` the
semi-implicit scheme is backward Euler.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DivergenceError, SolverError
from .model import TimeGrid, assemble_A

__all__ = ["Trajectory", "solve_full", "COND_LIMIT"]

COND_LIMIT = 1e14


@dataclass
class Trajectory:
    """States ``u^0 .. u^K`` stored row-wise, shape ``(K + 1, d)``."""

    states: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        if self.states.shape[0] != self.grid.K + 1:
            raise ValueError("trajectory length does not match the time grid")

    @property
    def dim(self):
        return self.states.shape[1]

    def __getitem__(self, k):
        return self.states[k]

    def __len__(self):
        return self.states.shape[0]


def _factorize(M, k, xi):
    M = sp.csc_matrix(M)
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SolverError(f"singular step matrix at k={k}: {exc}", k=k, xi=xi) from exc
    # cheap 1-norm condition estimate from a few solves with the factors
    inv = spla.LinearOperator(M.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="T"))
    cond = spla.norm(M, 1) * spla.onenormest(inv)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SolverError(f"step matrix condition estimate {cond:.3e} at k={k}", k=k, xi=xi)
    return lu


def solve_full(model, xi, grid=None, scheme=None):
    """Integrate the full-order model at parameter ``xi``.

    Parameters
    ----------
    model : FullOrderModel
    xi : array_like
        Parameter point.
    grid : TimeGrid, optional
        Defaults to ``model.grid``; a different grid is only allowed when
        every affine operator is time-constant.
    scheme : {"semi-implicit", "explicit"}, optional
        Defaults to ``model.scheme``.

    Returns
    -------
    Trajectory
    """
    xi = np.asarray(xi, dtype=float)
    scheme = scheme or model.scheme
    if grid is not None and grid != model.grid:
        if not model.operators_time_constant:
            raise ValueError("time-dependent operators are tied to the model grid")
        model = replace(model, grid=grid)
    grid = model.grid
    dt = grid.dt
    K = grid.K
    d = model.dim
    U = np.empty((K + 1, d))
    U[0] = model.u0(xi)
    I = sp.identity(d, format="csc")
    op, op_key = None, None
    for k in range(K):
        u = U[k]
        rhs_extra = model.h(u, k, xi) + model.source(k, xi)
        j = k if scheme == "explicit" else k + 1
        key = tuple(model.theta_A(j, xi))
        # one assembly/factorization per distinct (operator, coefficient) pair
        if op is None or not model.operators_time_constant or key != op_key:
            A = assemble_A(model, j, xi)
            op = A if scheme == "explicit" else _factorize(I - dt * A, j, xi)
            op_key = key
        if scheme == "explicit":
            U[k + 1] = u + dt * (op @ u + rhs_extra)
        else:
            U[k + 1] = op.solve(u + dt * rhs_extra)
        if not np.all(np.isfinite(U[k + 1])):
            raise DivergenceError(f"non-finite state at step k={k + 1}", k=k + 1, xi=xi)
    return Trajectory(U, grid)

