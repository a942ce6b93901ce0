"""Logarithmic Lipschitz constants and the discrete a posteriori error estimate.

For a matrix ``A`` the logarithmic Lipschitz constant in the Euclidean norm is
``lambda_max((A + A^T) / 2)``. The estimate ``Delta^k`` of ``||u^k - u_r^k||``
is stepped as

    Delta^{k+1} = (Delta^k + dt L_h^k Delta^k + dt ||r^k||) / (1 - dt L_A^{k+1})

from ``Delta^0 = ||u^0 - Pi^0 u^0||``. ``L_A`` bounds the constant of the
affine operator termwise; ``L_h`` is the constant of the flux Jacobian taken
from the nearest selected parameter. For affine models (``h = 0``) the
sequence is a guaranteed upper bound of the error.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg as la

from .exceptions import ConfigurationError, ShapeError, SolverError, StabilityError, ValidationError
from .reduced import initial_coordinates, residual_norms, solve_reduced

__all__ = [
    "log_lipschitz_matrix",
    "LipschitzTable",
    "build_lipschitz_table",
    "log_lipschitz_affine_bound",
    "lipschitz_nn",
    "ErrorEstimate",
    "integrate_error_estimate",
    "evaluate_rom",
    "relative_errors",
    "effectivity",
    "KAPPA_FLOOR",
]

# steps whose exact error is below this are left out of effectivity means
KAPPA_FLOOR = 1e-14


def _bandwidth(S):
    S = S.tocoo()
    if S.nnz == 0:
        return 0
    return int(np.abs(S.row - S.col).max())


def log_lipschitz_matrix(A):
    """``lambda_max`` of the symmetric part of a square (dense or sparse) matrix."""
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    if n == 0:
        raise ShapeError("empty matrix")
    try:
        if sp.issparse(A):
            S = (0.5 * (A + A.T)).tocsr()
            bw = _bandwidth(S)
            if bw == 0:
                return float(S.diagonal().max())
            if bw == 1:
                return float(la.eigvalsh_tridiagonal(S.diagonal(), S.diagonal(1), select="i",
                                                     select_range=(n - 1, n - 1))[0])
            if bw < n // 4:
                # upper band storage for the banded symmetric eigensolver
                bands = np.zeros((bw + 1, n))
                for j in range(bw + 1):
                    bands[bw - j, j:] = S.diagonal(j)
                return float(la.eig_banded(bands, eigvals_only=True, select="i",
                                           select_range=(n - 1, n - 1))[0])
            S = S.toarray()
        else:
            A = np.asarray(A, dtype=float)
            S = 0.5 * (A + A.T)
        return float(la.eigvalsh(S, subset_by_index=[n - 1, n - 1])[0])
    except (la.LinAlgError, ValueError) as exc:
        raise SolverError(f"symmetric eigensolve failed: {exc}") from exc


@dataclass
class LipschitzTable:
    """Offline Lipschitz data.

    Attributes
    ----------
    A_values : (Q_A, K + 1) or (Q_A, 1) ndarray
        ``L[A^i(t^k)]``; one column when every operator is time-constant.
    h_values : (n_sel, K + 1) ndarray
        ``L[grad h(u(t^k, xi^i), t^k, xi^i)]`` for the selected parameters.
    params : (n_sel, p) ndarray
        Selected parameters, in selection order.
    metric : callable
        Distance on the parameter domain.
    """

    A_values: np.ndarray
    h_values: np.ndarray = None
    params: np.ndarray = None
    metric: object = None

    def __post_init__(self):
        self.A_values = np.atleast_2d(np.asarray(self.A_values, dtype=float))
        if self.params is not None:
            self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if self.h_values is not None:
            self.h_values = np.atleast_2d(np.asarray(self.h_values, dtype=float))

    @property
    def n_selected(self):
        return 0 if self.h_values is None else self.h_values.shape[0]

    def A_at(self, k):
        return self.A_values[:, 0 if self.A_values.shape[1] == 1 else k]

    def nearest(self, xi):
        """Index of the nearest selected parameter (lowest index on ties)."""
        if self.n_selected == 0:
            raise ConfigurationError("no selected parameters in the Lipschitz table")
        xi = np.ravel(np.asarray(xi, dtype=float))
        if self.metric is None:
            dist = np.linalg.norm(self.params - xi, axis=1)
        else:
            dist = np.array([self.metric(xi, p) for p in self.params])
        return int(np.argmin(dist))

    def gamma(self, xi):
        """Nearest-neighbour weights: one-hot vector over the selected parameters."""
        w = np.zeros(self.n_selected)
        w[self.nearest(xi)] = 1.0
        return w

    def lip_A_series(self, theta_A):
        """``sum_i |theta^i(t^k)| L[A^i(t^k)]`` for coefficient tables ``(..., K + 1, Q_A)``."""
        vals = self.A_values.T
        if vals.shape[0] == 1:
            return np.abs(theta_A) @ vals[0]
        return np.einsum("...kq,kq->...k", np.abs(theta_A), vals)

    def lip_h_series(self, xis, n_steps):
        """Nearest-neighbour ``L_h`` series, shape ``(n, n_steps)``; zeros without flux data."""
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        if self.n_selected == 0:
            return np.zeros((len(xis), n_steps))
        return self.h_values[[self.nearest(xi) for xi in xis]]

    def extended(self, model, trajectory, xi):
        """Copy with one more selected parameter and its flux Jacobian series."""
        row = flux_lipschitz_series(model, trajectory, xi)[None]
        h = row if self.h_values is None else np.vstack([self.h_values, row])
        p = np.atleast_2d(np.asarray(xi, dtype=float))
        params = p if self.params is None else np.vstack([self.params, p])
        return LipschitzTable(self.A_values, h, params, self.metric)


def affine_lipschitz_values(model):
    """``L[A^i(t^k)]`` for every affine term (one column if time-constant)."""
    K = model.grid.K
    if model.Q_A == 0:
        return np.zeros((0, 1))
    if model.operators_time_constant:
        return np.array([[log_lipschitz_matrix(sp.csr_matrix(t.operator))] for t in model.affine_A])
    return np.array([[log_lipschitz_matrix(sp.csr_matrix(t.at(k))) for k in range(K + 1)]
                     for t in model.affine_A])


def flux_lipschitz_series(model, trajectory, xi):
    """``L[grad h(u^k)]`` along one full-order trajectory."""
    states = getattr(trajectory, "states", trajectory)
    return np.array([log_lipschitz_matrix(model.grad_h(u, k, xi)) for k, u in enumerate(states)])


def build_lipschitz_table(model, trajectories=(), params=(), metric=None):
    """Assemble the offline table for ``model`` and the selected parameters."""
    table = LipschitzTable(affine_lipschitz_values(model), metric=metric)
    if model.nonlinear:
        for traj, xi in zip(trajectories, params):
            table = table.extended(model, traj, xi)
    return table


def log_lipschitz_affine_bound(theta, table, k):
    """``sum_i |theta^i| L[A^i(t^k)]``."""
    theta = np.asarray(theta, dtype=float)
    return float(np.abs(theta) @ table.A_at(k))


def lipschitz_nn(xi, table, k):
    """Stored flux constant at step ``k`` of the nearest selected parameter."""
    return float(table.h_values[table.nearest(xi), k])


@dataclass
class ErrorEstimate:
    """Stepped error estimate, possibly for a batch of parameters.

    Attributes
    ----------
    delta : (..., K + 1) ndarray
        ``Delta^k``.
    global_value : (...) ndarray
        Time norm of ``Delta`` (``l2``: ``sqrt(dt sum_k Delta_k^2)``; ``linf``: max).
    residuals : (..., K) ndarray
    lip_A, lip_h : (..., K + 1) ndarray
    """

    delta: np.ndarray
    global_value: np.ndarray
    residuals: np.ndarray
    lip_A: np.ndarray
    lip_h: np.ndarray
    form: str = "consistent"
    time_norm: str = "l2"

    def __getitem__(self, i):
        return ErrorEstimate(self.delta[i], self.global_value[i], self.residuals[i], self.lip_A[i],
                             self.lip_h[i], self.form, self.time_norm)


def time_norm_of(values, dt, time_norm="l2"):
    values = np.asarray(values, dtype=float)
    if time_norm == "l2":
        return np.sqrt(dt * np.sum(values**2, axis=-1))
    if time_norm == "linf":
        return np.max(values, axis=-1)
    raise ValidationError(f"unknown time norm {time_norm!r}")


def integrate_error_estimate(delta0, residuals, lip_A, lip_h, dt, form="consistent", time_norm="l2"):
    """Step the error estimate.

    Parameters
    ----------
    delta0 : float or (n,) array
        ``||u^0 - Pi^0 u^0||``.
    residuals : (..., K) array
        ``||r^k||`` for ``k = 0..K-1``.
    lip_A, lip_h : (..., K + 1) array
        Bounds ``L_A(t^k)`` and flux constants ``L_h(t^k)``.
    form : {"consistent", "printed"}
        ``"consistent"`` multiplies ``L_h`` by ``Delta^k``; ``"printed"``
        adds ``dt L_h`` without that factor.
    time_norm : {"l2", "linf"}
    """
    res = np.asarray(residuals, dtype=float)
    lA = np.asarray(lip_A, dtype=float)
    lh = np.asarray(lip_h, dtype=float)
    d0 = np.asarray(delta0, dtype=float)
    K = res.shape[-1]
    if lA.shape[-1] != K + 1 or lh.shape[-1] != K + 1:
        raise ShapeError("Lipschitz series need K + 1 entries")
    if np.any(res < 0) or np.any(d0 < 0):
        raise ValidationError("residual norms and the initial error must be nonnegative")
    if form not in ("consistent", "printed"):
        raise ValidationError(f"unknown estimator form {form!r}")
    denom = 1.0 - dt * lA
    bad = np.argwhere(denom[..., 1:] <= 0)
    if bad.size:
        k = int(bad[0, -1]) + 1
        raise StabilityError(f"1 - dt L_A <= 0 at step k={k}", k=k)
    shape = np.broadcast_shapes(d0.shape, res.shape[:-1])
    delta = np.empty(shape + (K + 1,))
    delta[..., 0] = d0
    for k in range(K):
        prev = delta[..., k]
        grow = lh[..., k] * prev if form == "consistent" else lh[..., k]
        delta[..., k + 1] = (prev + dt * grow + dt * res[..., k]) / denom[..., k + 1]
    if not np.all(np.isfinite(delta)) or np.any(delta < 0):
        raise ValidationError("error estimate is not finite and nonnegative; check the flux constants")
    return ErrorEstimate(delta, time_norm_of(delta, dt, time_norm), res, np.broadcast_to(lA, delta.shape).copy(),
                         np.broadcast_to(lh, delta.shape).copy(), form, time_norm)


def evaluate_rom(offline, model, xis, basis=None, thetas=None, form="consistent", time_norm="l2"):
    """Online sweep: reduced solve, residual norms and error estimate for a batch.

    Returns
    -------
    (ReducedTrajectory, ErrorEstimate)
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    thetas = thetas if thetas is not None else model.theta_tables(xis)
    traj = solve_reduced(offline, model, xis, thetas, basis=basis)
    res = residual_norms(offline, traj, thetas=thetas)
    _, delta0 = initial_coordinates(offline, basis, model, xis)
    table = offline.lipschitz
    if table is None:
        raise ConfigurationError("offline quantities carry no Lipschitz table")
    lip_A = table.lip_A_series(thetas[0])
    lip_h = table.lip_h_series(xis, offline.K + 1) if model.nonlinear else np.zeros_like(lip_A)
    est = integrate_error_estimate(delta0, res, lip_A, lip_h, offline.dt, form, time_norm)
    return traj, est


def _states(x):
    return np.asarray(getattr(x, "states", x), dtype=float)


def relative_errors(u, u_r, q=2, dt=None):
    """Relative error ``||u_r - u||_{I,q} / ||u||_{I,q}`` over a trajectory.

    ``q = 2`` uses ``(dt sum_k ||.||^2)^{1/2}`` (the ``dt`` cancels in the
    ratio); ``q = inf`` uses ``max_k ||.||``. Returns ``nan`` with a warning
    when the reference trajectory is zero.
    """
    U, Ur = _states(u), _states(u_r)
    if U.shape != Ur.shape:
        raise ShapeError(f"trajectories have shapes {U.shape} and {Ur.shape}")
    e = np.linalg.norm(Ur - U, axis=1)
    n = np.linalg.norm(U, axis=1)
    if q == 2:
        num, den = np.sqrt(np.sum(e**2)), np.sqrt(np.sum(n**2))
    elif q in (np.inf, "inf"):
        num, den = e.max(), n.max()
    else:
        raise ValidationError(f"unsupported norm index {q!r}")
    if den == 0.0:
        warnings.warn("relative error undefined for a zero reference trajectory", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(num / den)


def effectivity(delta, exact_error, floor=KAPPA_FLOOR):
    """Per-step ``kappa = Delta / ||e||``; steps with ``||e|| < floor`` give ``nan``."""
    delta = np.asarray(getattr(delta, "delta", delta), dtype=float)
    err = np.asarray(exact_error, dtype=float)
    if delta.shape != err.shape:
        raise ShapeError(f"estimate {delta.shape} and error {err.shape} differ in shape")
    out = np.full(delta.shape, np.nan)
    ok = err >= floor
    out[ok] = delta[ok] / err[ok]
    return out
