"""Time-dependent reduced bases, offline precomputation and online solves.

A reduced space is given per time step by ``V^k`` (``d x r``). The reduced
coordinates follow the Galerkin-projected step

    u_r^{k+1} = Pi^{k+1} (u_r^k + dt (A^s u_r^s + h~(u_r^k) + g^k)),

with ``s = k + 1`` for the semi-implicit scheme and ``s = k`` for the explicit
one, ``Pi^{k} = V^k V^k^T`` and ``h~`` the EIM approximation of the flux.
The residual of that step, projected on the orthogonal complement of the
next space, drives the error estimator.

Columns of ``V^k`` may be zero at steps where the selected trajectories are
linearly dependent (for instance at ``k = 0`` when they share the initial
state). All formulas below hold unchanged with such columns: the projector is
still ``V V^T`` and the corresponding coordinates stay zero.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, ConsistencyError, RankDeficiencyError, ShapeError, SolverError, ValidationError

__all__ = [
    "TimeDependentBasis",
    "ReducedTrajectory",
    "OfflineQuantities",
    "build_time_dependent_basis",
    "build_time_independent_basis",
    "compute_offline_quantities",
    "solve_reduced",
    "reconstruct",
    "reconstruct_trajectory",
    "residual_norms",
    "residual_norm_online",
    "residual_direct",
    "GS_TOL",
]

# Gram-Schmidt residuals below GS_TOL * ||u|| count as linear dependence
GS_TOL = 1e-12


class TimeDependentBasis:
    """Orthonormal bases ``V^k`` for ``k = 0..K`` (one shared matrix if time-independent).

    Parameters
    ----------
    V : ndarray
        ``(K + 1, d, r)`` per-step bases, or ``(1, d, r)`` for a time-independent one.
    dt : float
        Time step, used for the discrete velocities ``(V^{k+1} - V^k) / dt``.
    K : int
        Number of time steps.
    active : ndarray of bool, optional
        ``(K + 1, r)`` mask of nonzero columns.
    coefficients : ndarray, optional
        ``(K + 1, r, r)`` Gram-Schmidt factors, so that the i-th generating
        snapshot at step k is ``V^k @ coefficients[k, :, i]``.
    """

    def __init__(self, V, dt, K, active=None, coefficients=None):
        V = np.asarray(V, dtype=float)
        if V.ndim != 3 or V.shape[0] not in (1, K + 1):
            raise ShapeError(f"basis array has shape {V.shape}; expected (K+1, d, r) or (1, d, r)")
        self._V = V
        self._r = V.shape[2]
        self.dt = float(dt)
        self.K = int(K)
        self._active = None if active is None else np.asarray(active, dtype=bool)
        self._coef = coefficients

    @classmethod
    def empty(cls, d, grid, capacity=8):
        obj = cls(np.zeros((grid.K + 1, d, capacity)), grid.dt, grid.K)
        obj._r = 0
        obj._active = np.zeros((grid.K + 1, capacity), dtype=bool)
        obj._coef = np.zeros((grid.K + 1, capacity, capacity))
        return obj

    @property
    def V(self):
        return self._V[:, :, : self._r]

    @property
    def active(self):
        if self._active is None:
            return np.ones((self._V.shape[0], self._r), dtype=bool)
        return self._active[:, : self._r]

    @property
    def coefficients(self):
        return None if self._coef is None else self._coef[:, : self._r, : self._r]

    @property
    def r(self):
        return self._r

    @property
    def d(self):
        return self._V.shape[1]

    @property
    def time_independent(self):
        return self._V.shape[0] == 1

    def at(self, k):
        if not 0 <= k <= self.K:
            raise IndexError(f"time index {k} outside [0, {self.K}]")
        return self.V[0 if self.time_independent else k]

    def velocity(self, k):
        """``(V^{k+1} - V^k) / dt`` for ``k = 0..K-1``."""
        if not 0 <= k < self.K:
            raise IndexError(f"velocity index {k} outside [0, {self.K - 1}]")
        if self.time_independent:
            return np.zeros((self.d, self.r))
        return (self.V[k + 1] - self.V[k]) / self.dt

    def projector(self, k):
        Vk = self.at(k)
        return Vk @ Vk.T

    def project(self, u, k):
        Vk = self.at(k)
        return Vk @ (Vk.T @ u)

    def snapshot(self, i, k):
        """Reconstruct the i-th generating snapshot at step k (time-dependent bases)."""
        if self._coef is None:
            raise ConfigurationError("basis does not carry Gram-Schmidt coefficients")
        return self.at(k) @ self.coefficients[k, :, i]

    def rank_at(self, k):
        return int(self.active[0 if self.time_independent else k].sum())

    def _grow(self):
        cap = max(2 * self._V.shape[2], 1)
        V = np.zeros(self._V.shape[:2] + (cap,))
        V[:, :, : self._r] = self.V
        act = np.zeros((self._V.shape[0], cap), dtype=bool)
        act[:, : self._r] = self.active
        coef = np.zeros((self._V.shape[0], cap, cap))
        coef[:, : self._r, : self._r] = self.coefficients
        self._V, self._active, self._coef = V, act, coef

    def append_trajectory(self, states, tol=GS_TOL):
        """Orthonormalize one trajectory against the current columns, in place.

        Two passes of modified Gram-Schmidt, vectorized over time steps.
        At steps where the new snapshot is (numerically) dependent on the
        current columns the new column is set to zero; a snapshot that is
        dependent at every step raises :class:`RankDeficiencyError`.
        """
        if self.time_independent:
            raise ConfigurationError("cannot append a trajectory to a time-independent basis")
        U = np.asarray(states, dtype=float)
        if U.shape != (self.K + 1, self.d):
            raise ShapeError(f"trajectory has shape {U.shape}; expected {(self.K + 1, self.d)}")
        if self._coef is None:
            self._active = self.active.copy()
            self._coef = np.zeros((self.K + 1, self._r, self._r))
        if self._r == self._V.shape[2]:
            self._grow()
        i = self._r
        w = U.copy()
        coef = np.zeros((self.K + 1, i))
        for _ in range(2):
            for j in range(i):
                vj = self._V[:, :, j]
                c = np.einsum("kd,kd->k", vj, w)
                w -= c[:, None] * vj
                coef[:, j] += c
        nrm = np.linalg.norm(w, axis=1)
        scale = np.linalg.norm(U, axis=1)
        dependent = nrm <= tol * scale
        dependent |= nrm == 0.0
        if dependent.all():
            raise RankDeficiencyError(
                f"snapshot {i + 1} is linearly dependent on the previous ones at every step (first k=0)",
                k=0,
                index=i,
            )
        safe = np.where(dependent, 1.0, nrm)
        self._V[:, :, i] = np.where(dependent[:, None], 0.0, w / safe[:, None])
        self._active[:, i] = ~dependent
        self._coef[:, :i, i] = coef
        self._coef[:, i, i] = np.where(dependent, 0.0, nrm)
        self._r += 1
        return self

    def copy(self):
        out = TimeDependentBasis(self.V.copy(), self.dt, self.K, self.active.copy(),
                                 None if self._coef is None else self.coefficients.copy())
        return out


def build_time_dependent_basis(trajectories, tol=GS_TOL):
    """Basis of ``span{u(t^k, xi^1), ..., u(t^k, xi^r)}`` at every step, in selection order."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValidationError("need at least one trajectory")
    grid = trajectories[0].grid
    if any(t.grid != grid for t in trajectories):
        raise ValidationError("trajectories must share one time grid")
    basis = TimeDependentBasis.empty(trajectories[0].dim, grid, capacity=len(trajectories))
    for traj in trajectories:
        basis.append_trajectory(traj.states, tol)
    return basis


def build_time_independent_basis(modes, grid, tol=1e-10):
    """Replicate an orthonormal ``(d, r)`` matrix across all steps (zero velocity)."""
    modes = np.asarray(modes, dtype=float)
    if modes.ndim != 2:
        raise ShapeError("modes must be a (d, r) matrix")
    dev = np.abs(modes.T @ modes - np.eye(modes.shape[1])).max() if modes.size else 0.0
    if dev > tol:
        raise ValidationError(f"modes are not orthonormal (deviation {dev:.2e})")
    return TimeDependentBasis(modes[None].copy(), grid.dt, grid.K)


@dataclass
class ReducedTrajectory:
    """Reduced coordinates ``alpha^k`` for a batch of parameters.

    ``alpha`` has shape ``(n, K + 1, r)``; ``samples`` holds the sampled flux
    ``P_m^T h(u_r^k)`` for ``k = 0..K-1`` (shape ``(n, K, m)``) or ``None``.
    """

    alpha: np.ndarray
    samples: np.ndarray = None
    xis: np.ndarray = None

    def __getitem__(self, i):
        return ReducedTrajectory(
            self.alpha[i : i + 1],
            None if self.samples is None else self.samples[i : i + 1],
            None if self.xis is None else self.xis[i : i + 1],
        )


@dataclass
class OfflineQuantities:
    """Parameter-independent reduced operators for one reduced space.

    Per-step arrays have leading length ``K`` (step ``k -> k+1``), or 1 when
    all blocks are identical over time (time-independent basis and
    time-constant operators).

    ``residual_factor[k]`` is the triangular factor ``R`` of the QR
    decomposition of the projected column block::

        Pi_perp^{k+1} [ dV^k/dt | A^1 V^s .. A^QA V^s | U_m | g^1 .. g^Qg ]

    so that its Gram matrix ``R^T R`` holds every inner product of the
    online residual expansion; see :meth:`blocks`.
    """

    scheme: str
    dt: float
    K: int
    r: int
    m: int
    Q_A: int
    Q_g: int
    time_dependent: bool
    constant: bool
    transition: np.ndarray
    A_red: np.ndarray
    g_red: np.ndarray
    eim_premult: np.ndarray
    residual_factor: np.ndarray
    alpha0: np.ndarray = None
    delta0: float = None
    support: np.ndarray = None
    eim_indices: np.ndarray = None
    V_rows: np.ndarray = None
    lipschitz: object = None
    extras: dict = field(default_factory=dict)

    def step(self, k):
        return 0 if self.constant else k

    def row_step(self, k):
        return 0 if self.V_rows is None or self.V_rows.shape[0] == 1 else k

    @property
    def layout(self):
        """Slices of the residual coefficient vector."""
        out, pos = {}, 0
        width = {"W": self.r if self.time_dependent else 0, "U": self.m, "g": self.Q_g}
        out["W"] = slice(pos, pos + width["W"])
        pos += width["W"]
        for i in range(self.Q_A):
            out[f"A{i}"] = slice(pos, pos + self.r)
            pos += self.r
        out["U"] = slice(pos, pos + self.m)
        pos += self.m
        out["g"] = slice(pos, pos + self.Q_g)
        pos += self.Q_g
        out["size"] = pos
        return out

    def gram(self, k):
        R = self.residual_factor[self.step(k)]
        return R.T @ R

    def blocks(self, k):
        """Named Gram blocks for step ``k`` (names follow the usual offline notation).

        ``K1[i][j]`` pairs ``A^i V`` with ``A^j V``; ``K2[i]``: velocity with
        ``A^i V``; ``K3``: velocity with itself; ``K4``: velocity with
        ``U_m``; ``K5[i]``: ``A^i V`` with ``U_m``; ``b1[i]``: velocity with
        ``g^i``; ``b2[i][j]``: ``A^i V`` with ``g^j``; ``b3[i]``: ``U_m`` with
        ``g^i``; ``M6``: ``U_m`` with itself; ``Gg``: ``g^i`` with ``g^j``.
        Every inner product is taken after projection on the orthogonal
        complement of the next reduced space.
        """
        G = self.gram(k)
        L = self.layout
        W, U, g = L["W"], L["U"], L["g"]
        A = [L[f"A{i}"] for i in range(self.Q_A)]
        gi = [slice(g.start + i, g.start + i + 1) for i in range(self.Q_g)]
        return {
            "K1": [[G[a, b] for b in A] for a in A],
            "K2": [G[W, a] for a in A],
            "K3": G[W, W],
            "K4": G[W, U],
            "K5": [G[a, U] for a in A],
            "b1": [G[W, s].ravel() for s in gi],
            "b2": [[G[a, s].ravel() for s in gi] for a in A],
            "b3": [G[U, s].ravel() for s in gi],
            "M6": G[U, U],
            "Gg": G[g, g],
        }


def _apply_sparse_batch(M, X):
    """``M @ X[k]`` for every k, with ``X`` of shape ``(n, d, r)``."""
    n, d, r = X.shape
    Y = M @ X.transpose(1, 0, 2).reshape(d, n * r)
    return np.asarray(Y).reshape(M.shape[0], n, r).transpose(1, 0, 2)


def compute_offline_quantities(basis, model, eim=None, lipschitz=None, chunk=64):
    """Precompute everything the online phase needs for ``basis``.

    Parameters
    ----------
    basis : TimeDependentBasis
    model : FullOrderModel
    eim : EimOperator, optional
        Required when the model has a nonlinear flux.
    lipschitz : LipschitzTable, optional
        Stored as-is for the estimator.
    chunk : int
        Number of time steps processed per vectorized batch.
    """
    if model.nonlinear and eim is None:
        raise ConfigurationError("a nonlinear model needs an EIM operator")
    if basis.d != model.dim or basis.K != model.grid.K:
        raise ShapeError("basis does not match the model dimensions")
    K, dt, r, d = model.grid.K, model.grid.dt, basis.r, model.dim
    explicit = model.scheme == "explicit"
    td = not basis.time_independent
    constant = basis.time_independent and model.operators_time_constant
    m = eim.m if (eim is not None and model.nonlinear) else 0
    Q_A, Q_g = model.Q_A, model.Q_g
    n_steps = 1 if constant else K
    n_c = (r if td else 0) + Q_A * r + m + Q_g

    transition = np.empty((n_steps, r, r))
    A_red = np.empty((n_steps, Q_A, r, r))
    g_red = np.empty((n_steps, Q_g, r))
    premult = np.empty((n_steps, r, m))
    R_res = np.zeros((n_steps, n_c, n_c))
    Um = eim.U if m else np.zeros((d, 0))
    V = basis.V

    for start in range(0, n_steps, chunk):
        ks = np.arange(start, min(start + chunk, n_steps))
        nk = ks.size
        if basis.time_independent:
            Vn = np.broadcast_to(V[0], (nk, d, r))
            Vc = Vn
        else:
            Vn = V[ks + 1]
            Vc = V[ks]
        Vs = Vc if explicit else Vn
        s_idx = ks if explicit else ks + 1
        AVs = []
        for i, term in enumerate(model.affine_A):
            if term.time_constant:
                AVs.append(_apply_sparse_batch(sp.csr_matrix(term.operator), np.ascontiguousarray(Vs)))
            else:
                AVs.append(np.stack([term.at(int(s)) @ Vs[j] for j, s in enumerate(s_idx)]))
        G = np.stack([np.stack([np.asarray(term.at(int(k)), float) for k in ks]) for term in model.affine_g], axis=1) if Q_g else np.zeros((nk, 0, d))

        VnT = Vn.transpose(0, 2, 1)
        transition[ks] = VnT @ Vc
        for i in range(Q_A):
            A_red[ks, i] = VnT @ AVs[i]
        if Q_g:
            g_red[ks] = np.einsum("kdr,kqd->kqr", Vn, G)
        premult[ks] = VnT @ Um

        cols = []
        if td:
            # Pi_perp^{k+1} (V^{k+1} - V^k) / dt = -Pi_perp^{k+1} V^k / dt
            cols.append(-Vc / dt)
        cols.extend(AVs)
        if m:
            cols.append(np.broadcast_to(Um, (nk, d, m)))
        if Q_g:
            cols.append(G.transpose(0, 2, 1))
        if n_c == 0:
            continue
        B = np.concatenate(cols, axis=2)
        for _ in range(2):
            B = B - Vn @ (VnT @ B)
        Rk = np.linalg.qr(B, mode="r")
        R_res[ks, : Rk.shape[1]] = Rk

    alpha0 = delta0 = None
    if model.parameter_independent_initial_state:
        u0 = model.u0(None)
        V0 = basis.at(0)
        alpha0 = V0.T @ u0
        delta0 = float(np.linalg.norm(u0 - V0 @ alpha0))

    support = V_rows = idx = None
    if m:
        idx = eim.indices.copy()
        support = model.flux.support(idx)
        V_rows = np.ascontiguousarray(V[:, support, :])

    return OfflineQuantities(
        scheme=model.scheme,
        dt=dt,
        K=K,
        r=r,
        m=m,
        Q_A=Q_A,
        Q_g=Q_g,
        time_dependent=td,
        constant=constant,
        transition=transition,
        A_red=A_red,
        g_red=g_red,
        eim_premult=premult,
        residual_factor=R_res,
        alpha0=alpha0,
        delta0=delta0,
        support=support,
        eim_indices=idx,
        V_rows=V_rows,
        lipschitz=lipschitz,
    )


def initial_coordinates(offline, basis, model, xis):
    """``alpha^0 = V^0^T u0(xi)`` and ``||u0 - Pi^0 u0||`` for each parameter."""
    n = len(xis)
    if offline.alpha0 is not None:
        return np.tile(offline.alpha0, (n, 1)), np.full(n, offline.delta0)
    if basis is None:
        raise ConfigurationError("parameter-dependent initial states need the basis")
    V0 = basis.at(0)
    U0 = np.stack([model.u0(xi) for xi in xis])
    alpha0 = U0 @ V0
    delta0 = np.linalg.norm(U0 - alpha0 @ V0.T, axis=1)
    return alpha0, delta0


def sample_flux(offline, model, alpha_k, k, xis):
    """``P_m^T h(V^k alpha^k)`` from the stored support rows of ``V^k``."""
    rows = offline.V_rows[offline.row_step(k)]
    u_loc = alpha_k @ rows.T
    t = model.grid.t(k)
    flux = model.flux
    if getattr(flux, "parameter_free", True) or len(xis) == 1:
        return flux.components_local(u_loc, offline.eim_indices, offline.support, t, xis[0] if len(xis) else None)
    return np.stack([flux.components_local(u, offline.eim_indices, offline.support, t, xi) for u, xi in zip(u_loc, xis)])


def solve_reduced(offline, model, xis, thetas=None, basis=None):
    """Step the reduced system for a batch of parameters.

    Parameters
    ----------
    offline : OfflineQuantities
    model : FullOrderModel
        Supplies the affine coefficients and the flux evaluator.
    xis : (n, p) array_like
    thetas : tuple of ndarray, optional
        Precomputed ``model.theta_tables(xis)``.
    basis : TimeDependentBasis, optional
        Only needed for parameter-dependent initial states.

    Returns
    -------
    ReducedTrajectory
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    n = len(xis)
    tA, tg = thetas if thetas is not None else model.theta_tables(xis)
    K, dt, r, m = offline.K, offline.dt, offline.r, offline.m
    explicit = offline.scheme == "explicit"
    alpha = np.empty((n, K + 1, r))
    samples = np.empty((n, K, m)) if m else None
    alpha[:, 0], _ = initial_coordinates(offline, basis, model, xis)
    eye = np.eye(r)
    for k in range(K):
        j = offline.step(k)
        a = alpha[:, k]
        rhs = a @ offline.transition[j].T
        if m:
            v1 = sample_flux(offline, model, a, k, xis)
            samples[:, k] = v1
            rhs += dt * (v1 @ offline.eim_premult[j].T)
        if offline.Q_g:
            rhs += dt * np.einsum("nq,qr->nr", tg[:, k], offline.g_red[j])
        if explicit:
            rhs += dt * np.einsum("nq,qrs,ns->nr", tA[:, k], offline.A_red[j], a)
            alpha[:, k + 1] = rhs
        else:
            M = eye - dt * np.einsum("nq,qrs->nrs", tA[:, k + 1], offline.A_red[j])
            try:
                alpha[:, k + 1] = np.linalg.solve(M, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular reduced step matrix at k={k + 1}", k=k + 1, xi=xis) from exc
        if not np.all(np.isfinite(alpha[:, k + 1])):
            raise SolverError(f"non-finite reduced state at k={k + 1}", k=k + 1, xi=xis)
    return ReducedTrajectory(alpha, samples, xis)


def reconstruct(basis, alpha, k):
    """``u_r^k = V^k alpha^k``; ``alpha`` is either ``(K+1, r)`` or the k-th vector."""
    alpha = np.asarray(alpha, dtype=float)
    a = alpha[k] if alpha.ndim == 2 else alpha
    return basis.at(k) @ a


def reconstruct_trajectory(basis, alpha):
    """Full states ``(K + 1, d)`` from one coordinate history ``(K + 1, r)``."""
    alpha = np.asarray(alpha, dtype=float)
    if basis.time_independent:
        return alpha @ basis.V[0].T
    return np.einsum("kdr,kr->kd", basis.V, alpha)


def _coefficients(offline, a_k, a_s, v1, tA_s, tg_k):
    """Residual coefficient vectors for a batch, matching ``offline.layout``."""
    parts = []
    if offline.time_dependent:
        parts.append(a_k)
    for i in range(offline.Q_A):
        parts.append(-tA_s[:, i : i + 1] * a_s)
    if offline.m:
        parts.append(-v1)
    if offline.Q_g:
        parts.append(-tg_k)
    if not parts:
        return np.zeros((a_k.shape[0], 0))
    return np.concatenate(parts, axis=1)


def residual_norms(offline, traj, model=None, thetas=None):
    """``||r~^k||`` for ``k = 0..K-1`` and every parameter in ``traj`` (shape ``(n, K)``)."""
    alpha = traj.alpha
    n = alpha.shape[0]
    K = offline.K
    if thetas is None:
        thetas = model.theta_tables(traj.xis)
    tA, tg = thetas
    explicit = offline.scheme == "explicit"
    out = np.empty((n, K))
    for k in range(K):
        s = k if explicit else k + 1
        v1 = traj.samples[:, k] if offline.m else None
        c = _coefficients(offline, alpha[:, k], alpha[:, s], v1, tA[:, s], tg[:, k])
        R = offline.residual_factor[offline.step(k)]
        out[:, k] = np.linalg.norm(c @ R.T, axis=1)
    return out


def residual_norm_online(offline, k, alpha_k, alpha_next, sampled_flux=None, theta_A=None, theta_g=None,
                         method="factor", clamp=1e-12):
    """Residual norm of step ``k -> k+1`` for a single parameter.

    Parameters
    ----------
    alpha_k, alpha_next : (r,) ndarray
        Reduced coordinates at steps ``k`` and ``k + 1``.
    sampled_flux : (m,) ndarray, optional
        ``P_m^T h(u_r^k)``.
    theta_A : (Q_A,) ndarray
        Coefficients at the implicit step (``t^{k+1}``, or ``t^k`` for the
        explicit scheme).
    theta_g : (Q_g,) ndarray
        Source coefficients at ``t^k``.
    method : {"factor", "expansion"}
        ``"factor"`` evaluates ``||R c||``; ``"expansion"`` sums the quadratic
        form term by term from the named Gram blocks, clamping round-off
        negatives down to ``-clamp * scale``.
    """
    a_k = np.asarray(alpha_k, float)
    a_n = np.asarray(alpha_next, float)
    tA = np.zeros(offline.Q_A) if theta_A is None else np.asarray(theta_A, float)
    tg = np.zeros(offline.Q_g) if theta_g is None else np.asarray(theta_g, float)
    v1 = np.zeros(offline.m) if sampled_flux is None else np.asarray(sampled_flux, float)
    if a_k.shape != (offline.r,) or a_n.shape != (offline.r,) or v1.shape != (offline.m,):
        raise ShapeError("coordinate or sample vectors do not match the offline quantities")
    a_s = a_k if offline.scheme == "explicit" else a_n
    if method == "factor":
        c = _coefficients(offline, a_k[None], a_s[None], v1[None], tA[None], tg[None])[0]
        return float(np.linalg.norm(offline.residual_factor[offline.step(k)] @ c))
    if method != "expansion":
        raise ValueError(f"unknown method {method!r}")
    B = offline.blocks(k)
    QA, Qg = offline.Q_A, offline.Q_g
    td = offline.time_dependent
    M1 = sum(tA[i] * tA[j] * B["K1"][i][j] for i in range(QA) for j in range(QA)) if QA else 0.0
    terms = [a_s @ (M1 @ a_s) if QA else 0.0]
    if td:
        M2 = -2.0 * sum(tA[i] * B["K2"][i] for i in range(QA)) if QA else 0.0
        terms += [a_k @ (M2 @ a_s) if QA else 0.0, a_k @ (B["K3"] @ a_k)]
        if offline.m:
            terms.append(a_k @ (-2.0 * B["K4"] @ v1))
        if Qg:
            v3 = -2.0 * sum(tg[i] * B["b1"][i] for i in range(Qg))
            terms.append(a_k @ v3)
    if offline.m:
        M5 = 2.0 * sum(tA[i] * B["K5"][i] for i in range(QA)) if QA else np.zeros((offline.r, offline.m))
        terms += [a_s @ (M5 @ v1), v1 @ (B["M6"] @ v1)]
        if Qg:
            v2 = 2.0 * sum(tg[i] * B["b3"][i] for i in range(Qg))
            terms.append(v1 @ v2)
    if Qg:
        v4 = 2.0 * sum(tA[i] * tg[j] * B["b2"][i][j] for i in range(QA) for j in range(Qg))
        terms.append(a_s @ v4)
        terms.append(tg @ (B["Gg"] @ tg))
    total = float(sum(terms))
    scale = float(sum(abs(t) for t in terms))
    if total < 0.0:
        if total < -clamp * max(scale, 1e-300):
            raise ConsistencyError(f"negative squared residual {total:.3e} at k={k}")
        total = 0.0
    return float(np.sqrt(total))


def residual_direct(basis, model, k, xi, alpha_k, alpha_next, eim=None):
    """Literal ``d``-space evaluation of the step residual (test oracle).

    ``Pi_perp^{k+1} ((V^{k+1} - V^k)/dt alpha^k - A^s u_r^s - h~(u_r^k) - g^k)``.
    """
    from .model import assemble_A

    dt = model.grid.dt
    explicit = model.scheme == "explicit"
    Vn, Vc = basis.at(k + 1), basis.at(k)
    u_k = Vc @ alpha_k
    u_s = u_k if explicit else Vn @ alpha_next
    s = k if explicit else k + 1
    w = (Vn - Vc) / dt @ alpha_k - assemble_A(model, s, xi) @ u_s - model.source(k, xi)
    if model.nonlinear:
        h = model.h(u_k, k, xi)
        w = w - (eim(h) if eim is not None else h)
    return w - Vn @ (Vn.T @ w)
