"""Discrete empirical interpolation of a nonlinear flux.

The interpolation basis is the POD of flux snapshots; interpolation indices
are picked greedily (DEIM). The number of terms is the smallest one whose
maximal training error drops below the tolerance.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as la

from .exceptions import ConsistencyError, ShapeError, ValidationError
from .pod import pod

__all__ = ["EimOperator", "build_eim", "deim_indices", "eim_reduced_apply"]


@dataclass
class EimOperator:
    """Interpolation operator ``U_m P_m^T`` with ``U_m = H_m (P_m^T H_m)^{-1}``.

    Attributes
    ----------
    basis : (d, m) ndarray
        Interpolation basis ``H_m``.
    indices : (m,) int ndarray
        Interpolation ("magic") indices, 0-based, in selection order.
    U : (d, m) ndarray
        Combined operator.
    tol : float
        Requested training tolerance.
    train_error : float
        Achieved max training error.
    converged : bool
        Whether ``train_error < tol``.
    condition : float
        2-norm condition number of ``P_m^T H_m``.
    history : list of (m, error)
        Training errors of every count examined during the search.
    """

    basis: np.ndarray
    indices: np.ndarray
    U: np.ndarray
    tol: float
    train_error: float
    converged: bool
    condition: float = 1.0
    history: list = field(default_factory=list)

    @property
    def m(self):
        return self.indices.size

    @property
    def dim(self):
        return self.basis.shape[0]

    def interpolate(self, samples):
        """Map samples ``P_m^T v`` (last axis of length m) to ``d``-vectors."""
        samples = np.asarray(samples, dtype=float)
        return samples @ self.U.T

    def __call__(self, v):
        """EIM approximation ``U_m P_m^T v`` of a full vector (or rows of vectors)."""
        v = np.asarray(v, dtype=float)
        return self.interpolate(v[..., self.indices])


def deim_indices(H):
    """Greedy interpolation indices for the columns of ``H`` (ties: lowest index)."""
    H = np.asarray(H, dtype=float)
    m = H.shape[1]
    idx = np.empty(m, dtype=np.int64)
    if m == 0:
        return idx
    idx[0] = np.argmax(np.abs(H[:, 0]))
    for l in range(1, m):
        c = la.solve(H[idx[:l], :l], H[idx[:l], l])
        res = H[:, l] - H[:, :l] @ c
        idx[l] = np.argmax(np.abs(res))
        if res[idx[l]] == 0.0:
            raise ConsistencyError(f"DEIM residual vanished at term {l + 1}")
    return idx


def _combined(H, idx):
    PH = H[idx, :]
    if PH.size == 0:
        return np.zeros_like(H), 1.0
    cond = np.linalg.cond(PH)
    if not np.isfinite(cond):
        raise ConsistencyError("P^T H is singular")
    U = la.solve(PH.T, H.T).T
    return U, float(cond)


def _training_error(S, H, idx):
    if idx.size == 0:
        return float(np.max(np.linalg.norm(S, axis=0))) if S.size else 0.0
    coef = la.solve(H[idx, :], S[idx, :])
    return float(np.max(np.linalg.norm(S - H @ coef, axis=0)))


def build_eim(snapshots, tol, max_terms=None, normalize=True):
    """Build a DEIM operator from flux snapshots (columns of a ``(d, M)`` matrix).

    The count ``m`` is located by bisection over ``1..rank`` using the max
    training error; it is the smallest count meeting ``tol`` whenever that
    error is monotone in ``m``.

    Parameters
    ----------
    normalize : bool
        Compute the POD modes from unit-norm snapshot columns (zero columns
        dropped). Small fluxes then weigh as much as large ones, which keeps
        the relative interpolation error uniform in time. The stopping rule
        always uses the absolute error of the original snapshots.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] < 1:
        raise ValidationError("snapshots must be a (d, M) matrix with M >= 1")
    if not tol > 0:
        raise ValidationError("EIM tolerance must be positive")
    if normalize:
        norms = np.linalg.norm(S, axis=0)
        keep = norms > 0
        modes = pod(S[:, keep] / norms[keep]).modes if keep.any() else np.zeros((S.shape[0], 0))
    else:
        modes = pod(S).modes
    if max_terms is not None:
        modes = modes[:, :max_terms]
    R = modes.shape[1]
    idx_all = deim_indices(modes)
    cache = {}

    def err(m):
        if m not in cache:
            cache[m] = _training_error(S, modes[:, :m], idx_all[:m])
        return cache[m]

    if err(0) < tol:
        m = 0
    elif err(R) >= tol:
        m = R
    else:
        lo, hi = 0, R
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if err(mid) < tol:
                hi = mid
            else:
                lo = mid
        m = hi
    H = modes[:, :m].copy()
    idx = idx_all[:m].copy()
    U, cond = _combined(H, idx)
    return EimOperator(
        basis=H,
        indices=idx,
        U=U,
        tol=float(tol),
        train_error=err(m),
        converged=err(m) < tol,
        condition=cond,
        history=sorted(cache.items()),
    )


def eim_reduced_apply(op, premultiplier, sampled_flux):
    """``premultiplier @ sampled_flux`` where ``premultiplier`` is ``W^T U_m``.

    Supports a leading batch axis on ``sampled_flux``.
    """
    P = np.asarray(premultiplier, dtype=float)
    s = np.asarray(sampled_flux, dtype=float)
    if P.ndim != 2 or P.shape[1] != op.m or s.shape[-1] != op.m:
        raise ShapeError(f"premultiplier {P.shape} and samples {s.shape} do not match m={op.m}")
    return s @ P.T
