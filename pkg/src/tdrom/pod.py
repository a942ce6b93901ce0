"""Proper orthogonal decomposition of weighted snapshot sets."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as la

from .exceptions import ValidationError

__all__ = ["PodResult", "pod", "RANK_CUTOFF"]

# singular values below RANK_CUTOFF * sigma_1 are treated as zero
RANK_CUTOFF = 1e-12


@dataclass
class PodResult:
    """Leading POD modes of a snapshot matrix.

    Attributes
    ----------
    modes : (d, l) ndarray
        Orthonormal modes, ``l`` possibly smaller than requested.
    singular_values : ndarray
        All singular values of the weighted snapshot matrix, nonincreasing.
    energy_ratios : ndarray
        Cumulative normalized squared singular values.
    rank_deficient : bool
        True when fewer modes than requested were numerically available.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    energy_ratios: np.ndarray
    rank_deficient: bool = False

    @property
    def n_modes(self):
        return self.modes.shape[1]


def pod(snapshots, weights=None, n_modes=None, cutoff=RANK_CUTOFF):
    """POD of the column-weighted snapshot matrix ``[sqrt(w_j) s_j]``.

    The span of the returned modes minimizes ``sum_j w_j ||s_j - P s_j||^2``
    over all subspaces of the returned dimension.

    Parameters
    ----------
    snapshots : (d, M) array_like
    weights : (M,) array_like, optional
        Nonnegative quadrature weights; uniform ones by default.
    n_modes : int, optional
        Number of modes; all numerically nonzero modes by default.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2:
        raise ValidationError("snapshots must be a (d, M) matrix")
    d, M = S.shape
    w = np.ones(M) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (M,) or np.any(w < 0):
        raise ValidationError("weights must be M nonnegative values")
    if n_modes is not None and not 0 <= n_modes <= min(d, M):
        raise ValidationError(f"requested {n_modes} modes but min(d, M) = {min(d, M)}")
    U, s, _ = la.svd(S * np.sqrt(w), full_matrices=False, lapack_driver="gesvd")
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s > cutoff * s[0]))
    want = rank if n_modes is None else n_modes
    deficient = want > rank
    if deficient:
        warnings.warn(f"requested {want} POD modes, numerical rank is {rank}", stacklevel=2)
    keep = min(want, rank)
    energy = np.cumsum(s**2)
    energy = energy / energy[-1] if s.size and energy[-1] > 0 else energy
    return PodResult(U[:, :keep].copy(), s, energy, deficient)
