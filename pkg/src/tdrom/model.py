"""Parameter-dependent dynamical systems in decomposed form.

A full-order model describes ``u' = A(t, xi) u + h(u, t, xi) + g(t, xi)``
where ``A`` and ``g`` admit affine expansions

    A(t, xi) = sum_i theta_A^i(t, xi) A^i(t),
    g(t, xi) = sum_i theta_g^i(t, xi) g^i(t),

and ``h`` is an optional nonlinear flux. Everything is defined on a uniform
:class:`TimeGrid`; operators that depend on time are given per grid node.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ShapeError, ValidationError

__all__ = [
    "TimeGrid",
    "ParameterDomain",
    "AffineTerm",
    "NonlinearFlux",
    "FullOrderModel",
    "assemble_A",
    "eval_flux",
    "eval_flux_components",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization ``t^k = k T / K`` of ``[0, T]``."""

    T: float
    K: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError("time horizon must be positive")
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError("step count must be a positive integer")

    @property
    def dt(self):
        return self.T / self.K

    @property
    def nodes(self):
        return np.arange(self.K + 1) * self.T / self.K

    def t(self, k):
        if not 0 <= k <= self.K:
            raise IndexError(f"time index {k} outside [0, {self.K}]")
        return k * self.T / self.K


def euclidean(a, b):
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


@dataclass(frozen=True)
class ParameterDomain:
    """Box ``bounds`` (shape ``(p, 2)``) with a finite training set."""

    bounds: np.ndarray
    training_set: np.ndarray = None
    metric: Callable = euclidean

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if bounds.shape[1] != 2 or np.any(bounds[:, 0] > bounds[:, 1]):
            raise ValidationError("bounds must be a (p, 2) array of [lo, hi]")
        object.__setattr__(self, "bounds", bounds)
        if self.training_set is not None:
            train = self.as_points(self.training_set)
            if not all(self.contains(x) for x in train):
                raise ValidationError("training point outside parameter bounds")
            object.__setattr__(self, "training_set", train)

    @property
    def dim(self):
        return self.bounds.shape[0]

    def as_points(self, xis):
        pts = np.asarray(xis, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, self.dim) if self.dim == 1 else pts.reshape(1, -1)
        if pts.shape[1] != self.dim:
            raise ShapeError(f"parameter points must have {self.dim} components")
        return pts

    def contains(self, xi, tol=0.0):
        xi = np.asarray(xi, dtype=float).ravel()
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return bool(np.all(xi >= lo - tol) and np.all(xi <= hi + tol))

    def center(self):
        return self.bounds.mean(axis=1)

    def sample(self, n, seed):
        """Uniform i.i.d. points from the box using numpy's PCG64 generator."""
        rng = np.random.default_rng(seed)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((int(n), self.dim))

    def with_training_set(self, points):
        return ParameterDomain(self.bounds, points, self.metric)

    def distance(self, a, b):
        return self.metric(a, b)


@dataclass(frozen=True)
class AffineTerm:
    """One term ``theta(t, xi) * operator(t)`` of an affine expansion.

    ``operator`` is either a single matrix/vector (time-constant) or a
    sequence indexed by the time step ``k``. ``coefficient`` must be pure.
    """

    operator: object
    coefficient: Callable[[float, np.ndarray], float]

    @property
    def time_constant(self):
        return not isinstance(self.operator, (list, tuple))

    def at(self, k):
        return self.operator if self.time_constant else self.operator[k]


class NonlinearFlux:
    """Interface of the nonlinear part ``h(u, t, xi)`` of the flux.

    Subclasses implement :meth:`evaluate` and :meth:`gradient`. The local
    evaluation hooks let reduced models sample ``h`` at a few components
    without forming a full state: :meth:`support` names the state entries
    those components depend on and :meth:`components_local` evaluates them
    from those entries only. The defaults fall back to full evaluation.
    """

    # whether the flux ignores xi (allows batched sampling over parameters)
    parameter_free = True

    def __init__(self, dim):
        self.dim = dim

    def evaluate(self, u, t, xi):
        raise NotImplementedError

    def gradient(self, u, t, xi):
        raise NotImplementedError

    def support(self, indices):
        return np.arange(self.dim)

    def components_local(self, u_local, indices, support, t, xi):
        """Evaluate components ``indices`` from ``u[..., support]``.

        ``u_local`` may carry leading batch dimensions.
        """
        u_local = np.asarray(u_local, dtype=float)
        u = np.zeros(u_local.shape[:-1] + (self.dim,))
        u[..., support] = u_local
        flat = u.reshape(-1, self.dim)
        out = np.array([self.evaluate(v, t, xi)[indices] for v in flat])
        return out.reshape(u_local.shape[:-1] + (len(indices),))


@dataclass(frozen=True)
class FullOrderModel:
    """Immutable description of a parameter-dependent dynamical system.

    Parameters
    ----------
    dim : int
        State dimension ``d``.
    grid : TimeGrid
        Time discretization on which operators and coefficients are sampled.
    affine_A, affine_g : sequence of AffineTerm
        Terms of the linear operator and of the source.
    initial_state : callable
        ``xi -> u0`` of length ``d``.
    flux : NonlinearFlux, optional
        Nonlinear part; ``None`` means ``h = 0``.
    scheme : {"semi-implicit", "explicit"}
        Time-integration convention of the model.
    parameter_independent_initial_state : bool
        Whether ``initial_state`` ignores ``xi``; enables offline projection.
    """

    dim: int
    grid: TimeGrid
    affine_A: Sequence[AffineTerm] = ()
    affine_g: Sequence[AffineTerm] = ()
    initial_state: Callable = None
    flux: Optional[NonlinearFlux] = None
    scheme: str = "semi-implicit"
    parameter_independent_initial_state: bool = False
    name: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in ("semi-implicit", "explicit"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "affine_A", tuple(self.affine_A))
        object.__setattr__(self, "affine_g", tuple(self.affine_g))
        object.__setattr__(self, "_cache", {})

    @property
    def Q_A(self):
        return len(self.affine_A)

    @property
    def Q_g(self):
        return len(self.affine_g)

    @property
    def nonlinear(self):
        return self.flux is not None

    @property
    def operators_time_constant(self):
        return all(term.time_constant for term in self.affine_A + self.affine_g)

    def _check_k(self, k):
        if not 0 <= k <= self.grid.K:
            raise IndexError(f"time index {k} outside [0, {self.grid.K}]")

    def theta_A(self, k, xi):
        self._check_k(k)
        t = self.grid.t(k)
        return np.array([term.coefficient(t, xi) for term in self.affine_A], dtype=float)

    def theta_g(self, k, xi):
        self._check_k(k)
        t = self.grid.t(k)
        return np.array([term.coefficient(t, xi) for term in self.affine_g], dtype=float)

    def theta_tables(self, xis):
        """Coefficients for a batch of parameters.

        Returns arrays of shape ``(n, K + 1, Q_A)`` and ``(n, K + 1, Q_g)``.
        """
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        K = self.grid.K
        tA = np.array([[self.theta_A(k, xi) for k in range(K + 1)] for xi in xis])
        tg = np.array([[self.theta_g(k, xi) for k in range(K + 1)] for xi in xis])
        return tA.reshape(len(xis), K + 1, self.Q_A), tg.reshape(len(xis), K + 1, self.Q_g)

    def A_terms(self, k):
        return [term.at(k) for term in self.affine_A]

    def g_terms(self, k):
        return [np.asarray(term.at(k), dtype=float) for term in self.affine_g]

    def source(self, k, xi):
        g = np.zeros(self.dim)
        for theta, gi in zip(self.theta_g(k, xi), self.g_terms(k)):
            g += theta * gi
        return g

    def u0(self, xi=None):
        u = np.asarray(self.initial_state(xi), dtype=float)
        if u.shape != (self.dim,):
            raise ShapeError(f"initial state has shape {u.shape}, expected ({self.dim},)")
        return u

    def h(self, u, k, xi):
        if self.flux is None:
            return np.zeros(self.dim)
        return self.flux.evaluate(u, self.grid.t(k), xi)

    def grad_h(self, u, k, xi):
        if self.flux is None:
            return sp.csr_matrix((self.dim, self.dim))
        return self.flux.gradient(u, self.grid.t(k), xi)


def assemble_A(model, k, xi):
    """Return ``A(t^k, xi) = sum_i theta_A^i(t^k, xi) A^i(t^k)`` (sparse CSR)."""
    model._check_k(k)
    A = sp.csr_matrix((model.dim, model.dim))
    for theta, Ai in zip(model.theta_A(k, xi), model.A_terms(k)):
        A = A + theta * sp.csr_matrix(Ai)
    return A.tocsr()


def eval_flux(model, u, k, xi):
    """Evaluate ``A(t^k, xi) u + h(u, t^k, xi) + g(t^k, xi)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.dim,):
        raise ShapeError(f"state has shape {u.shape}, expected ({model.dim},)")
    return assemble_A(model, k, xi) @ u + model.h(u, k, xi) + model.source(k, xi)


def check_indices(indices, dim):
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError("component index out of range")
    if np.unique(idx).size != idx.size:
        raise IndexError("duplicate component index")
    return idx


def eval_flux_components(model, u, indices, k, xi):
    """Entries ``indices`` (0-based) of ``h(u, t^k, xi)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.dim,):
        raise ShapeError(f"state has shape {u.shape}, expected ({model.dim},)")
    idx = check_indices(indices, model.dim)
    if model.flux is None:
        return np.zeros(idx.size)
    support = model.flux.support(idx)
    return model.flux.components_local(u[support], idx, support, model.grid.t(k), xi)
