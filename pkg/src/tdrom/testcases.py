"""Finite-difference builders for the three benchmark problems.

* ``advection1d``: periodic upwind advection with explicit Euler.
* ``advdiff2d``: rotating advection-diffusion on the unit square.
* ``burgers1d``: viscous Burgers with localized sources.

Each builder returns ``(model, grid, domain)``; the domain carries bounds only,
training sets are attached by the caller.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import ValidationError
from .model import AffineTerm, FullOrderModel, NonlinearFlux, ParameterDomain, TimeGrid

__all__ = [
    "BenchmarkSpec",
    "build",
    "build_advection_1d",
    "build_advdiff_2d",
    "build_burgers_1d",
    "BurgersFlux",
    "advection_speed",
    "diffusion_coefficient",
    "rotation_amplitude",
]

A0_ADV, A1_ADV = 1.0, 0.5
MU0, A0_ROT = 0.5, 0.1


@dataclass(frozen=True)
class BenchmarkSpec:
    case: str
    n: int = None
    ic: str = "continuous"

    def __post_init__(self):
        if self.case not in CASES:
            raise ValidationError(f"unknown benchmark {self.case!r}; expected one of {sorted(CASES)}")

    def to_dict(self):
        return {"case": self.case, "n": self.n, "ic": self.ic}


def advection_speed(xi):
    return A0_ADV + A1_ADV * float(np.ravel(xi)[0])


def continuous_ic(x):
    return np.exp(-(((x - 0.6) / 0.05) ** 2)) / np.sqrt(2.0 * np.pi)


def discontinuous_ic(x):
    inside = (x >= 0.1) & (x <= 0.9)
    return np.where(inside, (np.floor(3.0 * x) + np.sin(10.0 * x)) ** 2, 0.0)


def periodic_upwind(d, dx):
    """Backward difference ``(u_i - u_{i-1}) / dx`` with periodic closure."""
    D = sp.diags([np.ones(d), -np.ones(d - 1)], [0, -1], shape=(d, d), format="lil")
    D[0, d - 1] = -1.0
    return (D / dx).tocsr()


def build_advection_1d(n=2001, ic="continuous"):
    if n < 8:
        raise ValidationError("advection1d needs n >= 8")
    if ic not in ("continuous", "discontinuous"):
        raise ValidationError(f"unknown initial condition {ic!r}")
    d = n - 1
    dx = 1.0 / (n - 1)
    x = np.arange(d) * dx
    T = 0.2
    dt_cfl = 0.5 * dx / (A0_ADV + A1_ADV)
    # smallest K with T / K <= CFL step; exact for n = 2001
    K = int(np.ceil(T / dt_cfl - 1e-9))
    grid = TimeGrid(T, K)
    # a(xi) >= 0.5 on the whole domain, so left upwinding is always correct
    C = -periodic_upwind(d, dx)
    u0 = continuous_ic(x) if ic == "continuous" else discontinuous_ic(x)
    u0.setflags(write=False)
    model = FullOrderModel(
        dim=d,
        grid=grid,
        affine_A=[AffineTerm(C, lambda t, xi: advection_speed(xi))],
        initial_state=lambda xi=None: u0,
        scheme="explicit",
        parameter_independent_initial_state=True,
        name="advection1d",
        info={"x": x, "dx": dx, "ic": ic, "n": n},
    )
    domain = ParameterDomain(np.array([[-1.0, 1.0]]))
    return model, grid, domain


def diffusion_coefficient(xi):
    return MU0 * (2.0 + np.cos(np.pi * float(np.ravel(xi)[0])) ** 2)


def rotation_amplitude(xi):
    return A0_ROT * np.sin(np.pi * float(np.ravel(xi)[1]))


def rotation_field(x1, x2):
    return x2 - 0.5, 0.5 - x1


def build_advdiff_2d(n_side=41):
    if n_side < 5:
        raise ValidationError("advdiff2d needs n_side >= 5")
    m = n_side - 2
    h = 1.0 / (n_side - 1)
    xs = np.arange(1, n_side - 1) * h
    # lexicographic ordering with x1 fastest
    X1, X2 = np.meshgrid(xs, xs, indexing="xy")
    x1, x2 = X1.ravel(), X2.ravel()
    I = sp.identity(m, format="csr")
    lap1 = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    grad1 = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1]) / (2.0 * h)
    A_D = (sp.kron(I, lap1) + sp.kron(lap1, I)).tocsr()
    D1 = sp.kron(I, grad1).tocsr()
    D2 = sp.kron(grad1, I).tocsr()
    b1, b2 = rotation_field(x1, x2)
    A_C = (-(sp.diags(b1) @ D1 + sp.diags(b2) @ D2)).tocsr()
    u0 = np.exp(-((x1 - 2.0 / 3.0) ** 2) - (x2 - 2.0 / 3.0) ** 2) * np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
    u0.setflags(write=False)
    grid = TimeGrid(0.2, 400)
    model = FullOrderModel(
        dim=m * m,
        grid=grid,
        affine_A=[
            AffineTerm(A_D, lambda t, xi: diffusion_coefficient(xi)),
            AffineTerm(A_C, lambda t, xi: rotation_amplitude(xi)),
        ],
        initial_state=lambda xi=None: u0,
        parameter_independent_initial_state=True,
        name="advdiff2d",
        info={"x1": x1, "x2": x2, "h": h, "n_side": n_side},
    )
    domain = ParameterDomain(np.array([[-1.0, 1.0], [-1.0, 1.0]]))
    return model, grid, domain


class BurgersFlux(NonlinearFlux):
    """``h(u)_i = -u_i (C u)_i`` with a sparse first-derivative matrix ``C``."""

    def __init__(self, C):
        super().__init__(C.shape[0])
        self.C = sp.csr_matrix(C)

    def evaluate(self, u, t=None, xi=None):
        u = np.asarray(u, dtype=float)
        return -u * (self.C @ u)

    def gradient(self, u, t=None, xi=None):
        u = np.asarray(u, dtype=float)
        return (-sp.diags(self.C @ u) - sp.diags(u) @ self.C).tocsr()

    def support(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        cols = self.C[idx].indices
        return np.union1d(idx, cols)

    def components_local(self, u_local, indices, support, t=None, xi=None):
        idx = np.asarray(indices, dtype=np.int64)
        support = np.asarray(support, dtype=np.int64)
        Cs = self.C[idx][:, support]
        pos = np.searchsorted(support, idx)
        u_local = np.asarray(u_local, dtype=float)
        return -u_local[..., pos] * (Cs @ u_local.reshape(-1, support.size).T).T.reshape(
            u_local.shape[:-1] + (idx.size,)
        )


def burgers_source_profiles(x):
    g1 = 4.0 * np.exp(-(((x - 0.2) / 0.03) ** 2)) * ((x >= 0.1) & (x <= 0.3))
    g2 = 4.0 * ((x >= 0.6) & (x <= 0.7)).astype(float)
    return g1, g2


def build_burgers_1d(n=300):
    if n < 8:
        raise ValidationError("burgers1d needs n >= 8")
    d = n - 2
    dx = 1.0 / (n - 1)
    x = np.arange(1, n - 1) * dx
    lap = sp.diags([np.ones(d - 1), -2.0 * np.ones(d), np.ones(d - 1)], [-1, 0, 1], format="csr") / dx**2
    C = sp.diags([-np.ones(d - 1), np.ones(d - 1)], [-1, 1], format="csr") / (2.0 * dx)
    g1, g2 = burgers_source_profiles(x)
    g1.setflags(write=False)
    g2.setflags(write=False)
    u0 = np.zeros(d)
    u0.setflags(write=False)
    grid = TimeGrid(1.0, 200)
    model = FullOrderModel(
        dim=d,
        grid=grid,
        affine_A=[AffineTerm(lap.tocsr(), lambda t, xi: float(np.ravel(xi)[0]))],
        affine_g=[
            AffineTerm(g1, lambda t, xi: np.sin(4.0 * np.pi * t)),
            AffineTerm(g2, lambda t, xi: 1.0 if 0.2 <= t <= 0.4 else 0.0),
        ],
        initial_state=lambda xi=None: u0,
        flux=BurgersFlux(C),
        parameter_independent_initial_state=True,
        name="burgers1d",
        info={"x": x, "dx": dx, "C": C, "n": n},
    )
    domain = ParameterDomain(np.array([[0.01, 0.06]]))
    return model, grid, domain


CASES = {
    "advection1d": build_advection_1d,
    "advdiff2d": build_advdiff_2d,
    "burgers1d": build_burgers_1d,
}

DEFAULT_RESOLUTION = {"advection1d": 2001, "advdiff2d": 41, "burgers1d": 300}


def build(spec):
    """Build a benchmark from a :class:`BenchmarkSpec` or a plain dict."""
    if isinstance(spec, dict):
        spec = BenchmarkSpec(**spec)
    n = spec.n if spec.n is not None else DEFAULT_RESOLUTION[spec.case]
    if spec.case == "advection1d":
        return build_advection_1d(n, spec.ic)
    return CASES[spec.case](n)
