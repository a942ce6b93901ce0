import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tdrom.exceptions import ShapeError, ValidationError
from tdrom.model import (AffineTerm, FullOrderModel, ParameterDomain, TimeGrid, assemble_A, eval_flux,
                         eval_flux_components)
from tdrom.testcases import build_advdiff_2d, build_burgers_1d, diffusion_coefficient, rotation_amplitude


def test_time_grid_nodes():
    g = TimeGrid(0.2, 400)
    t = g.nodes
    assert t[0] == 0.0 and t[-1] == pytest.approx(0.2, abs=1e-15)
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(np.diff(t), g.dt, rtol=1e-10)
    assert g.t(400) == pytest.approx(0.2)
    with pytest.raises(IndexError):
        g.t(401)


@pytest.mark.parametrize("T,K", [(0.0, 10), (-1.0, 10), (1.0, 0), (1.0, 2.5)])
def test_time_grid_rejects_bad_input(T, K):
    with pytest.raises(ValidationError):
        TimeGrid(T, K)


def test_parameter_domain_training_points_within_bounds():
    dom = ParameterDomain([[-1.0, 1.0], [0.0, 2.0]])
    with pytest.raises(ValidationError):
        dom.with_training_set([[0.0, 3.0]])
    pts = dom.sample(40, 5)
    assert pts.shape == (40, 2)
    assert all(dom.contains(p) for p in pts)
    np.testing.assert_array_equal(pts, dom.sample(40, 5))
    d = dom.with_training_set(pts)
    for a in pts[:6]:
        assert d.distance(a, a) == 0.0
        for b in pts[:6]:
            assert d.distance(a, b) == d.distance(b, a)


def _tiny_model(thetas, ops, grid=None):
    grid = grid or TimeGrid(1.0, 4)
    terms = [AffineTerm(M, (lambda c: lambda t, xi: c)(c)) for c, M in zip(thetas, ops)]
    return FullOrderModel(dim=ops[0].shape[0], grid=grid, affine_A=terms, initial_state=lambda xi: np.ones(3))


def test_assemble_zero_coefficients_gives_zero(rng):
    ops = [rng.standard_normal((3, 3)) for _ in range(2)]
    A = assemble_A(_tiny_model([0.0, 0.0], ops), 2, None)
    assert abs(A).sum() == 0.0


def test_assemble_single_unit_term_is_verbatim(rng):
    M = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(assemble_A(_tiny_model([1.0], [M]), 0, None).toarray(), M)


def test_assemble_index_out_of_range(rng):
    model = _tiny_model([1.0], [np.eye(3)])
    with pytest.raises(IndexError):
        assemble_A(model, 5, None)


def _direct_advdiff_operators(n_side):
    """5-point Laplacian and centered rotational convection, built entry by entry."""
    m = n_side - 2
    h = 1.0 / (n_side - 1)
    d = m * m
    AD = np.zeros((d, d))
    AC = np.zeros((d, d))
    for j in range(m):
        for i in range(m):
            p = j * m + i
            x1, x2 = (i + 1) * h, (j + 1) * h
            b1, b2 = x2 - 0.5, 0.5 - x1
            AD[p, p] = -4.0 / h**2
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < m and 0 <= jj < m:
                    AD[p, jj * m + ii] = 1.0 / h**2
            if i + 1 < m:
                AC[p, p + 1] -= b1 / (2 * h)
            if i - 1 >= 0:
                AC[p, p - 1] += b1 / (2 * h)
            if j + 1 < m:
                AC[p, p + m] -= b2 / (2 * h)
            if j - 1 >= 0:
                AC[p, p - m] += b2 / (2 * h)
    return AD, AC


def test_assemble_advdiff_matches_direct_assembly():
    model, _, _ = build_advdiff_2d(n_side=7)
    xi = np.array([0.2, 0.5])
    AD, AC = _direct_advdiff_operators(7)
    expected = diffusion_coefficient(xi) * AD + rotation_amplitude(xi) * AC
    np.testing.assert_allclose(assemble_A(model, 3, xi).toarray(), expected, rtol=1e-13, atol=1e-10)


def test_eval_flux_zero_state(advdiff):
    model, _, _ = advdiff
    np.testing.assert_array_equal(eval_flux(model, np.zeros(model.dim), 0, [0.1, 0.2]), 0.0)


def test_eval_flux_shape_error(advection):
    model, _, _ = advection
    with pytest.raises(ShapeError):
        eval_flux(model, np.zeros(model.dim + 1), 0, [0.0])


def test_eval_flux_advection_unit_vector_gives_column(advection):
    model, _, _ = advection
    d, dx = model.dim, model.info["dx"]
    xi = np.array([0.65])
    a = 1.0 + 0.5 * 0.65
    for j in (0, 7, d - 1):
        e = np.zeros(d)
        e[j] = 1.0
        col = np.zeros(d)
        # -a (u_i - u_{i-1}) / dx with periodic wrap: column j has -a/dx at j and +a/dx at j+1
        col[j] = -a / dx
        col[(j + 1) % d] = a / dx
        np.testing.assert_allclose(eval_flux(model, e, 0, xi), col, rtol=1e-14)


def test_burgers_constant_state_hand_stencil():
    model, _, _ = build_burgers_1d(n=20)
    dx = model.info["dx"]
    c = 0.7
    u = np.full(model.dim, c)
    h = model.h(u, 0, [0.03])
    Cu = np.zeros(model.dim)
    Cu[0] = c / (2 * dx)  # (u_1 - 0) / 2dx with the Dirichlet value 0 on the left
    Cu[-1] = -c / (2 * dx)
    np.testing.assert_allclose(h, -c * Cu, rtol=1e-14, atol=1e-12)


def test_flux_components_full_and_subset(burgers, rng):
    model, _, _ = burgers
    u = rng.standard_normal(model.dim)
    full = model.h(u, 3, [0.02])
    np.testing.assert_array_equal(eval_flux_components(model, u, np.arange(model.dim), 3, [0.02]), full)
    np.testing.assert_array_equal(eval_flux_components(model, u, [5, 17], 3, [0.02]), full[[5, 17]])


def test_flux_components_linear_model_is_zero(advection, rng):
    model, _, _ = advection
    out = eval_flux_components(model, rng.standard_normal(model.dim), [1, 4, 9], 0, [0.1])
    np.testing.assert_array_equal(out, np.zeros(3))


@pytest.mark.parametrize("bad", [[1, 1], [-1], [10_000]])
def test_flux_components_bad_indices(burgers, bad):
    model, _, _ = burgers
    with pytest.raises(IndexError):
        eval_flux_components(model, np.zeros(model.dim), bad, 0, [0.02])


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, 400), x1=st.floats(-1, 1), x2=st.floats(-1, 1), seed=st.integers(0, 2**31))
def test_affine_consistency(advdiff, k, x1, x2, seed):
    model, _, _ = advdiff
    u = np.random.default_rng(seed).standard_normal(model.dim)
    xi = np.array([x1, x2])
    direct = sum(th * (Ai @ u) for th, Ai in zip(model.theta_A(k, xi), model.A_terms(k)))
    np.testing.assert_array_equal(eval_flux(model, u, k, xi), assemble_A(model, k, xi) @ u)
    np.testing.assert_allclose(assemble_A(model, k, xi) @ u, direct, rtol=1e-13, atol=1e-10)


def test_burgers_gradient_finite_differences(burgers, rng):
    model, _, _ = burgers
    eps = 1e-6
    for _ in range(10):
        u = rng.standard_normal(model.dim)
        J = model.grad_h(u, 0, [0.02]).toarray()
        F = np.empty_like(J)
        for j in range(model.dim):
            e = np.zeros(model.dim)
            e[j] = eps
            F[:, j] = (model.h(u + e, 0, [0.02]) - model.h(u - e, 0, [0.02])) / (2 * eps)
        assert np.linalg.norm(F - J) <= 1e-5 * np.linalg.norm(J)


def test_linear_model_has_zero_flux_and_gradient(advection, rng):
    model, _, _ = advection
    u = rng.standard_normal(model.dim)
    assert not model.nonlinear
    np.testing.assert_array_equal(model.h(u, 1, [0.3]), 0.0)
    assert sp.issparse(model.grad_h(u, 1, [0.3])) and model.grad_h(u, 1, [0.3]).nnz == 0
