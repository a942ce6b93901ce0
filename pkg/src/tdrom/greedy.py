"""Greedy construction of reduced spaces.

``t_greedy`` enriches a time-dependent space with whole trajectories;
``pod_greedy`` enriches a time-independent space with the leading POD modes
of the projection error of the selected trajectory. Both pick the training
parameter with the largest global error indicator.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .eim import build_eim
from .estimator import build_lipschitz_table, evaluate_rom, integrate_error_estimate
from .exceptions import RankDeficiencyError, StagnationError, ValidationError
from .integrate import solve_full
from .pod import pod
from .reduced import TimeDependentBasis, build_time_independent_basis, compute_offline_quantities

__all__ = ["GreedyResult", "t_greedy", "pod_greedy", "bootstrap_indicators", "bootstrap_pick"]

log = logging.getLogger("tdrom.greedy")


@dataclass
class GreedyResult:
    """Outcome of a greedy run.

    ``history[i]`` is the maximal training indicator of the space available
    at the start of iteration ``i`` (the value that drove selection ``i``);
    ``final_max_indicator`` is the maximal indicator of the final space.
    """

    method: str
    selected: np.ndarray
    selected_indices: list
    history: list
    dims: list
    final_max_indicator: float
    basis: TimeDependentBasis = None
    offline: object = None
    eim: object = None
    lipschitz: object = None
    n_full_solves: int = 0
    converged: bool = False
    stop_reason: str = ""
    final_indicators: np.ndarray = None
    flux_snapshots: list = field(default_factory=list)

    @property
    def n_iterations(self):
        return len(self.selected_indices)

    @property
    def indicators_by_iteration(self):
        """Max indicator after ``r`` iterations, ``r = 0..n_iterations``."""
        return list(self.history) + [self.final_max_indicator]

    def trajectory(self, i):
        """States of the i-th selected trajectory (T-greedy only), rebuilt from the basis factors."""
        if self.method != "t_greedy" or self.basis is None:
            raise ValueError("trajectories are only kept by T-greedy runs")
        B = self.basis
        grid_states = np.einsum("kdr,kr->kd", B.V, B.coefficients[:, :, i])
        return grid_states


def bootstrap_indicators(model, xis, thetas, time_norm="l2"):
    """Indicator of the empty space ``X_0 = {0}``.

    With ``u_r = 0`` the initial error is ``||u^0||`` and the residual is the
    uncontrolled source ``||h(0, t^k) + g^k||``; no flux constant is available.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    K, dt = model.grid.K, model.grid.dt
    table = build_lipschitz_table(model)
    tA, tg = thetas
    zero = np.zeros(model.dim)
    h0 = np.stack([model.h(zero, k, xis[0]) for k in range(K)]) if model.nonlinear else np.zeros((K, model.dim))
    G = np.stack([np.stack(model.g_terms(k)) for k in range(K)]) if model.Q_g else np.zeros((K, 0, model.dim))
    res = np.empty((len(xis), K))
    for n, xi in enumerate(xis):
        if model.nonlinear and not getattr(model.flux, "parameter_free", True):
            h0 = np.stack([model.h(zero, k, xi) for k in range(K)])
        src = h0 + np.einsum("kq,kqd->kd", tg[n, :K], G)
        res[n] = np.linalg.norm(src, axis=1)
    delta0 = np.array([np.linalg.norm(model.u0(xi)) for xi in xis])
    lip_A = table.lip_A_series(tA)
    est = integrate_error_estimate(delta0, res, lip_A, np.zeros_like(lip_A), dt, time_norm=time_norm)
    return est.global_value


def bootstrap_pick(model, domain):
    """First selection: largest ``||u^0||``, or the training point nearest the domain center."""
    train = domain.training_set
    if not model.parameter_independent_initial_state:
        norms = np.array([np.linalg.norm(model.u0(xi)) for xi in train])
        return int(np.argmax(norms))
    c = domain.center()
    return int(np.argmin([domain.distance(c, xi) for xi in train]))


def _flux_snapshots(model, traj, xi):
    return np.stack([model.h(u, k, xi) for k, u in enumerate(traj.states)], axis=1)


def _check_setup(domain, eps, r_max):
    train = domain.training_set
    if train is None or len(train) == 0:
        raise ValidationError("the parameter domain has no training set")
    if not eps > 0:
        raise ValidationError("greedy tolerance must be positive")
    if r_max is not None and r_max < 0:
        raise ValidationError("iteration cap must be nonnegative")
    return train


def _log(method, it, xi, indicator, dim, solves):
    log.info("method=%s iteration=%d xi=%s indicator=%.6e dim=%d full_solves=%d", method, it,
             ",".join("%.17g" % v for v in np.ravel(xi)), indicator, dim, solves)


def t_greedy(model, domain, eps, r_max=None, eim_eps=1e-10, time_norm="l2", form="consistent",
             on_rank_deficiency="raise"):
    """Greedy construction of a time-dependent reduced space from whole trajectories.

    Parameters
    ----------
    model : FullOrderModel
    domain : ParameterDomain
        Must carry a training set.
    eps : float
        Stop once the maximal indicator drops below ``eps`` (``inf`` stops at once).
    r_max : int, optional
        Iteration cap, at most the training-set size (default).
    eim_eps : float
        EIM training tolerance for nonlinear models.
    on_rank_deficiency : {"raise", "stop"}
        With ``"stop"``, a selected trajectory that adds no direction at any
        step ends the loop (the space has reached its numerical rank) instead
        of raising.

    Raises
    ------
    StagnationError
        The arg max falls on an already selected parameter.
    RankDeficiencyError
        A new trajectory is linearly dependent on the selected ones.
    """
    train = _check_setup(domain, eps, r_max)
    n_train = len(train)
    r_max = n_train if r_max is None else r_max
    if r_max > n_train:
        raise ValidationError(f"r_max={r_max} exceeds the training-set size {n_train}")
    thetas = model.theta_tables(train)
    table = build_lipschitz_table(model, metric=domain.metric)
    basis = TimeDependentBasis.empty(model.dim, model.grid, capacity=max(r_max, 1))
    ind = bootstrap_indicators(model, train, thetas, time_norm)
    selected, history, dims, snaps = [], [], [], []
    eim = offline = None
    solves = 0
    stop_reason = ""
    while True:
        mx = float(ind.max())
        if mx < eps or len(selected) >= r_max:
            stop_reason = "tolerance" if mx < eps else "r_max"
            break
        j = bootstrap_pick(model, domain) if not selected else int(np.argmax(ind))
        if j in selected:
            raise StagnationError(
                f"arg max repeats selected parameter index {j} with indicator {mx:.3e} >= {eps:.3e}")
        history.append(mx)
        xi = train[j]
        traj = solve_full(model, xi)
        solves += 1
        try:
            basis.append_trajectory(traj.states)
        except RankDeficiencyError as exc:
            if on_rank_deficiency != "stop":
                raise RankDeficiencyError(f"T-greedy iteration {len(selected) + 1}, parameter index {j}: {exc}",
                                          k=exc.k, index=exc.index) from exc
            log.warning("numerical rank reached at dim=%d; stopping", basis.r)
            history.pop()
            stop_reason = "rank"
            break
        selected.append(j)
        if model.nonlinear:
            snaps.append(_flux_snapshots(model, traj, xi))
            eim = build_eim(np.hstack(snaps), eim_eps)
            table = table.extended(model, traj, xi)
        offline = compute_offline_quantities(basis, model, eim, table)
        _, est = evaluate_rom(offline, model, train, thetas=thetas, form=form, time_norm=time_norm)
        ind = est.global_value
        dims.append(basis.r)
        _log("t_greedy", len(selected), xi, float(ind.max()), basis.r, solves)
    if not selected:
        log.warning("greedy stopped before the first selection; the reduced space is empty")
    return GreedyResult(
        method="t_greedy",
        selected=train[selected] if selected else np.zeros((0, train.shape[1])),
        selected_indices=selected,
        history=history,
        dims=dims,
        final_max_indicator=float(ind.max()),
        basis=basis if selected else None,
        offline=offline,
        eim=eim,
        lipschitz=table,
        n_full_solves=solves,
        converged=float(ind.max()) < eps,
        stop_reason=stop_reason,
        final_indicators=ind,
        flux_snapshots=snaps,
    )


def _orthonormalize_against(Q, X, tol=1e-10):
    """Columns of ``X`` made orthonormal to ``Q`` and to each other; weak ones dropped."""
    out = []
    for x in X.T:
        v = x.copy()
        for _ in range(2):
            if Q.shape[1]:
                v -= Q @ (Q.T @ v)
            for w in out:
                v -= w * (w @ v)
        nv = np.linalg.norm(v)
        if nv > tol * max(np.linalg.norm(x), 1e-300):
            out.append(v / nv)
    return np.column_stack(out) if out else np.zeros((Q.shape[0], 0))


def pod_greedy(model, domain, eps, r_max=None, ell=1, eim_eps=1e-10, time_norm="l2", form="consistent"):
    """Greedy construction of a time-independent space from POD modes of projection errors.

    Parameters
    ----------
    ell : int
        Number of POD modes added per iteration.
    r_max : int, optional
        Iteration cap (default: training-set size). Parameters may be selected repeatedly.

    Raises
    ------
    StagnationError
        The maximal indicator did not improve during ``|training set|``
        consecutive iterations, or no new direction could be added.
    """
    train = _check_setup(domain, eps, r_max)
    if ell < 1:
        raise ValidationError("ell must be at least 1")
    n_train = len(train)
    r_max = n_train if r_max is None else r_max
    grid = model.grid
    thetas = model.theta_tables(train)
    table = build_lipschitz_table(model, metric=domain.metric)
    ind = bootstrap_indicators(model, train, thetas, time_norm)
    modes = np.zeros((model.dim, 0))
    selected, history, dims, snaps, seen = [], [], [], [], []
    eim = offline = basis = None
    solves, best, since_best = 0, np.inf, 0
    weights = np.full(grid.K + 1, grid.dt)
    stop_reason = ""
    while True:
        mx = float(ind.max())
        if mx < eps or len(selected) >= r_max:
            stop_reason = "tolerance" if mx < eps else "r_max"
            break
        if mx < best:
            best, since_best = mx, 0
        else:
            since_best += 1
            if since_best >= n_train:
                raise StagnationError(f"max indicator stuck at {mx:.3e} for {since_best} iterations")
        j = bootstrap_pick(model, domain) if not selected else int(np.argmax(ind))
        history.append(mx)
        xi = train[j]
        traj = solve_full(model, xi)
        solves += 1
        S = traj.states.T
        for _ in range(2):
            S = S - modes @ (modes.T @ S)
        new = _orthonormalize_against(modes, pod(S, weights, n_modes=min(ell, min(S.shape))).modes)
        if new.shape[1] == 0:
            raise StagnationError(f"no new direction from parameter index {j}")
        modes = np.hstack([modes, new])
        selected.append(j)
        basis = build_time_independent_basis(modes, grid)
        if model.nonlinear and j not in seen:
            seen.append(j)
            snaps.append(_flux_snapshots(model, traj, xi))
            eim = build_eim(np.hstack(snaps), eim_eps)
            table = table.extended(model, traj, xi)
        offline = compute_offline_quantities(basis, model, eim, table)
        _, est = evaluate_rom(offline, model, train, thetas=thetas, form=form, time_norm=time_norm)
        ind = est.global_value
        dims.append(basis.r)
        _log("pod_greedy", len(selected), xi, float(ind.max()), basis.r, solves)
    if not selected:
        log.warning("greedy stopped before the first selection; the reduced space is empty")
    return GreedyResult(
        method="pod_greedy",
        selected=train[selected] if selected else np.zeros((0, train.shape[1])),
        selected_indices=selected,
        history=history,
        dims=dims,
        final_max_indicator=float(ind.max()),
        basis=basis,
        offline=offline,
        eim=eim,
        lipschitz=table,
        n_full_solves=solves,
        converged=float(ind.max()) < eps,
        stop_reason=stop_reason,
        final_indicators=ind,
        flux_snapshots=snaps,
    )
