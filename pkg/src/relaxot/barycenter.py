"""
Regularized relaxed transport barycenters by block-coordinate descent.

The barycenter ``X`` of clouds ``X^r`` with weights ``rho_r`` minimizes

.. math::
    E_\\rho(X) = \\sum_r \\rho_r D(X^r, X), \\qquad
    D(X^r, X) = \\min_{\\Sigma \\in D_k} \\langle C_{X^r, X}, \\Sigma \\rangle
        + \\lambda J(G_{X^r}(X^r - \\Sigma X))

with squared Euclidean costs. Each outer iteration solves the |R| coupling
problems for fixed ``X``, then the ``X`` problem for fixed couplings.
"""

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import cg, LinearOperator

from .geometry import GradientOperator, as_cloud, build_cost_matrix, write_cloud_csv
from .polytope import RelaxationBounds, linear_oracle, write_coupling_csv
from .regularized import (RegularizerSpec, SolveReport, SolverError, energy_asymmetric,
                          frank_wolfe_solve, primal_dual_asymmetric, soft_threshold,
                          tv_lp_solve, SOBOLEV, TV)

ALPHA = 2.0  # barycenter costs are squared distances
TV_LP_MAX_N = 60  # above this the TV coupling problems use primal-dual splitting


@dataclass
class BarycenterProblem:
    """Input clouds, weights and regularization of a barycenter problem.

    Parameters
    ----------
    clouds : list of ndarray, shape (N, d)
    rho : array-like, nonnegative, summing to one
    lam : float
        Regularization weight.
    k : float
        Column cap of the couplings, ``k >= 1``.
    pq : (2, 2) or (1, 1)
    n_neighbors : int
        Neighbours of the graph built on every input cloud.
    """

    clouds: list
    rho: np.ndarray
    lam: float = 0.0
    k: float = 1.0
    pq: tuple = SOBOLEV
    n_neighbors: int = 4
    gradients: list = field(default=None, repr=False)

    def __post_init__(self):
        self.clouds = [as_cloud(X, f"cloud {r}") for r, X in enumerate(self.clouds)]
        if len(self.clouds) < 1:
            raise ValueError("at least one cloud is needed")
        shapes = {X.shape for X in self.clouds}
        if len(shapes) != 1:
            raise ValueError(f"all clouds must share N and d, got shapes {sorted(shapes)}")
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.shape != (len(self.clouds),):
            raise ValueError("one weight per cloud is required")
        if np.any(self.rho < 0) or not np.any(self.rho > 0):
            raise ValueError("weights must be nonnegative with at least one positive")
        if abs(self.rho.sum() - 1) > 1e-9:
            raise ValueError(f"weights must sum to one (sum is {self.rho.sum()})")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.k < 1:
            raise ValueError("the cap k must be >= 1 for D_k to be nonempty")
        self.pq = tuple(self.pq)
        if self.pq not in (SOBOLEV, TV):
            raise ValueError("pq must be (2, 2) or (1, 1)")
        if self.gradients is None:
            self.gradients = [GradientOperator.from_cloud(X, self.n_neighbors) for X in self.clouds]

    @property
    def n_points(self):
        return self.clouds[0].shape[0]

    @property
    def bounds(self):
        return RelaxationBounds.asymmetric(self.n_points, self.k)


@dataclass
class BarycenterState:
    X: np.ndarray
    couplings: list
    energy: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    converged: bool = False
    wall_ms: float = 0.0

    def save(self, out_dir, prefix="barycenter"):
        """Write the barycenter CSV, per-cloud coupling CSVs and the trace JSON."""
        from pathlib import Path
        out = Path(out_dir)
        write_cloud_csv(out / f"{prefix}.csv", self.X)
        for r, S in enumerate(self.couplings):
            if S is not None:
                write_coupling_csv(out / f"{prefix}_coupling_{r}.csv", S)
        with open(out / f"{prefix}_trace.json", "w", encoding="utf-8") as fh:
            json.dump({"energy": [float(e) for e in self.energy], "converged": self.converged,
                       "outer_iters": len(self.energy), "wall_ms": self.wall_ms}, fh, indent=2)


def asymmetric_distance(X_ref, X, G_ref, lam, k, pq=SOBOLEV, init=None, max_iter=2000,
                        tol=1e-6, tv_solver="auto"):
    """Asymmetric regularized distance from ``X_ref`` to ``X`` over ``D_k``.

    Parameters
    ----------
    X_ref, X : ndarray, shape (N, d)
    G_ref : GradientOperator
        Graph gradient on ``X_ref``.
    lam : float
    k : float
        Column cap, ``k >= 1``.
    pq : (2, 2) or (1, 1)
    init : ndarray, optional
        Feasible starting coupling for Frank-Wolfe (Sobolev case).
    tv_solver : {"auto", "lp", "pd"}
        TV case: exact linear program or primal-dual splitting; ``auto``
        picks the LP for small N.

    Returns
    -------
    D : float
    Sigma : ndarray, shape (N, N)
    report : SolveReport
    """
    X_ref = as_cloud(X_ref, "X_ref")
    X = as_cloud(X, "X")
    if X_ref.shape != X.shape:
        raise ValueError(f"shape mismatch: {X_ref.shape} vs {X.shape}")
    if k < 1:
        raise ValueError("the cap k must be >= 1 for D_k to be nonempty")
    N = X.shape[0]
    C = build_cost_matrix(X_ref, X, ALPHA)
    bounds = RelaxationBounds.asymmetric(N, k)
    pq = tuple(pq)
    if lam == 0:
        t0 = time.perf_counter()
        Sigma = linear_oracle(C, bounds)
        report = SolveReport(energy=[float(np.sum(C * Sigma))], gap=0.0, converged=True,
                             solver="flow", wall_ms=1e3 * (time.perf_counter() - t0))
    elif pq == SOBOLEV:
        # lam * ||.||^2 is the (lam_x / 2) * ||.||^2 term with lam_x = 2 lam
        spec = RegularizerSpec.sobolev(2 * lam, 0.0)
        Sigma, report = frank_wolfe_solve(X_ref, X, C, bounds, G_ref, G_ref, spec,
                                          max_iter=max_iter, tol=tol, init=init)
    elif pq == TV:
        use_lp = tv_solver == "lp" or (tv_solver == "auto" and N <= TV_LP_MAX_N)
        if use_lp:
            Sigma, report = tv_lp_solve(X_ref, X, C, bounds, G_ref, G_ref, RegularizerSpec.tv(lam, 0.0))
        else:
            Sigma, report = primal_dual_asymmetric(X_ref, X, C, k, G_ref, lam, "J1")
    else:
        raise ValueError("pq must be (2, 2) or (1, 1)")
    D = energy_asymmetric(Sigma, X_ref, X, C, G_ref, lam, pq)
    return D, Sigma, report


def barycenter_energy(problem: BarycenterProblem, X, couplings):
    """Joint energy ``sum_r rho_r (<C_r, S_r> + lam J(G_r (X^r - S_r X)))``."""
    e = 0.0
    for r, (Xr, G, S) in enumerate(zip(problem.clouds, problem.gradients, couplings)):
        if problem.rho[r] == 0:
            continue
        C = build_cost_matrix(Xr, X, ALPHA)
        e += problem.rho[r] * energy_asymmetric(S, Xr, X, C, G, problem.lam, problem.pq)
    return e


def sigma_update(state: BarycenterState, problem: BarycenterProblem, max_iter=2000, tol=1e-6):
    """Re-solve every coupling for the current barycenter ``state.X``.

    Couplings of clouds with zero weight are left as ``None``. Frank-Wolfe
    starts from the previous coupling, so the joint energy cannot increase.
    """
    couplings, reports = [], []
    for r, (Xr, G) in enumerate(zip(problem.clouds, problem.gradients)):
        if problem.rho[r] == 0:
            couplings.append(None)
            continue
        init = state.couplings[r] if state.couplings else None
        try:
            _, S, rep = asymmetric_distance(Xr, state.X, G, problem.lam, problem.k, problem.pq,
                                            init=init, max_iter=max_iter, tol=tol)
        except SolverError as err:
            raise SolverError(f"coupling update for cloud {r} failed: {err}", err.report) from err
        couplings.append(S)
        reports.append(rep)
    state.couplings = couplings
    state.reports.append(reports)
    return couplings


def _x_system(problem, couplings):
    # grad H(X) = 2 (A X - B)
    N, d = problem.clouds[0].shape
    A = np.zeros((N, N))
    B = np.zeros((N, d))
    for r, (Xr, G, S) in enumerate(zip(problem.clouds, problem.gradients, couplings)):
        rho = problem.rho[r]
        if rho == 0:
            continue
        c = S.sum(0)
        A[np.diag_indices(N)] += rho * c
        B += rho * (S.T @ Xr)
        if problem.lam:
            LS = G.laplacian @ S
            A += rho * problem.lam * (S.T @ LS)
            B += rho * problem.lam * (S.T @ (G.laplacian @ Xr))
    return A, B


def x_gradient_sobolev(problem, X, couplings):
    """Gradient in ``X`` of the Sobolev barycenter energy for fixed couplings."""
    A, B = _x_system(problem, couplings)
    return 2 * (A @ X - B)


def x_update_sobolev(state: BarycenterState, problem: BarycenterProblem):
    """Exact minimizer in ``X`` of the Sobolev energy for fixed couplings.

    Solves the normal equations ``A X = B`` with
    ``A = sum_r rho_r (diag(c_r) + lam S_r^T L_r S_r)``,
    ``B = sum_r rho_r (S_r^T X^r + lam S_r^T L_r X^r)``, where ``c_r`` are the
    column sums of ``S_r`` and ``L_r = G_r^T G_r``. Directions in the null
    space of ``A`` (points that receive no mass) keep their current value.
    """
    if problem.pq != SOBOLEV:
        raise ValueError("x_update_sobolev needs pq = (2, 2)")
    X0 = state.X
    N, d = X0.shape
    A, B = _x_system(problem, state.couplings)
    R0 = B - A @ X0
    if not np.all(np.isfinite(A)):
        raise SolverError("barycenter system has non-finite entries")
    if N <= 500:
        w, V = linalg.eigh(A)
        if w[0] < -1e-8 * max(1.0, w[-1]):
            raise SolverError(f"barycenter system is indefinite (eigenvalues {w[0]:.3g} .. {w[-1]:.3g})")
        keep = w > 1e-12 * max(1.0, w[-1])
        dX = V[:, keep] @ ((V[:, keep].T @ R0) / w[keep, None])
    else:
        diag = np.maximum(np.diag(A), 1e-300)
        M = LinearOperator((N, N), matvec=lambda v: v / diag)
        dX = np.zeros_like(X0)
        for j in range(d):
            sol, info = cg(A, R0[:, j], rtol=1e-10, atol=0.0, maxiter=10 * N * d, M=M)
            if info < 0:
                raise SolverError("conjugate gradient breakdown on the barycenter system")
            dX[:, j] = sol
    X = X0 + dX
    state.X = X
    return X


def _tv_x_objective(problem, X, couplings):
    return barycenter_energy(problem, X, couplings)


def x_update_tv(state: BarycenterState, problem: BarycenterProblem, max_iter=20000, tol=1e-8,
                theta=1.0, patience=100):
    """Primal-dual minimization in ``X`` of the TV energy for fixed couplings.

    The objective is ``H(X) + sum_r F_r(B_r X)`` with ``B_r = G_r S_r``,
    ``H`` the quadratic transport term and
    ``F_r(V) = lam rho_r |G_r X^r - V|_1``. The prox of ``tau H`` is
    diagonal: ``(Z + 2 tau sum_r rho_r S_r^T X^r) / (1 + 2 tau sum_r rho_r c_r)``.
    The incoming ``X`` is kept if the iterations do not improve on it.

    Returns
    -------
    X : ndarray
    report : SolveReport
    """
    if problem.pq != TV:
        raise ValueError("x_update_tv needs pq = (1, 1)")
    t0 = time.perf_counter()
    X_in = state.X
    active = [r for r in range(len(problem.clouds)) if problem.rho[r] > 0]
    couplings = state.couplings
    Bs = [(problem.gradients[r].matrix @ couplings[r]) for r in active]
    As = [problem.gradients[r].matrix @ problem.clouds[r] for r in active]
    rhos = [problem.rho[r] for r in active]
    diag = sum(rho * couplings[r].sum(0) for rho, r in zip(rhos, active))
    lin = sum(rho * (couplings[r].T @ problem.clouds[r]) for rho, r in zip(rhos, active))
    report = SolveReport(solver="primal-dual-x")
    lam = problem.lam

    KtK = sum(B.T @ B for B in Bs)
    K_norm = float(np.sqrt(max(np.linalg.eigvalsh(KtK)[-1], 1e-300)))
    mu = tau = 0.99 / K_norm
    X = X_in.copy()
    X_bar = X.copy()
    duals = [np.zeros((B.shape[0], X.shape[1])) for B in Bs]
    e_in = _tv_x_objective(problem, X_in, couplings)
    report.energy.append(e_in)
    rising, last_res, res = 0, np.inf, np.inf
    for it in range(1, max_iter + 1):
        new_duals = []
        for B, a, rho, Yd in zip(Bs, As, rhos, duals):
            W = Yd + mu * (B @ X_bar)
            Z = W / mu
            new_duals.append(W - mu * (a + soft_threshold(Z - a, lam * rho / mu)))
        Zp = X - tau * sum(B.T @ Yd for B, Yd in zip(Bs, new_duals))
        X_new = (Zp + 2 * tau * lin) / (1 + 2 * tau * diag)[:, None]
        X_bar = X_new + theta * (X_new - X)
        if it % 10 == 0 or it == max_iter:
            dX = X - X_new
            p_res = np.sqrt(np.sum((dX / tau - sum(B.T @ (Yo - Yn) for B, Yo, Yn in zip(Bs, duals, new_duals))) ** 2))
            d_res = np.sqrt(sum(np.sum(((Yo - Yn) / mu - B @ dX) ** 2) for B, Yo, Yn in zip(Bs, duals, new_duals)))
            res = max(p_res, d_res)
            e = _tv_x_objective(problem, X_new, couplings)
            if e > report.energy[-1] and res > last_res:
                rising += 10
            else:
                rising = 0
            report.energy.append(e)
            last_res = res
            if rising >= patience and res > 1e3 * (1 + abs(e_in)):
                report.iters, report.gap = it, res
                raise SolverError("primal-dual iterations on X diverge", report)
            if res <= tol:
                X, duals = X_new, new_duals
                report.converged = True
                break
        X, duals = X_new, new_duals
    report.iters, report.gap = it, float(res)
    e_out = _tv_x_objective(problem, X, couplings)
    if e_out > e_in:
        X = X_in
        e_out = e_in
    report.energy.append(e_out)
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    state.X = X
    return X, report


def bcd_barycenter(problem: BarycenterProblem, init=None, outer_iters=50, tol=1e-6,
                   inner_max_iter=2000, inner_tol=1e-6, callback=None):
    """Block-coordinate descent for the regularized relaxed barycenter.

    Parameters
    ----------
    problem : BarycenterProblem
    init : ndarray, shape (N, d), optional
        Starting barycenter; defaults to the cloud with the largest weight.
    outer_iters : int
    tol : float
        Stop when the relative energy decrease over one outer iteration is
        below ``tol``.
    inner_max_iter, inner_tol : int, float
        Frank-Wolfe budget of each coupling update.

    Returns
    -------
    BarycenterState
        ``energy`` holds the joint energy after every outer iteration.
    """
    t0 = time.perf_counter()
    if init is None:
        X0 = problem.clouds[int(np.argmax(problem.rho))].copy()
    else:
        X0 = as_cloud(init, "init").copy()
        if X0.shape != problem.clouds[0].shape:
            raise ValueError("init must have the clouds' shape")
    state = BarycenterState(X=X0, couplings=[])
    prev = np.inf
    for it in range(outer_iters):
        sigma_update(state, problem, max_iter=inner_max_iter, tol=inner_tol)
        if problem.pq == SOBOLEV:
            x_update_sobolev(state, problem)
        else:
            _, rep = x_update_tv(state, problem)
            state.reports[-1].append(rep)
        e = barycenter_energy(problem, state.X, state.couplings)
        if problem.pq == TV and e > prev + 1e-8 * max(1.0, abs(prev)):
            warnings.warn(f"TV barycenter energy rose at outer iteration {it} ({prev:.6g} -> {e:.6g})")
        state.energy.append(e)
        if callback is not None:
            callback(it, state)
        if np.isfinite(prev) and prev - e <= tol * max(abs(prev), 1e-300):
            state.converged = True
            break
        if e == 0:
            state.converged = True
            break
        prev = e
    state.wall_ms = 1e3 * (time.perf_counter() - t0)
    return state
