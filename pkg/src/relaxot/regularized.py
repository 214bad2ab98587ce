"""
Regularized relaxed transport: energies and solvers.

Two regularizers are supported on the graph gradient of the displacement
field ``Delta_{X,Y}(Sigma) = diag(Sigma 1) X - Sigma Y``:

* ``(p, q) = (2, 2)``, graph Sobolev, solved with Frank-Wolfe;
* ``(p, q) = (1, 1)``, anisotropic graph TV, solved as a linear program
  (symmetric problem) or with primal-dual splitting (asymmetric problem).
"""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .geometry import GradientOperator
from .polytope import (RelaxationBounds, LinearOracle, check_feasible, linear_oracle,
                       project_simplex, project_capped_rows, project_asymmetric)

SOBOLEV = (2, 2)
TV = (1, 1)


class SolverError(RuntimeError):
    """A solver failed to converge or diverged; carries the partial report."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class RegularizerSpec:
    p: int = 2
    q: int = 2
    lambda_x: float = 0.0
    lambda_y: float = 0.0

    def __post_init__(self):
        if (self.p, self.q) not in (SOBOLEV, TV):
            raise ValueError(f"(p, q) = ({self.p}, {self.q}) is not supported; use (2, 2) or (1, 1)")
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ValueError("regularization weights must be nonnegative")

    @classmethod
    def sobolev(cls, lambda_x=0.0, lambda_y=None):
        return cls(2, 2, lambda_x, lambda_x if lambda_y is None else lambda_y)

    @classmethod
    def tv(cls, lambda_x=0.0, lambda_y=None):
        return cls(1, 1, lambda_x, lambda_x if lambda_y is None else lambda_y)

    @property
    def pq(self):
        return (self.p, self.q)


@dataclass
class SolveReport:
    energy: list = field(default_factory=list)
    gap: float = float("nan")
    iters: int = 0
    wall_ms: float = 0.0
    converged: bool = False
    solver: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps({"energy": [float(e) for e in self.energy], "gap": float(self.gap),
                           "iters": int(self.iters), "wall_ms": float(self.wall_ms),
                           "converged": bool(self.converged), "solver": self.solver}, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


@dataclass
class TransferMap:
    """Anchors X and their images Z; ``T(X_i) = Z_i``."""

    anchors: np.ndarray
    images: np.ndarray


# --- displacement operators -------------------------------------------------

def delta(Sigma, X, Y):
    r"""Displacement :math:`\Delta_{X,Y}(\Sigma) = \mathrm{diag}(\Sigma 1) X - \Sigma Y`."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (X.shape[0], Y.shape[0]) or X.shape[1] != Y.shape[1]:
        raise ValueError(f"shape mismatch: Sigma {Sigma.shape}, X {X.shape}, Y {Y.shape}")
    return Sigma.sum(1)[:, None] * X - Sigma @ Y


def delta_adjoint(U, X, Y):
    """Adjoint of ``Sigma -> delta(Sigma, X, Y)``: ``diag(U X^T) 1^T - U Y^T``."""
    return np.einsum("ik,ik->i", U, X)[:, None] - U @ Y.T


def _gamma_x(Sigma, X, Y, gx):
    return gx.apply(delta(Sigma, X, Y))


def _gamma_y(Sigma, X, Y, gy):
    return gy.apply(delta(Sigma.T, Y, X))


# --- Sobolev energy (Frank-Wolfe) -------------------------------------------

def energy_sobolev(Sigma, X, Y, C, gx, gy, spec: RegularizerSpec):
    r"""Symmetric Sobolev energy

    .. math::
        \langle C, \Sigma \rangle + \frac{\lambda_X}{2} \|G_X \Delta_{X,Y}(\Sigma)\|^2
        + \frac{\lambda_Y}{2} \|G_Y \Delta_{Y,X}(\Sigma^T)\|^2
    """
    e = float(np.sum(C * Sigma))
    if spec.lambda_x:
        e += 0.5 * spec.lambda_x * float(np.sum(_gamma_x(Sigma, X, Y, gx) ** 2))
    if spec.lambda_y:
        e += 0.5 * spec.lambda_y * float(np.sum(_gamma_y(Sigma, X, Y, gy) ** 2))
    return e


def grad_sobolev(Sigma, X, Y, C, gx, gy, spec: RegularizerSpec):
    """Gradient of :func:`energy_sobolev` with respect to Sigma."""
    g = np.array(C, dtype=float)
    if spec.lambda_x:
        U = gx.adjoint(_gamma_x(Sigma, X, Y, gx))
        g += spec.lambda_x * delta_adjoint(U, X, Y)
    if spec.lambda_y:
        U = gy.adjoint(_gamma_y(Sigma, X, Y, gy))
        g += spec.lambda_y * delta_adjoint(U, Y, X).T
    return g


def _curvature(D, X, Y, gx, gy, spec):
    # second derivative of the energy along direction D
    c = 0.0
    if spec.lambda_x:
        c += spec.lambda_x * float(np.sum(_gamma_x(D, X, Y, gx) ** 2))
    if spec.lambda_y:
        c += spec.lambda_y * float(np.sum(_gamma_y(D, X, Y, gy) ** 2))
    return c


def line_search_step(Sigma, direction, grad, X, Y, gx, gy, spec):
    """Exact minimizer over [0, 1] of the energy along ``Sigma + t * direction``."""
    slope = float(np.sum(grad * direction))
    curv = _curvature(direction, X, Y, gx, gy, spec)
    if slope >= 0:
        return 0.0
    if curv <= 0:
        return 1.0
    return min(1.0, -slope / curv)


def frank_wolfe_solve(X, Y, C, bounds: RelaxationBounds, gx, gy, spec: RegularizerSpec,
                      max_iter=2000, tol=1e-6, init=None, callback=None):
    """Frank-Wolfe for the symmetric Sobolev-regularized problem.

    Parameters
    ----------
    X, Y : ndarray, shape (N, d)
    C : ndarray, shape (N, N)
        Cost matrix between X and Y.
    bounds : RelaxationBounds
    gx, gy : GradientOperator
        Graph gradients on X and Y.
    spec : RegularizerSpec
        Must be the Sobolev case ``(2, 2)``.
    max_iter : int
    tol : float
        Stop when the Frank-Wolfe gap is below ``tol * (1 + |f|)``.
    init : ndarray, optional
        Feasible starting coupling; defaults to the linear oracle on C.

    Returns
    -------
    Sigma : ndarray, shape (N, N)
    report : SolveReport
    """
    if spec.pq != SOBOLEV:
        raise ValueError("frank_wolfe_solve handles the Sobolev regularizer only")
    feas = check_feasible(bounds)
    if not feas:
        raise ValueError("infeasible relaxation bounds: " + "; ".join(feas.violations))
    t0 = time.perf_counter()
    report = SolveReport(solver="frank-wolfe")
    if spec.lambda_x == 0 and spec.lambda_y == 0:
        Sigma = linear_oracle(C, bounds)
        report.energy = [float(np.sum(C * Sigma))]
        report.gap, report.converged = 0.0, True
        report.wall_ms = 1e3 * (time.perf_counter() - t0)
        return Sigma, report

    # the oracle is re-solved from the previous basis: gradients change slowly
    oracle = LinearOracle(bounds)
    Sigma = oracle(C) if init is None else np.array(init, dtype=float)
    lx, ly = spec.lambda_x, spec.lambda_y
    # graph gradients of the displacements, updated along each step by linearity
    Ux = _gamma_x(Sigma, X, Y, gx) if lx else None
    Uy = _gamma_y(Sigma, X, Y, gy) if ly else None

    def energy(S, Ux, Uy):
        e = float(np.sum(C * S))
        if lx:
            e += 0.5 * lx * float(np.sum(Ux ** 2))
        if ly:
            e += 0.5 * ly * float(np.sum(Uy ** 2))
        return e

    f = energy(Sigma, Ux, Uy)
    report.energy.append(f)
    for it in range(max_iter + 1):
        g = np.array(C, dtype=float)
        if lx:
            g += lx * delta_adjoint(gx.adjoint(Ux), X, Y)
        if ly:
            g += ly * delta_adjoint(gy.adjoint(Uy), Y, X).T
        S = oracle(g)
        D = S - Sigma
        slope = float(np.sum(g * D))
        gap = -slope
        report.gap = gap
        report.iters = it
        if gap <= tol * (1 + abs(f)):
            report.converged = True
            break
        if it == max_iter:
            break
        Dx = _gamma_x(D, X, Y, gx) if lx else None
        Dy = _gamma_y(D, X, Y, gy) if ly else None
        curv = (lx * float(np.sum(Dx ** 2)) if lx else 0.0) + (ly * float(np.sum(Dy ** 2)) if ly else 0.0)
        step = 1.0 if curv <= 0 else min(1.0, -slope / curv)
        if step <= 0:
            report.converged = True
            break
        Sigma = Sigma + step * D
        if lx:
            Ux = Ux + step * Dx
        if ly:
            Uy = Uy + step * Dy
        if it % 100 == 99:
            # refresh to keep rounding from accumulating
            Ux = _gamma_x(Sigma, X, Y, gx) if lx else None
            Uy = _gamma_y(Sigma, X, Y, gy) if ly else None
        f = energy(Sigma, Ux, Uy)
        report.energy.append(f)
        if callback is not None:
            callback(it, Sigma, f, gap)
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return Sigma, report


# --- anisotropic TV ---------------------------------------------------------

def _tv_term(Sigma, X, Y, gx, gy, spec):
    e = 0.0
    if spec.lambda_x:
        e += spec.lambda_x * float(np.abs(_gamma_x(Sigma, X, Y, gx)).sum())
    if spec.lambda_y:
        e += spec.lambda_y * float(np.abs(_gamma_y(Sigma, X, Y, gy)).sum())
    return e


def energy_tv(Sigma, X, Y, C, gx, gy, spec: RegularizerSpec):
    """Symmetric anisotropic-TV energy ``<C, S> + lx |G_X D_XY| + ly |G_Y D_YX|``."""
    return float(np.sum(C * Sigma)) + _tv_term(Sigma, X, Y, gx, gy, spec)


def _displacement_matrix(X, Y):
    """Sparse map ``vec(Sigma) -> vec(Sigma Y - diag(Sigma 1) X)``, row-major vec."""
    N, d = X.shape
    M = Y.shape[0]
    # row (i, c), column i*M + l, value Y[l, c] - X[i, c]
    rows = np.repeat(np.arange(N * d), M)
    i = rows // d
    c = rows % d
    l = np.tile(np.arange(M), N * d)
    vals = Y[l, c] - X[i, c]
    return sparse.csr_matrix((vals, (rows, i * M + l)), shape=(N * d, N * M))


def tv_lp_solve(X, Y, C, bounds: RelaxationBounds, gx, gy, spec: RegularizerSpec, tol=1e-9):
    """Solve the symmetric anisotropic-TV problem as a linear program.

    Auxiliary variables ``U_X``, ``U_Y`` bound the absolute graph gradients,
    so the optimum of the LP equals the TV energy minimum. The LP is solved
    with the HiGHS simplex.

    Returns
    -------
    Sigma : ndarray, shape (N, N)
    report : SolveReport
        ``gap`` is the relative primal-dual gap of the LP solution.
    """
    if spec.pq != TV:
        raise ValueError("tv_lp_solve handles the (1, 1) regularizer only")
    feas = check_feasible(bounds)
    if not feas:
        raise ValueError("infeasible relaxation bounds: " + "; ".join(feas.violations))
    t0 = time.perf_counter()
    N, d = X.shape
    nS = N * N
    blocks = []
    lams = []
    if spec.lambda_x:
        A = sparse.kron(gx.matrix, sparse.identity(d)) @ _displacement_matrix(X, Y)
        blocks.append(A.tocsr())
        lams.append(spec.lambda_x)
    if spec.lambda_y:
        # the Y-side displacement acts on Sigma^T; permute to row-major vec(Sigma)
        A = sparse.kron(gy.matrix, sparse.identity(d)) @ _displacement_matrix(Y, X)
        perm = (np.arange(nS).reshape(N, N).T).ravel()
        blocks.append(A.tocsc()[:, perm].tocsr())
        lams.append(spec.lambda_y)
    nU = [b.shape[0] for b in blocks]
    nvar = nS + sum(nU)

    c = np.concatenate([C.ravel()] + [np.full(k, lam) for k, lam in zip(nU, lams)])
    ub_rows = []
    offset = nS
    for A, k in zip(blocks, nU):
        I = sparse.identity(k, format="csr")
        Z_left = sparse.csr_matrix((k, offset - nS))
        Z_right = sparse.csr_matrix((k, nvar - offset - k))
        ub_rows.append(sparse.hstack([A, Z_left, -I, Z_right]))
        ub_rows.append(sparse.hstack([-A, Z_left, -I, Z_right]))
        offset += k
    pad = sparse.csr_matrix((N, nvar - nS))
    R = sparse.kron(sparse.identity(N), np.ones((1, N)))  # row sums
    Cs = sparse.kron(np.ones((1, N)), sparse.identity(N))  # column sums
    ub_rows += [sparse.hstack([R, pad]), sparse.hstack([-R, pad]),
                sparse.hstack([Cs, pad]), sparse.hstack([-Cs, pad])]
    b = bounds
    b_ub = np.concatenate([np.zeros(2 * sum(nU)),
                           np.full(N, b.K_x), np.full(N, -b.k_x),
                           np.full(N, b.K_y), np.full(N, -b.k_y)])
    A_ub = sparse.vstack(ub_rows).tocsr()
    A_eq = sparse.hstack([sparse.csr_matrix(np.ones((1, nS))), sparse.csr_matrix((1, nvar - nS))])
    var_bounds = [(0.0, 1.0)] * nS + [(0.0, None)] * (nvar - nS)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[b.mass], bounds=var_bounds,
                  method="highs", options={"primal_feasibility_tolerance": tol,
                                           "dual_feasibility_tolerance": tol})
    report = SolveReport(solver="tv-lp")
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    if res.status != 0:
        raise SolverError(f"TV linear program failed: {res.message}", report)
    Sigma = np.clip(res.x[:nS].reshape(N, N), 0.0, 1.0)
    dual = float(b_ub @ res.ineqlin.marginals) + b.mass * float(res.eqlin.marginals[0])
    dual += float(np.sum(res.upper.marginals[:nS]))
    report.gap = abs(res.fun - dual) / (1 + abs(res.fun))
    report.energy = [float(res.fun)]
    report.iters = int(getattr(res, "nit", 0))
    report.converged = True
    return Sigma, report


# --- asymmetric problem by primal-dual splitting ----------------------------

def energy_asymmetric(Sigma, X, Y, C, gx, lam, pq):
    """``<C, Sigma> + lam * J_{p,q}(G_X Delta_{X,Y}(Sigma))`` with J literal."""
    e = float(np.sum(C * Sigma))
    if lam:
        V = gx.apply(delta(Sigma, X, Y))
        e += lam * (float(np.sum(V ** 2)) if tuple(pq) == SOBOLEV else float(np.abs(V).sum()))
    return e


def soft_threshold(U, t):
    """Entrywise shrinkage ``sign(U) * max(|U| - t, 0)``."""
    return np.sign(U) * np.maximum(np.abs(U) - t, 0.0)


def primal_dual_asymmetric(X, Y, C, k, gx, lam, reg="J1", max_iter=100000, tol=1e-7,
                           theta=1.0, mu=None, tau=None, patience=100, check_every=10,
                           precondition=None):
    r"""Primal-dual splitting for the asymmetric problem over ``D_k``.

    Minimizes :math:`\langle C, \Sigma \rangle + \lambda J(G_X(X - \Sigma Y))`
    over couplings whose rows sum to one and whose column sums are at most
    ``k``. The problem is split as :math:`F(K\Sigma) + H(\Sigma)` with
    :math:`K\Sigma = (\Sigma, G_X \Sigma Y)`, the row-simplex constraint and
    the linear cost in ``H``, the column caps and the regularizer in ``F``.
    The dual proximal step uses Moreau's identity.

    Parameters
    ----------
    reg : {"J1", "J2"}
        ``J1`` is the anisotropic TV ``sum |.|``, ``J2`` the squared norm.
    mu, tau : float, optional
        Dual and primal steps; default ``0.99 / ||K||`` each.
    precondition : bool, optional
        Use diagonal steps, ``1 / sum_j |K_ij|`` on the dual rows and
        ``1 / max_j sum_i |K_ij|`` on the primal rows of ``Sigma``. The two
        blocks of ``K`` differ in scale by the graph weights, and scalar
        steps then crawl. Default: on unless ``mu`` or ``tau`` is given.
    patience : int
        Number of consecutive energy increases (with a growing residual)
        treated as divergence.

    Returns
    -------
    Sigma : ndarray
        Final coupling, projected onto ``D_k``.
    report : SolveReport
        ``gap`` holds the terminal primal-dual residual.
    """
    if reg not in ("J1", "J2"):
        raise ValueError("reg must be 'J1' or 'J2'")
    if k < 1:
        raise ValueError("the cap k must be >= 1 for D_k to be nonempty")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    N = X.shape[0]
    t0 = time.perf_counter()
    G = gx.matrix
    if precondition is None:
        precondition = mu is None and tau is None
    if precondition:
        # |K| row and column sums; without regularization the G block is
        # inert and left out
        absG = abs(G)
        a = np.asarray(absG.sum(0)).ravel() if lam else np.zeros(N)
        gy = np.outer(np.asarray(absG.sum(1)).ravel(), np.abs(Y).sum(0))
        tau = (0.99 / (1.0 + a * np.abs(Y).sum(1).max()))[:, None]
        mu_A = 0.99
        mu = 1.0 / np.maximum(gy, 1e-12 * max(float(gy.max()), 1e-300))
    else:
        K_norm = np.sqrt(1.0 + gx.norm_sq * float(np.linalg.eigvalsh(Y.T @ Y)[-1]))
        mu = 0.99 / K_norm if mu is None else mu
        tau = 0.99 / K_norm if tau is None else tau
        if mu * tau * K_norm ** 2 >= 1:
            raise ValueError(f"step sizes violate mu * tau * ||K||^2 < 1 ({mu * tau * K_norm ** 2:.4g})")
        mu_A = mu
    if G.shape[0] * G.shape[1] <= 400_000:
        G = G.toarray()  # dense products are cheaper at this size
    GT = G.T.copy() if isinstance(G, np.ndarray) else G.T.tocsr()
    GX = G @ X
    pq = TV if reg == "J1" else SOBOLEV

    def prox_reg(V, t):
        # prox of t * lam * J at V
        if reg == "J1":
            return soft_threshold(V, t * lam)
        return V / (1 + 2 * t * lam)

    Sigma = np.full((N, N), 1.0 / N)
    Sigma_bar = Sigma.copy()
    A = np.zeros((N, N))          # dual of the column-cap block
    B = np.zeros((G.shape[0], X.shape[1]))  # dual of the regularizer block
    report = SolveReport(solver="primal-dual")
    rising, last_res, res = 0, np.inf, np.inf
    for it in range(1, max_iter + 1):
        # dual ascent with Moreau: prox_{mu F*}(v) = v - mu prox_{F/mu}(v / mu)
        VA = A + mu_A * Sigma_bar
        A_new = VA - mu_A * project_capped_rows((VA / mu_A).T, k).T
        if lam:
            VB = B + mu * (G @ (Sigma_bar @ Y))
            B_new = VB - mu * (GX + prox_reg(VB / mu - GX, 1.0 / mu))
            step = A_new + GT @ (B_new @ Y.T) + C
        else:
            B_new = B
            step = A_new + C
        # primal descent: prox_{tau H} is the row-simplex projection
        Sigma_new = project_simplex(Sigma - tau * step, 1.0)
        Sigma_bar = Sigma_new + theta * (Sigma_new - Sigma)

        if it % check_every == 0 or it == max_iter:
            dS, dA, dB = Sigma - Sigma_new, A - A_new, B - B_new
            p_res = np.sqrt(np.sum((dS / tau - dA - GT @ (dB @ Y.T)) ** 2))
            d_res = np.sqrt(np.sum((dA / mu_A - dS) ** 2) + np.sum((dB / mu - G @ dS @ Y) ** 2))
            res = max(p_res, d_res)
            e = energy_asymmetric(Sigma_new, X, Y, C, gx, lam, pq)
            if report.energy and e > report.energy[-1] and res > last_res:
                rising += check_every
            else:
                rising = 0
            report.energy.append(e)
            last_res = res
            if rising >= patience and res > 1e3 * (1 + report.energy[0]):
                Sigma, A, B = Sigma_new, A_new, B_new
                report.iters, report.gap = it, res
                raise SolverError("primal-dual iterations diverge", report)
            if res <= tol:
                report.converged = True
                Sigma, A, B = Sigma_new, A_new, B_new
                break
        Sigma, A, B = Sigma_new, A_new, B_new
    report.iters = it
    report.gap = float(res)
    Sigma = project_asymmetric(Sigma, k)
    report.energy.append(energy_asymmetric(Sigma, X, Y, C, gx, lam, pq))
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return Sigma, report


# --- maps -------------------------------------------------------------------

def extract_map(Sigma, X, Y):
    """Barycentric map ``Z = diag(Sigma 1)^{-1} Sigma Y`` anchored at X."""
    Sigma = np.asarray(Sigma, dtype=float)
    r = Sigma.sum(1)
    if np.any(r <= 1e-12):
        bad = np.flatnonzero(r <= 1e-12)
        raise ValueError(f"rows {bad[:10].tolist()} of the coupling carry no mass; "
                         "a map needs k_X > 0")
    return TransferMap(np.asarray(X, dtype=float), (Sigma @ Y) / r[:, None])
