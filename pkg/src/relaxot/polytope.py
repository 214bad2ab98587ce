"""
The relaxed transport polytope: bounds, feasibility, the exact linear
minimization oracle and Euclidean projections.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np
from numba import njit

from ._flow import solve_bipartite_flow
from ._netsimplex import NetworkSimplex

FEAS_TOL = 1e-8
MAX_DENOMINATOR = 10 ** 6


@dataclass(frozen=True)
class RelaxationBounds:
    """Row/column sum bounds ``kappa = (k_x, K_x, k_y, K_y)`` and total mass.

    Couplings live in ``[0, 1]^{n x n}`` with row sums in ``[k_x, K_x]``,
    column sums in ``[k_y, K_y]`` and total mass ``mass``.
    """

    k_x: float
    K_x: float
    k_y: float
    K_y: float
    mass: float
    n: int

    @classmethod
    def from_kappa(cls, kappa, n, mass=None):
        k_x, K_x, k_y, K_y = (float(v) for v in kappa)
        return cls(k_x, K_x, k_y, K_y, float(n if mass is None else mass), int(n))

    @classmethod
    def classic(cls, n):
        """Bistochastic constraints, ``kappa = (1, 1, 1, 1)``, ``M = n``."""
        return cls.from_kappa((1, 1, 1, 1), n)

    @classmethod
    def asymmetric(cls, n, k):
        """The set ``D_k``: rows sum to one, column sums capped by ``k``."""
        return cls.from_kappa((1, 1, 0, k), n)

    @property
    def kappa(self):
        return (self.k_x, self.K_x, self.k_y, self.K_y)

    def transposed(self):
        return RelaxationBounds(self.k_y, self.K_y, self.k_x, self.K_x, self.mass, self.n)


@dataclass
class Feasibility:
    ok: bool
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def check_feasible(bounds: RelaxationBounds) -> Feasibility:
    """Check ``k <= K`` and ``max(k_x, k_y) <= M / N <= min(K_x, K_y)``."""
    b = bounds
    bad = []
    if b.n < 1:
        bad.append(f"N = {b.n} must be >= 1")
    if b.mass <= 0:
        bad.append(f"M = {b.mass} must be > 0")
    if min(b.kappa) < 0:
        bad.append(f"kappa = {b.kappa} has a negative entry")
    if b.k_x > b.K_x:
        bad.append(f"k_X = {b.k_x} > K_X = {b.K_x}")
    if b.k_y > b.K_y:
        bad.append(f"k_Y = {b.k_y} > K_Y = {b.K_y}")
    if b.n >= 1:
        ratio = b.mass / b.n
        if max(b.k_x, b.k_y) > ratio:
            bad.append(f"max(k_X, k_Y) = {max(b.k_x, b.k_y)} > M/N = {ratio}")
        if ratio > min(b.K_x, b.K_y):
            bad.append(f"M/N = {ratio} > min(K_X, K_Y) = {min(b.K_x, b.K_y)}")
    return Feasibility(not bad, bad)


def _common_scale(values):
    """Smallest integer s such that every s * value is integral, or None."""
    scale = 1
    for v in values:
        fr = Fraction(v).limit_denominator(MAX_DENOMINATOR)
        if abs(float(fr) - v) > 1e-12 * max(1.0, abs(v)):
            return None
        scale = lcm(scale, fr.denominator)
        if scale > MAX_DENOMINATOR:
            return None
    return scale


class LinearOracle:
    r"""Exact minimizer of :math:`\langle C, \Sigma \rangle` over a fixed polytope.

    Solved as a min-cost flow; rational bounds are scaled to integers so the
    result is an exact vertex (binary when kappa and M are integers). The
    object keeps the last simplex basis, so repeated calls on slowly varying
    costs (as in Frank-Wolfe) only pay for the pivots the change requires.

    Parameters
    ----------
    bounds : RelaxationBounds
    method : {"simplex", "ssp"}
        Primal network simplex, or successive shortest paths.
    warm : bool
        Re-use the previous basis between calls (simplex only).
    """

    def __init__(self, bounds: RelaxationBounds, method="simplex", warm=True):
        feas = check_feasible(bounds)
        if not feas:
            raise ValueError("infeasible relaxation bounds: " + "; ".join(feas.violations))
        if method not in ("simplex", "ssp"):
            raise ValueError(f"unknown method {method!r}")
        b = self.bounds = bounds
        n = b.n
        # caps above the row/column length are never active
        raw = (b.k_x, min(b.K_x, n), b.k_y, min(b.K_y, n), b.mass)
        scale = _common_scale(raw)
        self.integral = scale is not None
        self.scale = scale if self.integral else 1
        self.args = tuple(float(round(v * self.scale)) if self.integral else float(v) for v in raw)
        self.method = method
        self.warm = warm
        self.basis = None
        if method == "simplex":
            self._ns = NetworkSimplex(n, n, *self.args, box=float(self.scale))

    def __call__(self, C, return_info=False):
        C = np.asarray(C, dtype=float)
        n = self.bounds.n
        if C.shape != (n, n):
            raise ValueError(f"cost has shape {C.shape}, bounds expect ({n}, {n})")
        if not np.all(np.isfinite(C)):
            raise ValueError("cost matrix has non-finite entries")
        if self.method == "simplex":
            out = self._ns.solve(C, warm=self.basis if self.warm else None)
            self.basis = out["basis"]
            u, v = out["row_potentials"], out["col_potentials"]
        else:
            tol = 0.5 if self.integral else 1e-12 * max(1.0, self.bounds.mass)
            out = solve_bipartite_flow(C, *self.args, box=float(self.scale), tol=tol)
            pot = out["potentials"]
            u, v = pot[2:2 + n], pot[2 + n:2 + 2 * n]
        Sigma = out["flow"] / self.scale
        if not return_info:
            return Sigma
        rc = C + u[:, None] - v[None, :]
        slack = max(
            float(np.max(-rc, where=Sigma < 1 - 1e-12, initial=-np.inf)),
            float(np.max(rc, where=Sigma > 1e-12, initial=-np.inf)),
            0.0,
        )
        info = {"objective": float(np.sum(C * Sigma)), "row_potentials": u, "col_potentials": v,
                "cs_violation": slack, "scale": self.scale, "pivots": out.get("pivots"),
                "n_augment": out.get("n_augment")}
        return Sigma, info


def linear_oracle(C, bounds: RelaxationBounds, return_info=False, method="simplex"):
    r"""Exact minimizer of :math:`\langle C, \Sigma \rangle` over the polytope.

    Parameters
    ----------
    C : ndarray, shape (n, n)
        Linear cost (any sign).
    bounds : RelaxationBounds
    return_info : bool
        Also return a dict with the objective, row/column potentials and the
        complementary-slackness residual of the solution.
    method : {"simplex", "ssp"}

    Returns
    -------
    Sigma : ndarray, shape (n, n)
    info : dict, only if ``return_info``

    See Also
    --------
    LinearOracle : reusable, warm-started variant for repeated solves.
    """
    if np.shape(C) != (bounds.n, bounds.n):
        raise ValueError(f"cost has shape {np.shape(C)}, bounds expect ({bounds.n}, {bounds.n})")
    return LinearOracle(bounds, method=method, warm=False)(C, return_info)


def coupling_violation(Sigma, bounds: RelaxationBounds):
    """Largest violation of the polytope constraints by ``Sigma``."""
    r = Sigma.sum(1)
    c = Sigma.sum(0)
    b = bounds
    return max(
        float(np.max(-Sigma)), float(np.max(Sigma - 1)),
        float(np.max(b.k_x - r)), float(np.max(r - b.K_x)),
        float(np.max(b.k_y - c)), float(np.max(c - b.K_y)),
        abs(float(Sigma.sum()) - b.mass) / max(b.n, 1),
        0.0,
    )


@njit(cache=True)
def _project_rows(V, mass, out):
    n, m = V.shape
    for r in range(n):
        u = np.sort(V[r])[::-1]
        css = 0.0
        theta = 0.0
        for k in range(m):
            css += u[k]
            t = (css - mass) / (k + 1)
            if u[k] - t > 0:
                theta = t
        for k in range(m):
            out[r, k] = max(V[r, k] - theta, 0.0)


def project_simplex(v, mass=1.0):
    """Euclidean projection onto ``{u >= 0, sum(u) = mass}``.

    Works on the last axis, so a matrix is projected row by row.
    """
    v = np.asarray(v, dtype=float)
    if mass <= 0:
        raise ValueError("mass must be positive")
    flat = np.ascontiguousarray(v.reshape(-1, v.shape[-1]))
    out = np.empty_like(flat)
    _project_rows(flat, float(mass), out)
    return out.reshape(v.shape)


def project_capped_rows(S, cap):
    """Row-wise projection onto ``{v >= 0, sum(v) <= cap}``."""
    S = np.asarray(S, dtype=float)
    if cap <= 0:
        raise ValueError("cap must be positive")
    out = np.maximum(S, 0.0)
    over = out.sum(axis=-1) > cap
    if np.any(over):
        out[over] = project_simplex(S[over], cap)
    return out


def project_asymmetric(Sigma, k, n_iter=500, tol=1e-13):
    """Project onto ``D_k`` (rows on the unit simplex, column sums <= k).

    Dykstra's alternating projections; the last step is always the row
    simplex projection so rows sum to one exactly.
    """
    X = np.asarray(Sigma, dtype=float).copy()
    P = np.zeros_like(X)
    Q = np.zeros_like(X)
    for _ in range(n_iter):
        Yr = project_simplex(X + P, 1.0)
        P = X + P - Yr
        Xc = project_capped_rows((Yr + Q).T, k).T
        Q = Yr + Q - Xc
        X = Xc
        if max(float(np.max(X.sum(0) - k)), 0.0) <= tol and \
                np.max(np.abs(X.sum(1) - 1)) <= tol:
            break
    return project_simplex(X, 1.0)


def write_coupling_csv(path, Sigma):
    np.savetxt(path, Sigma, delimiter=",", fmt="%.17g", encoding="utf-8")


def write_coupling_triplets(path, Sigma, threshold=0.0):
    i, j = np.nonzero(np.abs(Sigma) > threshold)
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in zip(i, j):
            fh.write(f"{a},{b},{float(Sigma[a, b])!r}\n")


def read_coupling_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")


def read_coupling_triplets(path, shape):
    Sigma = np.zeros(shape)
    data = np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")
    for a, b, v in data:
        Sigma[int(a), int(b)] = v
    return Sigma
