"""
Primal network simplex for the relaxed transport polytope.

Network::

    S -> r_i     bounds [kx, Kx]   cost 0
    r_i -> c_j   bounds [0, box]   cost C_ij
    c_j -> T     bounds [ky, Ky]   cost 0
    supply M at S, demand M at T

Nodes: S=0, rows 1..n, columns n+1..n+m, T=n+m+1, plus an artificial root
linked to every node. Arcs: the n*m bipartite arcs (index i*m + j), then the
n source arcs, the m sink arcs and the V artificial arcs.

The spanning tree is kept strongly feasible and the leaving arc is chosen by
Cunningham's last-blocking-arc rule, which rules out cycling. Entering arcs
are found by block pricing. After a cost change the previous basis is still
primal feasible, so a re-solve from it only needs the pivots that the change
calls for.
"""

import numpy as np
from numba import njit

LOWER = 1
UPPER = -1
TREE = 0


@njit(cache=True)
def _arc_ends(a, n, m, V):
    nm = n * m
    if a < nm:
        return 1 + a // m, 1 + n + a % m
    if a < nm + n:
        return 0, 1 + (a - nm)
    if a < nm + n + m:
        return 1 + n + (a - nm - n), n + m + 1
    v = a - nm - n - m
    return v, V  # oriented v -> root; see art_dir for the actual direction


@njit(cache=True)
def _arc_cost(a, C, n, m, art_cost):
    nm = n * m
    if a < nm:
        return C[a // m, a % m]
    if a < nm + n + m:
        return 0.0
    return art_cost


@njit(cache=True)
def _tail_head(a, n, m, V, art_dir):
    u, v = _arc_ends(a, n, m, V)
    if a >= n * m + n + m and art_dir[u] < 0:
        return V, u
    return u, v


@njit(cache=True)
def _potentials(parent, pred_arc, C, n, m, V, art_dir, art_cost, pot, depth, stamp, stack):
    root = V
    stamp[:] = False
    stamp[root] = True
    pot[root] = 0.0
    depth[root] = 0
    for v0 in range(V):
        if stamp[v0]:
            continue
        top = 0
        x = v0
        while not stamp[x]:
            stack[top] = x
            top += 1
            x = parent[x]
        while top > 0:
            top -= 1
            x = stack[top]
            p = parent[x]
            a = pred_arc[x]
            c = _arc_cost(a, C, n, m, art_cost)
            tl, hd = _tail_head(a, n, m, V, art_dir)
            # reduced cost c + pot[tail] - pot[head] = 0 on tree arcs
            if tl == x:
                pot[x] = pot[p] - c
            else:
                pot[x] = pot[p] + c
            depth[x] = depth[p] + 1
            stamp[x] = True


@njit(cache=True)
def _link(x, p, first_child, next_sib, prev_sib):
    h = first_child[p]
    next_sib[x] = h
    prev_sib[x] = -1
    if h >= 0:
        prev_sib[h] = x
    first_child[p] = x


@njit(cache=True)
def _unlink(x, p, first_child, next_sib, prev_sib):
    if prev_sib[x] >= 0:
        next_sib[prev_sib[x]] = next_sib[x]
    else:
        first_child[p] = next_sib[x]
    if next_sib[x] >= 0:
        prev_sib[next_sib[x]] = prev_sib[x]


@njit(cache=True)
def _simplex(C, lo, up, flow, state, parent, pred_arc, art_dir, art_cost, eps, max_pivots):
    n, m = C.shape
    V = n + m + 2
    nm = n * m
    n_arcs = nm + n + m + V
    pot = np.zeros(V + 1)
    depth = np.zeros(V + 1, dtype=np.int64)
    stamp = np.zeros(V + 1, dtype=np.bool_)
    stack = np.zeros(V + 1, dtype=np.int64)
    _potentials(parent, pred_arc, C, n, m, V, art_dir, art_cost, pot, depth, stamp, stack)
    first_child = np.full(V + 1, -1, dtype=np.int64)
    next_sib = np.full(V + 1, -1, dtype=np.int64)
    prev_sib = np.full(V + 1, -1, dtype=np.int64)
    for x in range(V):
        _link(x, parent[x], first_child, next_sib, prev_sib)

    block = max(int(np.sqrt(n_arcs)), 10)
    nxt = 0
    pivots = 0
    while pivots < max_pivots:
        # block pricing: scan until a block holds a violating arc
        best = -eps
        enter = -1
        scanned = 0
        while scanned < n_arcs:
            cnt = 0
            while cnt < block and scanned < n_arcs:
                a = nxt
                nxt += 1
                if nxt == n_arcs:
                    nxt = 0
                scanned += 1
                cnt += 1
                s = state[a]
                if s == TREE:
                    continue
                if a < nm:
                    i = a // m
                    rc = C[i, a - i * m] + pot[1 + i] - pot[1 + n + a - i * m]
                else:
                    tl, hd = _tail_head(a, n, m, V, art_dir)
                    rc = _arc_cost(a, C, n, m, art_cost) + pot[tl] - pot[hd]
                viol = s * rc
                if viol < best:
                    best = viol
                    enter = a
            if enter >= 0:
                break
        if enter < 0:
            return pivots, 0
        pivots += 1

        tl, hd = _tail_head(enter, n, m, V, art_dir)
        if state[enter] == LOWER:
            first, second = tl, hd
        else:
            first, second = hd, tl
        # apex of the cycle
        u, v = first, second
        while u != v:
            if depth[u] > depth[v]:
                u = parent[u]
            elif depth[v] > depth[u]:
                v = parent[v]
            else:
                u = parent[u]
                v = parent[v]
        join = u

        delta = up[enter] - lo[enter]
        result = 0
        u_out = -1
        x = first
        while x != join:
            a = pred_arc[x]
            atl, ahd = _tail_head(a, n, m, V, art_dir)
            # flow moves parent -> x along the first path
            d = flow[a] - lo[a] if atl == x else up[a] - flow[a]
            if d < delta:
                delta = d
                u_out = x
                result = 1
            x = parent[x]
        x = second
        while x != join:
            a = pred_arc[x]
            atl, ahd = _tail_head(a, n, m, V, art_dir)
            # flow moves x -> parent along the second path
            d = up[a] - flow[a] if atl == x else flow[a] - lo[a]
            if d <= delta:
                delta = d
                u_out = x
                result = 2
            x = parent[x]
        if delta == np.inf:
            return pivots, 2

        if delta > 0:
            flow[enter] += delta * state[enter]
            x = first
            while x != join:
                a = pred_arc[x]
                atl, ahd = _tail_head(a, n, m, V, art_dir)
                flow[a] += -delta if atl == x else delta
                x = parent[x]
            x = second
            while x != join:
                a = pred_arc[x]
                atl, ahd = _tail_head(a, n, m, V, art_dir)
                flow[a] += delta if atl == x else -delta
                x = parent[x]

        if result == 0:
            state[enter] = -state[enter]
            continue

        # the leaving arc goes out of the tree at its bound
        out_arc = pred_arc[u_out]
        if flow[out_arc] - lo[out_arc] <= up[out_arc] - flow[out_arc]:
            flow[out_arc] = lo[out_arc]
            state[out_arc] = LOWER
        else:
            flow[out_arc] = up[out_arc]
            state[out_arc] = UPPER
        state[enter] = TREE
        if result == 1:
            u_in, v_in = first, second
        else:
            u_in, v_in = second, first
        # re-hang the detached subtree below v_in through the entering arc
        prev = v_in
        prev_arc = enter
        x = u_in
        while True:
            nx = parent[x]
            nx_arc = pred_arc[x]
            _unlink(x, nx, first_child, next_sib, prev_sib)
            parent[x] = prev
            pred_arc[x] = prev_arc
            _link(x, prev, first_child, next_sib, prev_sib)
            if x == u_out:
                break
            prev = x
            prev_arc = nx_arc
            x = nx
        # the subtree keeps its internal potential differences: shift it so
        # that the entering arc has zero reduced cost, and refresh depths
        c = _arc_cost(enter, C, n, m, art_cost)
        if tl == u_in:
            shift = pot[v_in] - c - pot[u_in]
        else:
            shift = pot[v_in] + c - pot[u_in]
        top = 0
        stack[top] = u_in
        top += 1
        while top > 0:
            top -= 1
            x = stack[top]
            pot[x] += shift
            depth[x] = depth[parent[x]] + 1
            y = first_child[x]
            while y >= 0:
                stack[top] = y
                top += 1
                y = next_sib[y]
    return pivots, 1


class NetworkSimplexBasis:
    """Spanning-tree basis of a solved instance, reusable as a warm start."""

    def __init__(self, shape, bounds_key, flow, state, parent, pred_arc, art_dir):
        self.shape = shape
        self.bounds_key = bounds_key
        self.flow = flow
        self.state = state
        self.parent = parent
        self.pred_arc = pred_arc
        self.art_dir = art_dir

    def copy(self):
        return NetworkSimplexBasis(self.shape, self.bounds_key, self.flow.copy(), self.state.copy(),
                                   self.parent.copy(), self.pred_arc.copy(), self.art_dir.copy())


def _initial_basis(n, m, kx, Kx, ky, Ky, mass, box, lo, up):
    V = n + m + 2
    nm = n * m
    flow = lo.copy()
    state = np.full(len(lo), LOWER, dtype=np.int64)
    excess = np.zeros(V)
    excess[0] = mass - n * kx
    excess[1:1 + n] = kx
    excess[1 + n:1 + n + m] = -ky
    excess[V - 1] = -mass + m * ky
    art_dir = np.where(excess >= 0, 1, -1).astype(np.int64)
    art = nm + n + m + np.arange(V)
    flow[art] = np.abs(excess)
    state[art] = TREE
    parent = np.full(V + 1, -1, dtype=np.int64)
    parent[:V] = V
    pred_arc = np.full(V + 1, -1, dtype=np.int64)
    pred_arc[:V] = art
    return NetworkSimplexBasis((n, m), (kx, Kx, ky, Ky, mass, box), flow, state, parent,
                               pred_arc, art_dir)


class NetworkSimplex:
    """Reusable solver for one set of (scaled) bounds and a fixed shape."""

    def __init__(self, n, m, kx, Kx, ky, Ky, mass, box=1.0):
        self.n, self.m = n, m
        self.key = (float(kx), float(Kx), float(ky), float(Ky), float(mass), float(box))
        V = n + m + 2
        nm = n * m
        self.lo = np.concatenate([np.zeros(nm), np.full(n, kx), np.full(m, ky), np.zeros(V)])
        self.up = np.concatenate([np.full(nm, box), np.full(n, Kx), np.full(m, Ky), np.full(V, np.inf)])
        self._pot = np.zeros(V + 1)
        self._depth = np.zeros(V + 1, dtype=np.int64)
        self._stamp = np.zeros(V + 1, dtype=np.bool_)
        self._stack = np.zeros(V + 1, dtype=np.int64)

    def solve(self, C, warm=None, max_pivots=None):
        """Solve for cost C, optionally from the basis ``warm``; see module doc."""
        n, m = self.n, self.m
        C = np.ascontiguousarray(C, dtype=float)
        if C.shape != (n, m):
            raise ValueError(f"cost has shape {C.shape}, expected {(n, m)}")
        V = n + m + 2
        nm = n * m
        kx, Kx, ky, Ky, mass, box = self.key
        if warm is not None and warm.shape == (n, m) and warm.bounds_key == self.key:
            basis = warm.copy()
        else:
            basis = _initial_basis(n, m, kx, Kx, ky, Ky, mass, box, self.lo, self.up)
        cmax = float(np.abs(C).max()) if C.size else 0.0
        art_cost = (cmax + 1.0) * (V + 1)
        eps = 1e-12 * (cmax + 1.0)
        if max_pivots is None:
            max_pivots = 50 * (nm + 2 * (n + m) + 2)
        pivots, status = _simplex(C, self.lo, self.up, basis.flow, basis.state, basis.parent,
                                  basis.pred_arc, basis.art_dir, art_cost, eps, max_pivots)
        if status != 0:
            raise RuntimeError(f"network simplex stopped without an optimum (status {status})")
        if np.any(basis.flow[nm + n + m:] > 1e-9 * max(1.0, mass)):
            raise RuntimeError("transport polytope is empty: no feasible flow of the requested mass")
        pot = self._pot
        _potentials(basis.parent, basis.pred_arc, C, n, m, V, basis.art_dir, art_cost, pot,
                    self._depth, self._stamp, self._stack)
        F = basis.flow[:nm].reshape(n, m).copy()
        return {"flow": F, "row_potentials": pot[1:1 + n].copy(),
                "col_potentials": pot[1 + n:1 + n + m].copy(), "pivots": int(pivots), "basis": basis}


def solve_network_simplex(C, kx, Kx, ky, Ky, mass, box=1.0, warm=None, max_pivots=None):
    """Min ``<C, F>`` over the (scaled) relaxed polytope by network simplex.

    Parameters
    ----------
    C : ndarray, shape (n, m)
    kx, Kx, ky, Ky, mass, box : float
        Bounds in common (possibly integer-scaled) units.
    warm : NetworkSimplexBasis, optional
        Basis of an earlier solve with identical bounds and shape.

    Returns
    -------
    dict with ``flow`` (n, m), row/column ``potentials``, ``pivots`` and the
    final ``basis``.
    """
    n, m = np.shape(C)
    return NetworkSimplex(n, m, kx, Kx, ky, Ky, mass, box).solve(C, warm, max_pivots)
