"""
Successive shortest paths on the bipartite network of the relaxed polytope.

Node layout (after removing arc lower bounds)::

    S -> s            cap  M - n*kx
    S -> r_i          cap  kx          (mandatory part of the row lower bound)
    s -> r_i          cap  Kx - kx
    r_i -> c_j        cap  box, cost C_ij   (only the arcs listed)
    c_j -> t          cap  Ky - ky
    c_j -> T          cap  ky          (mandatory part of the column lower bound)
    t -> T            cap  M - m*ky

Every S->T flow of value M saturates all S and T arcs, so it encodes a
coupling that meets the row/column bounds. Dijkstra runs on reduced costs
(binary heap) and stops as soon as T is settled.

The row->column arcs are given as a list sorted by row, so the same kernel
serves the complete bipartite graph and sparse candidate subgraphs.
"""

import heapq

import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True)
def _node_kind(v, n, m):
    # 0=S 1=s 2=row 3=col 4=t 5=T
    if v == 0:
        return 0
    if v == 1:
        return 1
    if v < 2 + n:
        return 2
    if v < 2 + n + m:
        return 3
    if v == 2 + n + m:
        return 4
    return 5


@njit(cache=True)
def _relax(heap, dist, pred, pred_arc, v, nd, u, a):
    if nd < dist[v]:
        dist[v] = nd
        pred[v] = u
        pred_arc[v] = a
        heapq.heappush(heap, (nd, v))


@njit(cache=True)
def _ssp(n, m, row_ptr, arc_col, arc_cost, col_ptr, col_arc, arc_row,
         cap_Ss, cap_Sr, cap_sr, box, cap_ct, cap_cT, cap_tT, total, tol):
    V = n + m + 4
    r0 = 2
    c0 = 2 + n
    t = 2 + n + m
    T = 3 + n + m
    n_arcs = arc_col.shape[0]

    f = np.zeros(n_arcs)
    f_Ss = 0.0
    f_Sr = np.zeros(n)
    f_sr = np.zeros(n)
    f_ct = np.zeros(m)
    f_cT = np.zeros(m)
    f_tT = 0.0

    # DAG potentials: rows at 0, columns at their cheapest incoming arc
    pot = np.zeros(V)
    for j in range(m):
        pot[c0 + j] = _INF
    for a in range(n_arcs):
        v = c0 + arc_col[a]
        if arc_cost[a] < pot[v]:
            pot[v] = arc_cost[a]
    pmin = _INF
    for j in range(m):
        if pot[c0 + j] == _INF:
            pot[c0 + j] = 0.0
        if pot[c0 + j] < pmin:
            pmin = pot[c0 + j]
    pot[t] = pmin
    pot[T] = pmin

    dist = np.empty(V)
    pred = np.empty(V, dtype=np.int64)
    pred_arc = np.empty(V, dtype=np.int64)
    done = np.empty(V, dtype=np.bool_)
    sent = 0.0
    n_aug = 0
    status = 0

    while total - sent > tol:
        for v in range(V):
            dist[v] = _INF
            pred[v] = -1
            pred_arc[v] = -1
            done[v] = False
        dist[0] = 0.0
        heap = [(0.0, 0)]
        while len(heap) > 0:
            du, u = heapq.heappop(heap)
            if done[u] or du > dist[u]:
                continue
            if u == T:
                break
            done[u] = True
            base = du + pot[u]
            k = _node_kind(u, n, m)
            if k == 0:
                if cap_Ss - f_Ss > tol:
                    _relax(heap, dist, pred, pred_arc, 1, max(du, base - pot[1]), u, -1)
                for i in range(n):
                    if cap_Sr - f_Sr[i] > tol and not done[r0 + i]:
                        _relax(heap, dist, pred, pred_arc, r0 + i, max(du, base - pot[r0 + i]), u, -1)
            elif k == 1:
                for i in range(n):
                    if cap_sr - f_sr[i] > tol and not done[r0 + i]:
                        _relax(heap, dist, pred, pred_arc, r0 + i, max(du, base - pot[r0 + i]), u, -1)
            elif k == 2:
                i = u - r0
                if f_sr[i] > tol and not done[1]:
                    _relax(heap, dist, pred, pred_arc, 1, max(du, base - pot[1]), u, -1)
                for a in range(row_ptr[i], row_ptr[i + 1]):
                    v = c0 + arc_col[a]
                    if box - f[a] > tol and not done[v]:
                        nd = base + arc_cost[a] - pot[v]
                        if nd < dist[v]:
                            _relax(heap, dist, pred, pred_arc, v, max(du, nd), u, a)
            elif k == 3:
                j = u - c0
                for q in range(col_ptr[j], col_ptr[j + 1]):
                    a = col_arc[q]
                    if f[a] > tol:
                        v = r0 + arc_row[a]
                        if not done[v]:
                            nd = base - arc_cost[a] - pot[v]
                            if nd < dist[v]:
                                _relax(heap, dist, pred, pred_arc, v, max(du, nd), u, a)
                if cap_ct[j] - f_ct[j] > tol and not done[t]:
                    _relax(heap, dist, pred, pred_arc, t, max(du, base - pot[t]), u, -1)
                if cap_cT[j] - f_cT[j] > tol:
                    _relax(heap, dist, pred, pred_arc, T, max(du, base - pot[T]), u, -1)
            elif k == 4:
                if cap_tT - f_tT > tol:
                    _relax(heap, dist, pred, pred_arc, T, max(du, base - pot[T]), u, -1)
                for j in range(m):
                    if f_ct[j] > tol and not done[c0 + j]:
                        _relax(heap, dist, pred, pred_arc, c0 + j, max(du, base - pot[c0 + j]), u, -1)

        if dist[T] == _INF:
            status = 1
            break
        dT = dist[T]
        for v in range(V):
            if dist[v] < dT:
                pot[v] += dist[v]
            else:
                pot[v] += dT

        # bottleneck along the path
        delta = total - sent
        v = T
        while v != 0:
            u = pred[v]
            ku = _node_kind(u, n, m)
            kv = _node_kind(v, n, m)
            if ku == 0 and kv == 1:
                r = cap_Ss - f_Ss
            elif ku == 0 and kv == 2:
                r = cap_Sr - f_Sr[v - r0]
            elif ku == 1 and kv == 2:
                r = cap_sr - f_sr[v - r0]
            elif ku == 2 and kv == 1:
                r = f_sr[u - r0]
            elif ku == 2 and kv == 3:
                r = box - f[pred_arc[v]]
            elif ku == 3 and kv == 2:
                r = f[pred_arc[v]]
            elif ku == 3 and kv == 4:
                r = cap_ct[u - c0] - f_ct[u - c0]
            elif ku == 3 and kv == 5:
                r = cap_cT[u - c0] - f_cT[u - c0]
            elif ku == 4 and kv == 5:
                r = cap_tT - f_tT
            else:  # t -> c_j
                r = f_ct[v - c0]
            if r < delta:
                delta = r
            v = u

        v = T
        while v != 0:
            u = pred[v]
            ku = _node_kind(u, n, m)
            kv = _node_kind(v, n, m)
            if ku == 0 and kv == 1:
                f_Ss += delta
            elif ku == 0 and kv == 2:
                f_Sr[v - r0] += delta
            elif ku == 1 and kv == 2:
                f_sr[v - r0] += delta
            elif ku == 2 and kv == 1:
                f_sr[u - r0] -= delta
            elif ku == 2 and kv == 3:
                f[pred_arc[v]] += delta
            elif ku == 3 and kv == 2:
                f[pred_arc[v]] -= delta
            elif ku == 3 and kv == 4:
                f_ct[u - c0] += delta
            elif ku == 3 and kv == 5:
                f_cT[u - c0] += delta
            elif ku == 4 and kv == 5:
                f_tT += delta
            else:
                f_ct[v - c0] -= delta
            v = u
        sent += delta
        n_aug += 1

    return f, pot, status, n_aug


def solve_bipartite_flow(C, kx, Kx, ky, Ky, mass, box=1.0, tol=1e-9, arcs=None):
    """Min-cost flow for ``min <C, F>`` over the (scaled) relaxed polytope.

    All capacity arguments are expected in the same (possibly integer-scaled)
    units. ``arcs`` optionally restricts the row->column arcs to a boolean
    mask of C's shape (default: all arcs). Returns the flow matrix and node
    potentials, or raises ``RuntimeError`` if the network is infeasible.
    """
    C = np.ascontiguousarray(C, dtype=float)
    n, m = C.shape
    if arcs is None:
        rows = np.repeat(np.arange(n), m)
        cols = np.tile(np.arange(m), n)
    else:
        rows, cols = np.nonzero(arcs)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    col_arc = np.argsort(cols, kind="stable").astype(np.int64)
    col_ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=m), out=col_ptr[1:])
    cost = C[rows, cols]
    f, pot, status, n_aug = _ssp(
        n, m, row_ptr, cols.astype(np.int64), cost, col_ptr, col_arc, rows.astype(np.int64),
        mass - n * kx, kx, Kx - kx, box, np.full(m, Ky - ky), np.full(m, ky),
        mass - m * ky, mass, tol)
    if status != 0:
        raise RuntimeError("transport polytope is empty: no feasible flow of the requested mass")
    F = np.zeros((n, m))
    F[rows, cols] = f
    return {"flow": F, "potentials": pot, "n_augment": int(n_aug)}
