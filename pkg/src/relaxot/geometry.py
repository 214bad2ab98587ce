"""
Point clouds, cost matrices, nearest-neighbour graphs and graph gradients.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

# distances below this are floored before inversion (near-duplicate centroids)
WEIGHT_EPS = 1e-10
DENSE_LIMIT = 40_000


def as_cloud(X, name="X"):
    """Validate and return a point cloud as a float (N, d) array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty (N, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def sq_distances(X, Y):
    """Squared Euclidean distances between the rows of X and Y."""
    d2 = (X ** 2).sum(1)[:, None] + (Y ** 2).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d2, 0.0)


def build_cost_matrix(X, Y, alpha=2.0):
    r"""Cost matrix :math:`C_{ij} = \|X_i - Y_j\|^\alpha`.

    Parameters
    ----------
    X : array-like, shape (N, d)
    Y : array-like, shape (M, d)
    alpha : float
        Exponent, must be >= 1.

    Returns
    -------
    C : ndarray, shape (N, M)
    """
    X = as_cloud(X, "X")
    Y = as_cloud(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: X has d={X.shape[1]}, Y has d={Y.shape[1]}")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    # direct differences keep C_ij == 0 exactly for coincident points
    diff = X[:, None, :] - Y[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    if alpha == 2:
        return d2
    return np.sqrt(d2) ** alpha


@dataclass(frozen=True)
class NeighborGraph:
    """Directed n-nearest-neighbour graph.

    ``edges[e] = (i, j)`` means ``X_j`` is one of the ``n_neighbors`` closest
    points to ``X_i``; edges are ordered by source vertex, then neighbour rank.
    """

    edges: np.ndarray
    weights: np.ndarray
    n_neighbors: int
    n_vertices: int

    @property
    def n_edges(self):
        return len(self.weights)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for (i, j), w in zip(self.edges, self.weights):
                fh.write(f"{i},{j},{float(w)!r}\n")


def knn_graph(X, n):
    """Build the directed n-NN graph with weights ``1 / ||X_i - X_j||``.

    Ties in distance are broken by lower index; ``n`` is clamped to ``N - 1``.
    """
    X = as_cloud(X)
    if int(n) != n or n <= 0:
        raise ValueError("number of neighbours must be a positive integer")
    N = X.shape[0]
    n = min(int(n), N - 1)
    if n == 0:
        return NeighborGraph(np.zeros((0, 2), dtype=np.intp), np.zeros(0), 0, N)
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :n]
    src = np.repeat(np.arange(N), n)
    dst = order.ravel()
    d = np.maximum(dist[src, dst], WEIGHT_EPS)
    return NeighborGraph(np.stack([src, dst], axis=1), 1.0 / d, n, N)


class GradientOperator:
    """Graph gradient ``G : R^{N x d} -> R^{P x d}``, ``(GV)_e = w_e (V_i - V_j)``."""

    def __init__(self, graph: NeighborGraph):
        self.graph = graph
        P, N = graph.n_edges, graph.n_vertices
        rows = np.repeat(np.arange(P), 2)
        cols = graph.edges.ravel()
        vals = np.stack([graph.weights, -graph.weights], axis=1).ravel()
        self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(P, N))
        self._src = np.ascontiguousarray(graph.edges[:, 0])
        self._dst = np.ascontiguousarray(graph.edges[:, 1])
        self._w = np.asarray(graph.weights, dtype=float)[:, None]
        # small graphs: dense products avoid the sparse call overhead
        self._bwd = self.matrix.T.toarray() if P * N <= DENSE_LIMIT else self.matrix.T.tocsr()

    @classmethod
    def from_cloud(cls, X, n):
        return cls(knn_graph(X, n))

    @property
    def shape(self):
        return self.matrix.shape

    @cached_property
    def laplacian(self):
        """``G^T G`` as a sparse (N, N) matrix."""
        return (self.matrix.T @ self.matrix).tocsr()

    @cached_property
    def norm_sq(self):
        """Squared spectral norm of G (largest eigenvalue of ``G^T G``)."""
        L = self.laplacian
        if L.shape[0] <= 600:
            return float(np.linalg.eigvalsh(L.toarray())[-1]) if L.shape[0] else 0.0
        from scipy.sparse.linalg import eigsh
        return float(eigsh(L, k=1, which="LA", return_eigenvectors=False)[0])

    def apply(self, V):
        V = np.asarray(V, dtype=float)
        if V.shape[0] != self.shape[1]:
            raise ValueError(f"expected {self.shape[1]} rows, got {V.shape[0]}")
        # edge differences keep G V exactly zero on constant rows
        return self._w * (V[self._src] - V[self._dst])

    def adjoint(self, U):
        U = np.asarray(U, dtype=float)
        if U.shape[0] != self.shape[0]:
            raise ValueError(f"expected {self.shape[0]} rows, got {U.shape[0]}")
        return self._bwd @ U


def gradient_apply(G: GradientOperator, V):
    return G.apply(V)


def gradient_adjoint_apply(G: GradientOperator, U):
    return G.adjoint(U)


def read_cloud_csv(path):
    X = np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")
    return as_cloud(X, str(path))


def write_cloud_csv(path, X):
    np.savetxt(path, np.asarray(X, dtype=float), delimiter=",", fmt="%.17g", encoding="utf-8")
