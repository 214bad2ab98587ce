"""
Color transfer and color normalization with regularized relaxed transport.

Images are down-sampled to palettes with K-means, the palettes are matched
with a regularized coupling, and the resulting map is extended to every
pixel by nearest-center translation.
"""

import time
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import wasserstein_distance

from .barycenter import BarycenterProblem, bcd_barycenter
from .geometry import GradientOperator, build_cost_matrix
from .polytope import RelaxationBounds, check_feasible, linear_oracle
from .regularized import (RegularizerSpec, SolveReport, SolverError, TransferMap, extract_map,
                          frank_wolfe_solve, primal_dual_asymmetric, tv_lp_solve)

KMEANS_MAX_SAMPLES = 10 ** 6
_CHUNK = 8192


class ImageIOError(OSError):
    pass


@dataclass(frozen=True)
class ImageRaster:
    """RGB image as an (N0, 3) array in [0, 1], rows in row-major pixel order."""

    width: int
    height: int
    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if px.shape != (self.width * self.height, 3):
            raise ValueError(f"pixels must have shape ({self.width * self.height}, 3), got {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def n_pixels(self):
        return self.width * self.height

    def to_array(self):
        return self.pixels.reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr, bit_depth=8):
        arr = np.asarray(arr, dtype=float)
        h, w = arr.shape[:2]
        return cls(w, h, arr.reshape(-1, 3), bit_depth)


def load_image(path):
    """Read an 8- or 16-bit RGB(A) image; alpha is dropped.

    Raises
    ------
    ImageIOError
        Unreadable file or unsupported color type (grayscale, palette).
    """
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ImageIOError(f"cannot read image {path}")
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ImageIOError(f"{path}: only RGB or RGBA images are supported")
    if img.dtype == np.uint8:
        depth, top = 8, 255.0
    elif img.dtype == np.uint16:
        depth, top = 16, 65535.0
    else:
        raise ImageIOError(f"{path}: unsupported sample type {img.dtype}")
    rgb = cv2.cvtColor(img[:, :, :3], cv2.COLOR_BGR2RGB)
    return ImageRaster.from_array(rgb / top, depth)


def save_image(raster: ImageRaster, path, bit_depth=8):
    """Write ``raster`` as an 8- or 16-bit RGB PNG."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    top, dtype = (255, np.uint8) if bit_depth == 8 else (65535, np.uint16)
    arr = np.round(np.clip(raster.to_array(), 0, 1) * top).astype(dtype)
    if not cv2.imwrite(str(path), cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)):
        raise ImageIOError(f"cannot write image {path}")


# --- palettes ---------------------------------------------------------------

def nearest_center(points, centers):
    """Index of the nearest center of every point (ties go to the lowest index)."""
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    cc = (centers ** 2).sum(1)
    out = np.empty(len(points), dtype=np.intp)
    for s in range(0, len(points), _CHUNK):
        P = points[s:s + _CHUNK]
        d2 = cc[None, :] - 2.0 * P @ centers.T
        out[s:s + _CHUNK] = np.argmin(d2, axis=1)
    return out


@dataclass
class Palette:
    centers: np.ndarray
    assignment: np.ndarray
    counts: np.ndarray
    n_iter: int = 0
    subsampled: bool = False


def _farthest_point_seeding(P, n, rng):
    first = int(rng.integers(len(P)))
    idx = [first]
    d2 = ((P - P[first]) ** 2).sum(1)
    for _ in range(1, n):
        j = int(np.argmax(d2))
        idx.append(j)
        d2 = np.minimum(d2, ((P - P[j]) ** 2).sum(1))
    return P[idx].copy()


def kmeans_palette(raster, n_clusters, seed=0, max_iters=100, tol=1e-6,
                   max_samples=KMEANS_MAX_SAMPLES):
    """Lloyd K-means palette of an image.

    Seeding is greedy farthest-point from a random pixel. Empty clusters are
    repaired by moving their center to the farthest pixel of the largest
    cluster. Images with more than ``max_samples`` pixels are clustered on a
    uniform subsample, then every pixel is assigned to its nearest center.

    Parameters
    ----------
    raster : ImageRaster or ndarray, shape (N0, 3)
    n_clusters : int
    seed : int
    max_iters : int
    tol : float
        Stop when no center moves by more than ``tol``.

    Returns
    -------
    Palette
    """
    P = raster.pixels if isinstance(raster, ImageRaster) else np.asarray(raster, dtype=float)
    N0 = len(P)
    if not 1 <= n_clusters <= N0:
        raise ValueError(f"cannot form {n_clusters} clusters from {N0} pixels")
    rng = np.random.default_rng(seed)
    subsampled = N0 > max_samples
    S = P[np.sort(rng.choice(N0, max_samples, replace=False))] if subsampled else P
    centers = _farthest_point_seeding(S, n_clusters, rng)
    it = 0
    for it in range(1, max_iters + 1):
        a = cKDTree(centers).query(S)[1]
        counts = np.bincount(a, minlength=n_clusters)
        sums = np.zeros_like(centers)
        np.add.at(sums, a, S)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        for j in np.flatnonzero(~nz):
            big = int(np.argmax(counts))
            members = np.flatnonzero(a == big)
            dist = ((S[members] - new[big]) ** 2).sum(1)
            far = int(np.argmax(dist))
            if dist[far] <= 0:
                break  # all remaining pixels coincide with their centers
            new[j] = S[members[far]]
            a[members[far]] = j
            counts[big] -= 1
            counts[j] = 1
        move = float(np.sqrt(((new - centers) ** 2).sum(1)).max())
        centers = new
        if move < tol:
            break
    assignment = cKDTree(centers).query(P)[1]
    counts = np.bincount(assignment, minlength=n_clusters)
    return Palette(centers, assignment, counts, it, subsampled)


def upsample_map(T: TransferMap, x):
    """Extend a palette map to arbitrary colors.

    ``T0(x) = T(X_i) + x - X_i`` with ``X_i`` the anchor nearest to ``x``
    (ties go to the lowest index).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    i = nearest_center(pts, T.anchors)
    out = T.images[i] + pts - T.anchors[i]
    return out[0] if single else out


def apply_map(raster: ImageRaster, T: TransferMap):
    """Map every pixel with :func:`upsample_map` and clamp to [0, 1].

    Returns the new raster and the number of clamped pixels.
    """
    mapped = upsample_map(T, raster.pixels)
    clamped = int(np.count_nonzero(np.any((mapped < 0) | (mapped > 1), axis=1)))
    return ImageRaster(raster.width, raster.height, np.clip(mapped, 0, 1)), clamped


def channel_distance(A, B):
    """Sum over channels of the 1-D Wasserstein distance between two color sets."""
    A = A.pixels if isinstance(A, ImageRaster) else np.asarray(A)
    B = B.pixels if isinstance(B, ImageRaster) else np.asarray(B)
    return float(sum(wasserstein_distance(A[:, c], B[:, c]) for c in range(A.shape[1])))


# --- pipelines --------------------------------------------------------------

@dataclass
class TransferParams:
    """Parameters of a color transfer run.

    ``solver`` is one of ``flow`` (no regularization), ``fw`` (Sobolev),
    ``tv-lp`` (symmetric TV) or ``pd`` (TV, rows pinned: kappa must be
    ``(1, 1, 0, k)``).
    """

    n_clusters: int = 400
    n_neighbors: int = 4
    kappa: tuple = (1.0, 1.0, 1.0, 1.0)
    mass: float = None
    lambda_x: float = 0.0
    lambda_y: float = 0.0
    reg: str = "sobolev"
    solver: str = "fw"
    seed: int = 0
    kmeans_iters: int = 100
    max_iter: int = 300
    tol: float = 1e-5

    def validate(self):
        if self.reg not in ("sobolev", "tv"):
            raise ValueError("reg must be 'sobolev' or 'tv'")
        if self.solver not in ("flow", "fw", "tv-lp", "pd"):
            raise ValueError("solver must be one of flow, fw, tv-lp, pd")
        if self.solver == "flow" and (self.lambda_x or self.lambda_y):
            raise ValueError("the flow solver handles lambda = 0 only")
        if self.solver == "fw" and self.reg != "sobolev":
            raise ValueError("Frank-Wolfe handles the Sobolev regularizer; use tv-lp or pd for TV")
        if self.solver in ("tv-lp", "pd") and self.reg != "tv":
            raise ValueError(f"solver {self.solver} needs reg = tv")
        if self.solver == "pd":
            kx, Kx, ky, _ = self.kappa
            if (kx, Kx, ky) != (1, 1, 0) or self.lambda_y:
                raise ValueError("the pd solver needs kappa = (1, 1, 0, k) and lambda_y = 0")
        if self.n_neighbors < 1 or self.n_clusters < 1:
            raise ValueError("n_clusters and n_neighbors must be positive")
        b = RelaxationBounds.from_kappa(self.kappa, self.n_clusters, self.mass)
        feas = check_feasible(b)
        if not feas:
            raise ValueError("infeasible relaxation bounds: " + "; ".join(feas.violations))
        return b


def solve_palettes(X, Y, params: TransferParams):
    """Coupling between palettes ``X`` and ``Y`` under ``params``."""
    bounds = params.validate()
    C = build_cost_matrix(X, Y, 2.0)
    gx = GradientOperator.from_cloud(X, params.n_neighbors)
    gy = GradientOperator.from_cloud(Y, params.n_neighbors)
    lam0 = params.lambda_x == 0 and params.lambda_y == 0
    if params.solver == "flow" or (lam0 and params.solver == "fw"):
        t0 = time.perf_counter()
        Sigma = linear_oracle(C, bounds)
        return Sigma, SolveReport(energy=[float(np.sum(C * Sigma))], gap=0.0, converged=True,
                                  solver="flow", wall_ms=1e3 * (time.perf_counter() - t0))
    if params.solver == "fw":
        spec = RegularizerSpec.sobolev(params.lambda_x, params.lambda_y)
        return frank_wolfe_solve(X, Y, C, bounds, gx, gy, spec, max_iter=params.max_iter, tol=params.tol)
    if params.solver == "tv-lp":
        return tv_lp_solve(X, Y, C, bounds, gx, gy, RegularizerSpec.tv(params.lambda_x, params.lambda_y))
    return primal_dual_asymmetric(X, Y, C, params.kappa[3], gx, params.lambda_x, "J1",
                                  max_iter=max(params.max_iter, 1000), tol=params.tol)


@dataclass
class TransferResult:
    image: ImageRaster
    palette_x: Palette
    palette_y: Palette
    coupling: np.ndarray
    transfer_map: TransferMap
    report: object
    n_clamped: int
    timings: dict = field(default_factory=dict)


def color_transfer(X0: ImageRaster, Y0: ImageRaster, params: TransferParams = None):
    """Give ``X0`` the colors of ``Y0``.

    Down-samples both images to ``params.n_clusters`` colors, matches the
    palettes with a regularized relaxed coupling, and maps every pixel of
    ``X0`` through the up-sampled barycentric map.

    Returns
    -------
    TransferResult
    """
    params = params or TransferParams()
    params.validate()
    if params.kappa[0] <= 0:
        raise ValueError("k_X must be > 0 so that every palette color receives a target")
    t = {}
    t0 = time.perf_counter()
    px = kmeans_palette(X0, params.n_clusters, params.seed, params.kmeans_iters)
    py = kmeans_palette(Y0, params.n_clusters, params.seed, params.kmeans_iters)
    t["kmeans_ms"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    try:
        Sigma, report = solve_palettes(px.centers, py.centers, params)
    except (SolverError, RuntimeError) as err:
        raise SolverError(f"transport stage: {err}", getattr(err, "report", None)) from err
    t["solve_ms"] = 1e3 * (time.perf_counter() - t0)
    T = extract_map(Sigma, px.centers, py.centers)
    t0 = time.perf_counter()
    out, clamped = apply_map(X0, T)
    t["upsample_ms"] = 1e3 * (time.perf_counter() - t0)
    return TransferResult(out, px, py, Sigma, T, report, clamped, t)


@dataclass
class NormalizeParams:
    """Parameters of a color normalization run.

    ``map_k`` and ``map_lambda`` configure the per-image maps onto the
    barycenter and default to ``k`` and ``lam``.
    """

    n_clusters: int = 400
    n_neighbors: int = 4
    k: float = 2.0
    lam: float = 0.0
    reg: str = "sobolev"
    seed: int = 0
    kmeans_iters: int = 100
    outer_iters: int = 10
    outer_tol: float = 1e-6
    inner_max_iter: int = 100
    inner_tol: float = 1e-5
    map_k: float = None
    map_lambda: float = None
    map_max_iter: int = 300
    map_tol: float = 1e-5


@dataclass
class NormalizeResult:
    images: list
    palettes: list
    barycenter: np.ndarray
    state: object
    maps: list
    reports: list
    n_clamped: list
    timings: dict = field(default_factory=dict)


def color_normalize(images, rho, params: NormalizeParams = None):
    """Give every image the color distribution of a common barycenter.

    Steps: K-means palette of each image, regularized barycenter of the
    palettes, a regularized map from every palette onto the barycenter, and
    up-sampling of each map to the pixels.

    Returns
    -------
    NormalizeResult
    """
    params = params or NormalizeParams()
    rho = np.asarray(rho, dtype=float)
    if len(images) < 2 or len(images) != len(rho):
        raise ValueError("need at least two images and one weight per image")
    if params.reg not in ("sobolev", "tv"):
        raise ValueError("reg must be 'sobolev' or 'tv'")
    pq = (2, 2) if params.reg == "sobolev" else (1, 1)
    map_k = params.k if params.map_k is None else params.map_k
    map_lam = params.lam if params.map_lambda is None else params.map_lambda
    if map_k < 1:
        raise ValueError("map_k must be >= 1")
    t = {}
    t0 = time.perf_counter()
    palettes = [kmeans_palette(im, params.n_clusters, params.seed, params.kmeans_iters) for im in images]
    t["kmeans_ms"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    problem = BarycenterProblem([p.centers for p in palettes], rho, params.lam, params.k, pq,
                                params.n_neighbors)
    try:
        state = bcd_barycenter(problem, outer_iters=params.outer_iters, tol=params.outer_tol,
                               inner_max_iter=params.inner_max_iter, inner_tol=params.inner_tol)
    except (SolverError, RuntimeError) as err:
        raise SolverError(f"barycenter stage: {err}", getattr(err, "report", None)) from err
    t["barycenter_ms"] = 1e3 * (time.perf_counter() - t0)
    Xb = state.X
    t0 = time.perf_counter()
    maps, reports, outs, clamped = [], [], [], []
    tp = TransferParams(n_clusters=params.n_clusters, n_neighbors=params.n_neighbors,
                        kappa=(1.0, 1.0, 0.0, map_k), lambda_x=map_lam,
                        lambda_y=map_lam if params.reg == "sobolev" else 0.0,
                        reg=params.reg, solver="fw" if params.reg == "sobolev" else "pd",
                        seed=params.seed, max_iter=params.map_max_iter, tol=params.map_tol)
    for r, (im, pal) in enumerate(zip(images, palettes)):
        try:
            Sigma, rep = solve_palettes(pal.centers, Xb, tp)
        except (SolverError, RuntimeError) as err:
            raise SolverError(f"map stage, image {r}: {err}", getattr(err, "report", None)) from err
        T = extract_map(Sigma, pal.centers, Xb)
        out, c = apply_map(im, T)
        maps.append(T)
        reports.append(rep)
        outs.append(out)
        clamped.append(c)
    t["maps_ms"] = 1e3 * (time.perf_counter() - t0)
    return NormalizeResult(outs, palettes, Xb, state, maps, reports, clamped, t)
