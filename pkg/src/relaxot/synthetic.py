"""
Synthetic point clouds and test images.
"""

import numpy as np

from .color import ImageRaster


def _blob(rng, n, center, spread):
    return np.asarray(center, dtype=float) + spread * rng.standard_normal((n, len(center)))


def two_cluster_pair(n_big=30, n_small=10, seed=0, d=2, spread=(0.05, 0.03)):
    """Two clouds, each made of a big and a small cluster.

    Y's clusters are translated copies of X's (same shapes), placed so that
    the big cluster of X sits next to the small cluster of Y. Nearest-point
    matching therefore pairs clusters of different shapes.

    Returns
    -------
    X, Y : ndarray, shape (n_big + n_small, d)
    labels : ndarray of int
        0 for points of the big cluster, 1 for the small one (same in X and Y).
    """
    rng = np.random.default_rng(seed)
    c_big_x = np.full(d, 0.25)
    c_small_x = np.full(d, 0.75)
    big = _blob(rng, n_big, np.zeros(d), spread[0])
    small = _blob(rng, n_small, np.zeros(d), spread[1])
    X = np.vstack([big + c_big_x, small + c_small_x])
    c_small_y = c_big_x + np.r_[0.15, 0.1, np.zeros(d - 2)][:d]
    c_big_y = np.r_[0.75, 0.2, np.full(d - 2, 0.5)][:d]
    Y = np.vstack([big + c_big_y, small + c_small_y])
    labels = np.r_[np.zeros(n_big, dtype=int), np.ones(n_small, dtype=int)]
    return X, Y, labels


def two_cluster_barycenter_pair(n_big=30, n_small=10, seed=0, d=2):
    """Two clouds with two well separated clusters each, for barycenter demos."""
    rng = np.random.default_rng(seed)
    X1 = np.vstack([_blob(rng, n_big, np.r_[0.2, 0.2, np.zeros(d - 2)][:d] + 0.1, 0.04),
                    _blob(rng, n_small, np.r_[0.2, 0.7, np.zeros(d - 2)][:d] + 0.1, 0.03)])
    X2 = np.vstack([_blob(rng, n_big, np.r_[0.7, 0.3, np.zeros(d - 2)][:d] + 0.1, 0.04),
                    _blob(rng, n_small, np.r_[0.6, 0.8, np.zeros(d - 2)][:d] + 0.1, 0.03)])
    return X1, X2


def blob_image(colors, weights=None, size=256, noise=0.03, seed=0, shading=0.15):
    """RGB test image made of noisy color blobs on a shaded background.

    Parameters
    ----------
    colors : array-like, shape (K, 3)
        Blob colors in [0, 1]; the first one is used as background.
    weights : array-like, shape (K,), optional
        Relative blob radii.
    size : int
        Width and height in pixels.
    noise : float
        Standard deviation of the per-pixel color noise.
    shading : float
        Amplitude of a smooth brightness ramp across the image.

    Returns
    -------
    ImageRaster
    """
    rng = np.random.default_rng(seed)
    colors = np.asarray(colors, dtype=float)
    K = len(colors)
    weights = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.empty((size, size, 3))
    img[:] = colors[0]
    for k in range(1, K):
        cx, cy = rng.uniform(0.2, 0.8, 2)
        r = 0.12 * weights[k] * rng.uniform(0.8, 1.2)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        img[mask] = colors[k]
    ramp = shading * (xx + yy - 1.0)[..., None]
    img = img * (1 + ramp) + noise * rng.standard_normal(img.shape)
    img = np.clip(img, 0, 1)
    # keep the pixels on the 8-bit grid so saved files reload bit-exactly
    img = np.round(img * 255) / 255
    return ImageRaster(size, size, img.reshape(-1, 3))


def two_color_images(size=128, seed=0):
    """Pair of two-color images: a big red and a small green area in the first,
    a big blue and a small brown area in the second, with the red area
    close in color to the brown one."""
    X0 = blob_image([[0.80, 0.25, 0.20], [0.30, 0.75, 0.35]], [1.0, 1.3], size=size, seed=seed)
    Y0 = blob_image([[0.20, 0.35, 0.80], [0.65, 0.40, 0.25]], [1.0, 1.3], size=size, seed=seed + 1)
    return X0, Y0


# palettes of the bundled test scenes
SCENES = {
    "flower": [[0.15, 0.45, 0.15], [0.90, 0.30, 0.45], [0.95, 0.85, 0.20], [0.40, 0.25, 0.10]],
    "wheat": [[0.55, 0.70, 0.95], [0.90, 0.75, 0.35], [0.70, 0.55, 0.25], [0.95, 0.95, 0.90]],
    "parrot": [[0.10, 0.30, 0.10], [0.85, 0.10, 0.10], [0.10, 0.40, 0.85], [0.95, 0.80, 0.10]],
    "clock": [[0.35, 0.30, 0.25], [0.85, 0.80, 0.70], [0.15, 0.15, 0.15], [0.70, 0.50, 0.20]],
}


def scene_image(name, size=256, seed=0, tint=(1.0, 1.0, 1.0)):
    """256x256 test scene with the named palette, optionally color tinted."""
    colors = np.clip(np.asarray(SCENES[name]) * np.asarray(tint), 0, 1)
    return blob_image(colors, [1.0, 1.4, 1.0, 0.8], size=size, seed=seed)
