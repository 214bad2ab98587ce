import cv2
import numpy as np
import pytest

from relaxot.color import (ImageIOError, ImageRaster, NormalizeParams, TransferParams, apply_map,
                           channel_distance, color_normalize, color_transfer, kmeans_palette, load_image,
                           nearest_center, save_image, upsample_map)
from relaxot.regularized import TransferMap
from relaxot.synthetic import scene_image, two_color_images


def test_raster_validation():
    with pytest.raises(ValueError):
        ImageRaster(2, 2, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ImageRaster(1, 1, [[1.5, 0, 0]])
    r = ImageRaster.from_array(np.zeros((3, 2, 3)))
    assert (r.width, r.height, r.n_pixels) == (2, 3, 6)


def test_png_roundtrip(tmp_path):
    img = scene_image("flower", size=32)
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert (back.width, back.height, back.bit_depth) == (32, 32, 8)
    np.testing.assert_array_equal(back.pixels, img.pixels)


def test_png_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 65536, (12, 3)) / 65535
    save_image(ImageRaster(4, 3, px), tmp_path / "a.png", bit_depth=16)
    back = load_image(tmp_path / "a.png")
    assert back.bit_depth == 16
    np.testing.assert_array_equal(back.pixels, px)


def test_white_pixel(tmp_path):
    cv2.imwrite(str(tmp_path / "w.png"), np.full((1, 1, 3), 255, np.uint8))
    assert load_image(tmp_path / "w.png").pixels.tolist() == [[1.0, 1.0, 1.0]]


def test_rgba_alpha_dropped(tmp_path):
    bgra = np.array([[[10, 20, 30, 40]]], np.uint8)
    cv2.imwrite(str(tmp_path / "a.png"), bgra)
    np.testing.assert_array_equal(load_image(tmp_path / "a.png").pixels, [[30 / 255, 20 / 255, 10 / 255]])


def test_unsupported_images(tmp_path):
    cv2.imwrite(str(tmp_path / "g.png"), np.zeros((2, 2), np.uint8))
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "g.png")
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "bad.png")
    with pytest.raises(OSError):
        load_image(tmp_path / "missing.png")


def test_kmeans_identical_pixels():
    pal = kmeans_palette(np.tile([0.2, 0.4, 0.6], (50, 1)), 3)
    np.testing.assert_allclose(pal.centers, np.tile([0.2, 0.4, 0.6], (3, 1)), rtol=0, atol=1e-15)


def test_kmeans_all_pixels_distinct(rng):
    P = rng.random((20, 3))
    pal = kmeans_palette(P, 20)
    assert sorted(map(tuple, pal.centers)) == sorted(map(tuple, P))
    assert np.all(pal.counts == 1)


def test_kmeans_two_blobs(rng):
    a = np.array([0.2, 0.3, 0.8]) + 0.01 * rng.normal(size=(500, 3))
    b = np.array([0.9, 0.6, 0.1]) + 0.01 * rng.normal(size=(300, 3))
    pal = kmeans_palette(np.vstack([a, b]), 2, max_iters=1000)
    got = sorted(map(tuple, pal.centers))
    ref = sorted([tuple(a.mean(0)), tuple(b.mean(0))])
    np.testing.assert_allclose(got, ref, atol=1e-3)


def test_kmeans_rejects_too_many_clusters(rng):
    with pytest.raises(ValueError):
        kmeans_palette(rng.random((5, 3)), 6)


def test_kmeans_lloyd_fixed_point_and_determinism():
    img = scene_image("parrot", size=48)
    p1 = kmeans_palette(img, 30, seed=4)
    p2 = kmeans_palette(img, 30, seed=4)
    np.testing.assert_array_equal(p1.centers, p2.centers)
    np.testing.assert_array_equal(p1.assignment, p2.assignment)
    assert np.all(p1.counts > 0) and p1.counts.sum() == img.n_pixels
    d = ((img.pixels[:, None] - p1.centers[None]) ** 2).sum(2)
    own = d[np.arange(img.n_pixels), p1.assignment]
    assert np.all(own <= d.min(1) + 1e-12)


def test_kmeans_subsamples_large_inputs(rng):
    pal = kmeans_palette(rng.random((400, 3)), 5, max_samples=100)
    assert pal.subsampled and len(pal.assignment) == 400


def test_nearest_center_ties_lowest():
    assert nearest_center([[0.5]], [[0.0], [1.0]]).tolist() == [0]


def test_upsample_examples(rng):
    X = rng.random((6, 3))
    Z = rng.random((6, 3))
    T = TransferMap(X, Z)
    np.testing.assert_allclose(upsample_map(T, X[2]), Z[2])
    x = rng.random((50, 3))
    np.testing.assert_allclose(upsample_map(TransferMap(X, X), x), x, atol=1e-15)
    T1 = TransferMap(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([[0.5, 0.5, 0.5], [0.0, 0, 0]]))
    np.testing.assert_allclose(upsample_map(T1, [0.2, 0.1, 0.0]), [0.7, 0.6, 0.5])


def test_upsample_preserves_offsets(rng):
    X, Z = rng.random((5, 3)), rng.random((5, 3))
    T = TransferMap(X, Z)
    P = rng.random((300, 3))
    idx = nearest_center(P, X)
    out = upsample_map(T, P)
    for i in range(5):
        m = np.flatnonzero(idx == i)
        if len(m) > 1:
            np.testing.assert_allclose(out[m] - out[m[0]], P[m] - P[m[0]], atol=1e-14)


def test_apply_map_clamps():
    r = ImageRaster(2, 1, [[0.9, 0.9, 0.9], [0.1, 0.1, 0.1]])
    T = TransferMap(np.array([[0.9, 0.9, 0.9], [0.1, 0.1, 0.1]]), np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]))
    out, n = apply_map(r, T)
    assert n == 0
    T2 = TransferMap(T.anchors, np.array([[1.2, 1.0, 1.0], [0.0, 0.0, 0.0]]))
    out, n = apply_map(r, T2)
    assert n == 1 and out.pixels.max() == 1.0


def test_channel_distance_zero_and_shift(rng):
    P = rng.random((100, 3))
    assert channel_distance(P, P) == 0
    assert channel_distance(P, P + 0.1) == pytest.approx(0.3)


def test_self_transfer_identity():
    img = scene_image("clock", size=64)
    res = color_transfer(img, img, TransferParams(n_clusters=40))
    assert (res.image.width, res.image.height) == (64, 64)
    assert np.abs(res.image.pixels - img.pixels).max() <= 2 / 255


def test_transfer_params_validation():
    with pytest.raises(ValueError):
        TransferParams(solver="pd", kappa=(0.1, 2, 0.1, 2), lambda_x=0.1, reg="tv").validate()
    with pytest.raises(ValueError):
        TransferParams(solver="fw", reg="tv").validate()
    with pytest.raises(ValueError, match="infeasible"):
        TransferParams(n_clusters=10, kappa=(2, 3, 2, 3)).validate()


def test_transfer_deterministic():
    X0, Y0 = scene_image("flower", size=32), scene_image("wheat", size=32)
    p = TransferParams(n_clusters=20, kappa=(0.1, 1.1, 0.1, 1.1), lambda_x=1e-3, lambda_y=1e-3, max_iter=50)
    a, b = color_transfer(X0, Y0, p), color_transfer(X0, Y0, p)
    np.testing.assert_array_equal(a.image.pixels, b.image.pixels)


@pytest.mark.slow
def test_regularization_keeps_color_resolution():
    X0, Y0 = two_color_images(size=64)
    counts = {}
    for lam in (0.0, 0.001):
        p = TransferParams(n_clusters=40, kappa=(0.1, 8, 0.1, 8), lambda_x=lam, lambda_y=lam, max_iter=2000, tol=1e-6)
        res = color_transfer(X0, Y0, p)
        counts[lam] = len(np.unique(np.round(res.transfer_map.images * 255).astype(int), axis=0))
    assert counts[0.0] < counts[0.001]


def test_normalize_identical_images():
    img = scene_image("parrot", size=32)
    res = color_normalize([img, img], [0.5, 0.5], NormalizeParams(n_clusters=20, k=1, lam=0.0))
    for out in res.images:
        assert np.abs(out.pixels - img.pixels).max() <= 2 / 255


def test_normalize_rejects_bad_weights():
    img = scene_image("parrot", size=16)
    with pytest.raises(ValueError):
        color_normalize([img], [1.0], NormalizeParams(n_clusters=5))
    with pytest.raises(ValueError):
        color_normalize([img, img], [0.5], NormalizeParams(n_clusters=5))


@pytest.mark.slow
def test_normalize_weight_sweep_monotone():
    A, B = two_color_images(size=48)
    cA = np.array([[0.80, 0.25, 0.20], [0.30, 0.75, 0.35]])
    cB = np.array([[0.20, 0.35, 0.80], [0.65, 0.40, 0.25]])
    labA = np.argmin(((A.pixels[:, None] - cA[None]) ** 2).sum(2), 1)
    labB = np.argmin(((B.pixels[:, None] - cB[None]) ** 2).sum(2), 1)
    means = []
    for rho in (1.0, 0.75, 0.5, 0.25, 0.0):
        r = color_normalize([A, B], [rho, 1 - rho], NormalizeParams(n_clusters=30, k=20, lam=0.0005))
        means.append([r.images[0].pixels[labA == c].mean(0) for c in (0, 1)]
                     + [r.images[1].pixels[labB == c].mean(0) for c in (0, 1)])
    means = np.array(means)  # (weights, cluster, channel)
    # each cluster's mean color moves monotonically from one palette to the other,
    # up to one 8-bit quantization step
    steps = np.diff(means, axis=0)
    direction = np.sign(means[-1] - means[0])
    assert np.all(steps * direction >= -1 / 255)
