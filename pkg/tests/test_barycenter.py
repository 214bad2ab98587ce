import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage

from relaxot.barycenter import (BarycenterProblem, BarycenterState, asymmetric_distance, barycenter_energy,
                                bcd_barycenter, sigma_update, x_gradient_sobolev, x_update_sobolev,
                                x_update_tv)
from relaxot.geometry import GradientOperator, build_cost_matrix
from relaxot.polytope import RelaxationBounds, coupling_violation, linear_oracle
from relaxot.regularized import soft_threshold
from relaxot.synthetic import two_cluster_barycenter_pair


def random_problem(seed, lam=0.01, k=1.5, pq=(2, 2), R=None, N=None):
    rng = np.random.default_rng(seed)
    R = R or int(rng.choice([2, 3]))
    N = N or int(rng.integers(5, 16))
    clouds = [rng.random((N, 2)) + rng.normal(size=2) for _ in range(R)]
    rho = rng.random(R)
    return BarycenterProblem(clouds, rho / rho.sum(), lam, k, pq, 3)


def test_problem_validation(rng):
    X = rng.random((4, 2))
    with pytest.raises(ValueError):
        BarycenterProblem([X, rng.random((5, 2))], [0.5, 0.5])
    with pytest.raises(ValueError):
        BarycenterProblem([X, X], [0.0, 0.0])
    with pytest.raises(ValueError):
        BarycenterProblem([X, X], [0.5, 0.4])
    with pytest.raises(ValueError):
        BarycenterProblem([X], [1.0], k=0.5)


def test_distance_to_itself_is_zero(rng):
    X = rng.random((8, 2))
    D, S, _ = asymmetric_distance(X, X, GradientOperator.from_cloud(X, 3), 0.0, 1.0)
    assert D == 0
    np.testing.assert_array_equal(S, np.eye(8))


@pytest.mark.parametrize("k", [1.0, 1.5, 3.0])
def test_distance_without_regularizer_is_oracle(rng, k):
    A, B = rng.random((10, 3)), rng.random((10, 3))
    D, S, _ = asymmetric_distance(A, B, GradientOperator.from_cloud(A, 3), 0.0, k)
    C = build_cost_matrix(A, B, 2)
    ref = linear_oracle(C, RelaxationBounds.from_kappa((1, 1, 0, k), 10))
    assert D == pytest.approx(np.sum(C * ref), abs=1e-12)
    assert coupling_violation(S, RelaxationBounds.asymmetric(10, k)) <= 1e-8


def test_distance_not_symmetric():
    # instance found by a random search; values from the transport oracle
    rng = np.random.default_rng(7)
    A, B = rng.random((6, 2)), rng.random((6, 2)) * 0.5
    d1 = asymmetric_distance(A, B, GradientOperator.from_cloud(A, 3), 0.0, 2.0)[0]
    d2 = asymmetric_distance(B, A, GradientOperator.from_cloud(B, 3), 0.0, 2.0)[0]
    assert d1 == pytest.approx(0.9659115175157655, abs=1e-12)
    assert d2 == pytest.approx(0.8882687095145348, abs=1e-12)
    assert d1 != pytest.approx(d2, abs=1e-3)


def test_distance_rejects_small_cap(rng):
    X = rng.random((4, 2))
    with pytest.raises(ValueError):
        asymmetric_distance(X, X, GradientOperator.from_cloud(X, 2), 0.0, 0.9)


def test_sigma_update_single_cloud_identity(rng):
    X = rng.random((7, 2))
    P = BarycenterProblem([X], [1.0], 0.0, 1.0)
    st = BarycenterState(X=X.copy(), couplings=[])
    sigma_update(st, P)
    np.testing.assert_array_equal(st.couplings[0], np.eye(7))
    assert barycenter_energy(P, st.X, st.couplings) == 0


def test_sigma_update_without_regularizer_is_oracle():
    P = random_problem(3, lam=0.0, k=1.0)
    st = BarycenterState(X=P.clouds[0] + 0.1, couplings=[])
    sigma_update(st, P)
    for Xr, S in zip(P.clouds, st.couplings):
        C = build_cost_matrix(Xr, st.X, 2)
        assert np.sum(C * S) == pytest.approx(np.sum(C * linear_oracle(C, P.bounds)), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_sigma_update_decreases_energy(seed):
    P = random_problem(seed, lam=0.05)
    rng = np.random.default_rng(seed)
    st = BarycenterState(X=P.clouds[0] + 0.05 * rng.normal(size=P.clouds[0].shape), couplings=[])
    sigma_update(st, P, max_iter=50)
    before = barycenter_energy(P, st.X, st.couplings)
    sigma_update(st, P)
    assert barycenter_energy(P, st.X, st.couplings) <= before + 1e-12
    for S in st.couplings:
        assert coupling_violation(S, P.bounds) <= 1e-8


def test_x_update_single_cloud_identity(rng):
    X = rng.random((6, 3))
    P = BarycenterProblem([X], [1.0], 0.0, 1.0)
    st = BarycenterState(X=np.zeros_like(X), couplings=[np.eye(6)])
    np.testing.assert_allclose(x_update_sobolev(st, P), X, atol=1e-14)


def test_x_update_two_identical_clouds(rng):
    X = rng.random((6, 2))
    P = BarycenterProblem([X, X.copy()], [0.5, 0.5], 0.3, 1.0)
    st = BarycenterState(X=rng.random((6, 2)), couplings=[np.eye(6), np.eye(6)])
    np.testing.assert_allclose(x_update_sobolev(st, P), X, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_x_update_stationary_and_finite_differences(seed):
    P = random_problem(seed, lam=0.2, k=2.0)
    st = BarycenterState(X=P.clouds[0].copy(), couplings=[])
    sigma_update(st, P)
    g0 = x_gradient_sobolev(P, st.X, st.couplings)
    e0 = barycenter_energy(P, st.X, st.couplings)
    X = x_update_sobolev(st, P)
    assert barycenter_energy(P, X, st.couplings) <= e0 + 1e-12
    g = x_gradient_sobolev(P, X, st.couplings)
    assert np.linalg.norm(g) <= 1e-8 * (1 + np.linalg.norm(g0))
    # gradient formula against central differences of the energy at a perturbed point
    Z = X + 0.1 * np.random.default_rng(seed).normal(size=X.shape)
    gz = x_gradient_sobolev(P, Z, st.couplings)
    h = 1e-6
    for i in range(X.shape[0]):
        for c in range(X.shape[1]):
            E = np.zeros_like(Z)
            E[i, c] = h
            fd = (barycenter_energy(P, Z + E, st.couplings) - barycenter_energy(P, Z - E, st.couplings)) / (2 * h)
            assert abs(fd - gz[i, c]) <= 1e-5 * max(1.0, abs(gz[i, c]))


def test_x_update_unused_points_kept():
    rng = np.random.default_rng(0)
    X = rng.random((4, 2))
    S = np.zeros((4, 4))
    S[:, 0] = 1.0  # every point sent to barycenter point 0
    P = BarycenterProblem([X], [1.0], 0.0, 4.0)
    X0 = rng.random((4, 2))
    st = BarycenterState(X=X0.copy(), couplings=[S])
    Xn = x_update_sobolev(st, P)
    np.testing.assert_allclose(Xn[0], X.mean(0), atol=1e-14)
    np.testing.assert_array_equal(Xn[1:], X0[1:])


def test_soft_threshold_example():
    np.testing.assert_array_equal(soft_threshold(np.array([[2.0], [0.0]]), 1.0), [[1.0], [0.0]])


def test_x_update_tv_without_regularizer_closed_form():
    P = random_problem(5, lam=0.0, k=2.0, pq=(1, 1))
    st = BarycenterState(X=P.clouds[0].copy(), couplings=[])
    sigma_update(st, P)
    S = st.couplings
    c = sum(rho * Sr.sum(0) for rho, Sr in zip(P.rho, S))
    ref = sum(rho * Sr.T @ Xr for rho, Sr, Xr in zip(P.rho, S, P.clouds)) / c[:, None]
    st.X = P.clouds[1].copy()
    X, rep = x_update_tv(st, P)
    used = c > 0
    np.testing.assert_allclose(X[used], ref[used], atol=1e-6)


@pytest.mark.parametrize("seed, value", [(0, 0.5238227971873297), (1, 0.24315547103140805),
                                         (2, 0.47316044823509484)])
def test_x_update_tv_matches_qp(seed, value):
    # objective minima from a conic solver on the same fixed-coupling problem
    rng = np.random.default_rng(100 + seed)
    N = int(rng.integers(6, 11))
    clouds = [rng.random((N, 2)) for _ in range(2)]
    P = BarycenterProblem(clouds, [0.6, 0.4], 0.05, 1.5, (1, 1), 3)
    st = BarycenterState(X=clouds[0].copy(), couplings=[])
    sigma_update(st, P)
    before = barycenter_energy(P, st.X, st.couplings)
    X, rep = x_update_tv(st, P)
    after = barycenter_energy(P, X, st.couplings)
    assert after <= before
    assert after == pytest.approx(value, rel=1e-4)


def test_bcd_one_hot_terminates():
    P = random_problem(8, lam=0.0, k=1.0, R=3)
    P.rho = np.array([0.0, 1.0, 0.0])
    st = bcd_barycenter(P, init=P.clouds[1])
    assert st.energy == [0.0] and st.converged
    np.testing.assert_array_equal(st.X, P.clouds[1])
    assert st.couplings[0] is None and st.couplings[2] is None


@pytest.mark.parametrize("seed", range(20))
def test_bcd_monotone_and_bounded(seed):
    rng = np.random.default_rng(1000 + seed)
    R, N = int(rng.choice([2, 3])), int(rng.integers(5, 31))
    clouds = [rng.random((N, 2)) + rng.normal(size=2) for _ in range(R)]
    rho = rng.random(R)
    lam = float(rng.choice([0.0, 1e-3, 1e-2, 0.1]))
    k = float(rng.choice([1, 1.5, 2, 3]))
    P = BarycenterProblem(clouds, rho / rho.sum(), lam, k)
    st = bcd_barycenter(P, outer_iters=10, inner_max_iter=500)
    e = np.asarray(st.energy)
    assert np.all(np.diff(e) <= 1e-8)
    for S in st.couplings:
        assert coupling_violation(S, P.bounds) <= 1e-8
    if lam == 0:
        pts = np.vstack(clouds)
        assert np.all(st.X >= pts.min(0) - 1e-6) and np.all(st.X <= pts.max(0) + 1e-6)


def test_bcd_tv_runs_and_reports(rng):
    P = random_problem(9, lam=0.02, k=2.0, pq=(1, 1), N=8)
    st = bcd_barycenter(P, outer_iters=5)
    assert np.all(np.isfinite(st.X)) and len(st.energy) >= 1
    for S in st.couplings:
        assert coupling_violation(S, P.bounds) <= 1e-8


def test_state_save(tmp_path):
    P = random_problem(2, lam=0.01, N=6)
    st = bcd_barycenter(P, outer_iters=3)
    st.save(tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"barycenter.csv", "barycenter_trace.json", "barycenter_coupling_0.csv"} <= names


@pytest.mark.slow
def test_two_clusters_retained():
    X1, X2 = two_cluster_barycenter_pair(seed=0)
    lab = np.r_[np.zeros(30, int), np.ones(10, int)]

    def gap(X):
        A, B = X[lab == 0], X[lab == 1]
        return np.min(np.linalg.norm(A[:, None] - B[None], axis=2))

    # cut just below the gap so the closest inter-cluster pair stays split
    g = min(gap(X1), gap(X2)) * (1 - 1e-9)
    count = lambda X: len(np.unique(fcluster(linkage(X, "single"), g, "distance")))
    assert count(X1) == count(X2) == 2
    st = bcd_barycenter(BarycenterProblem([X1, X2], [0.7, 0.3], 0.0005, 20))
    assert count(st.X) == 2
