import numpy as np
import pytest

from helpers import best_medoids_bruteforce
from tformer_lab import kernels
from tformer_lab.rng import SeededRng


@pytest.fixture(autouse=True)
def restore_backend():
    before = kernels.active_backend()
    yield
    kernels.set_backend(before)


def line_points():
    return np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [13.0]])


def test_pairwise_dist_matches_norm_loop():
    rng = SeededRng(0)
    pts = rng.normal((7, 3))
    dist = kernels.pairwise_dist(pts)
    for i in range(7):
        for j in range(7):
            want = np.sqrt(((pts[i] - pts[j]) ** 2).sum())
            assert abs(dist[i, j] - want) <= 1e-12


def test_pam_worked_example_line():
    dist = kernels.pairwise_dist(line_points())
    medoids = kernels.pam_swap(dist, kernels.pam_build(dist, 2))
    assert sorted(medoids.tolist()) == [1, 4]
    assert kernels.pam_cost(dist, medoids) == pytest.approx(5.0, abs=1e-12)


def test_pam_matches_bruteforce_on_random_instances():
    rng = SeededRng(42)
    for trial in range(60):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(1, min(n, 4)))
        d = int(rng.integers(1, 5))
        pts = rng.normal((n, d))
        dist = kernels.pairwise_dist(pts)
        medoids = kernels.pam_swap(dist, kernels.pam_build(dist, k))
        got = kernels.pam_cost(dist, medoids)
        want, _ = best_medoids_bruteforce(dist, k)
        assert got == pytest.approx(want, abs=1e-9), f"trial {trial}"


def test_pam_k_equals_n():
    pts = SeededRng(1).normal((4, 2))
    dist = kernels.pairwise_dist(pts)
    medoids = kernels.pam_swap(dist, kernels.pam_build(dist, 4))
    assert sorted(medoids.tolist()) == [0, 1, 2, 3]
    assert kernels.pam_cost(dist, medoids) == 0.0


def test_kmeans_assign_update_wcss():
    pts = line_points()
    centroids = np.array([[1.0], [11.0]])
    labels = kernels.kmeans_assign(pts, centroids)
    assert labels.tolist() == [0, 0, 0, 1, 1, 1]
    fresh = kernels.kmeans_update(pts, labels, centroids)
    assert fresh[0, 0] == pytest.approx(1.0)
    assert fresh[1, 0] == pytest.approx(34.0 / 3.0)
    wcss = kernels.kmeans_wcss(pts, fresh, labels)
    want = sum((x - 1.0) ** 2 for x in [0, 1, 2]) + \
        sum((x - 34.0 / 3.0) ** 2 for x in [10, 11, 13])
    assert wcss == pytest.approx(want, abs=1e-9)


def test_kmeans_update_keeps_centroid_of_empty_cluster():
    pts = np.array([[0.0], [1.0]])
    labels = np.array([0, 0], dtype=np.int64)
    centroids = np.array([[0.5], [99.0]])
    out = kernels.kmeans_update(pts, labels, centroids)
    assert out[1, 0] == 99.0
    assert out[0, 0] == 0.5


def test_backends_agree_on_tie_free_data():
    rng = SeededRng(7)
    pts = rng.normal((20, 4))
    results = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        dist = kernels.pairwise_dist(pts)
        medoids = kernels.pam_swap(dist, kernels.pam_build(dist, 4))
        labels = kernels.kmeans_assign(pts, pts[:4].copy())
        results[backend] = (dist, np.sort(medoids), labels)
    a, b = results["numpy"], results["numba"]
    assert np.max(np.abs(a[0] - b[0])) <= 1e-12
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[2], b[2])


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError, match="numpy"):
        kernels.set_backend("cuda")


def test_active_backend_reports_current():
    kernels.set_backend("numpy")
    assert kernels.active_backend() == "numpy"
