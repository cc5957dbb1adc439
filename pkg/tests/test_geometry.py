import numpy as np
import pytest

from dandelion.errors import DegenerateVectorError, EmptyCategoryError
from dandelion.geometry import (
    Dandelion,
    Membership,
    assign_membership,
    average_compactness,
    build_graph,
    fit_dandelion,
    separability_sp,
    separation_loss,
)


def brute_force_membership(features, centroids, max_dev):
    """Oracle: explicit loop over categories, threshold on the winner."""
    k = centroids.shape[0]
    out = np.empty(features.shape[0], dtype=np.int64)
    for idx, x in enumerate(features):
        best, best_dev = None, None
        for i in range(k):
            mu = centroids[i]
            cosine = float(x @ mu / (np.linalg.norm(x) * np.linalg.norm(mu)))
            dev = 1.0 - min(1.0, max(-1.0, cosine))
            if best_dev is None or dev < best_dev:
                best, best_dev = i, dev
        out[idx] = best + 1 if best_dev <= max_dev[best] else k + 1
    return out


def brute_force_separation(centroids):
    k = centroids.shape[0]
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            a, b = centroids[i], centroids[j]
            total += float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return 2.0 / (k * (k - 1)) * total


def random_unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestFitDandelion:
    def test_identical_points(self):
        p = np.array([0.6, 0.8])
        dd = fit_dandelion(np.tile(p, (5, 1)), np.ones(5, dtype=int), 1)
        np.testing.assert_allclose(dd.centroids, [p], atol=1e-12)
        assert dd.max_dev[0] == pytest.approx(0.0, abs=1e-12)
        assert dd.counts[0] == 5

    def test_right_angle_pair(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        dd = fit_dandelion(feats, np.array([1, 1]), 1)
        np.testing.assert_allclose(dd.centroids, [[0.5, 0.5]], atol=1e-12)
        assert dd.max_dev[0] == pytest.approx(1.0 - np.cos(np.pi / 4), abs=1e-12)

    def test_antipodal_degenerate(self):
        feats = np.array([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(DegenerateVectorError):
            fit_dandelion(feats, np.array([1, 1]), 1)

    def test_empty_category_named(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(EmptyCategoryError, match="category 2"):
            fit_dandelion(feats, np.array([1, 1]), 2)

    def test_centroid_is_category_mean(self, rng):
        feats = random_unit_rows(rng, 40, 6)
        labels = rng.integers(1, 4, size=40)
        labels[:3] = [1, 2, 3]
        dd = fit_dandelion(feats, labels, 3)
        for i in range(1, 4):
            np.testing.assert_allclose(dd.centroids[i - 1], feats[labels == i].mean(axis=0), atol=1e-12)


class TestAssignMembership:
    def test_exact_centroid_match(self):
        centroids = np.eye(3)
        dd = Dandelion(centroids=centroids, max_dev=np.full(3, 0.1), counts=np.ones(3, dtype=int))
        out = assign_membership(centroids[1].reshape(1, -1), dd)
        assert out.assignments.tolist() == [2]

    def test_all_outside_goes_unknown(self):
        dd = Dandelion(centroids=np.eye(2), max_dev=np.full(2, 0.01), counts=np.ones(2, dtype=int))
        x = np.array([[1.0, 1.0]]) / np.sqrt(2)
        out = assign_membership(x, dd)
        assert out.assignments.tolist() == [3]

    def test_tie_breaks_to_lowest_index(self):
        dd = Dandelion(
            centroids=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
            max_dev=np.full(3, 1.5),
            counts=np.ones(3, dtype=int),
        )
        out = assign_membership(np.array([[1.0, 0.0]]), dd)
        assert out.assignments.tolist() == [1]

    def test_scale_invariance(self, rng):
        centroids = random_unit_rows(rng, 4, 8)
        dd = Dandelion(centroids=centroids, max_dev=rng.uniform(0.05, 0.8, size=4),
                       counts=np.ones(4, dtype=int))
        x = random_unit_rows(rng, 50, 8)
        base = assign_membership(x, dd).assignments
        scaled = assign_membership(7.3 * x, dd).assignments
        np.testing.assert_array_equal(base, scaled)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 6))
            centroids = random_unit_rows(rng, k, 5) * rng.uniform(0.3, 1.0, size=(k, 1))
            max_dev = rng.uniform(0.0, 1.2, size=k)
            dd = Dandelion(centroids=centroids, max_dev=max_dev, counts=np.ones(k, dtype=int))
            x = random_unit_rows(rng, 20, 5)
            expected = brute_force_membership(x, centroids, max_dev)
            np.testing.assert_array_equal(assign_membership(x, dd).assignments, expected)


class TestSeparationLoss:
    def test_orthogonal_pair(self):
        assert separation_loss(np.eye(2)).item() == pytest.approx(0.0, abs=1e-12)

    def test_identical_pair(self):
        c = np.array([[0.6, 0.8], [0.6, 0.8]])
        assert separation_loss(c).item() == pytest.approx(1.0, abs=1e-12)

    def test_three_orthogonal(self):
        assert separation_loss(np.eye(3)).item() == pytest.approx(0.0, abs=1e-12)

    def test_requires_two(self):
        with pytest.raises(ValueError):
            separation_loss(np.array([[1.0, 0.0]]))

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 7))
            c = rng.normal(size=(k, 6))
            got = separation_loss(c).item()
            expected = brute_force_separation(c)
            assert abs(got - expected) <= 1e-12
            assert -1.0 <= got <= 1.0


class TestBuildGraph:
    def test_coincident_centroids(self):
        g = build_graph(np.array([[0.5, 0.5], [0.5, 0.5]]))
        assert g.weights[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_unit_centroid_to_origin(self):
        g = build_graph(np.array([[1.0, 0.0]]))
        assert g.vertices.shape == (2, 2)
        assert g.weights[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_zero_diagonal(self, rng):
        g = build_graph(rng.normal(size=(4, 5)))
        np.testing.assert_allclose(g.weights, g.weights.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(g.weights), 0.0, atol=1e-12)

    def test_weights_recomputable_from_vertices(self, rng):
        g = build_graph(rng.normal(size=(3, 4)))
        for i in range(4):
            for j in range(4):
                d = g.vertices[i] - g.vertices[j]
                assert g.weights[i, j] == pytest.approx(float(d @ d), abs=1e-10)


class TestSeparabilitySP:
    def _membership(self, values):
        return Membership(assignments=np.asarray(values, dtype=np.int64))

    def test_identical_combined_centroids(self):
        f_s = np.tile([0.6, 0.8], (4, 1))
        f_t = np.tile([0.6, 0.8], (2, 1))
        sp = separability_sp(f_s, f_t, np.array([1, 1, 2, 2]), self._membership([1, 2]), 2)
        assert sp == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_combined_centroids(self):
        f_s = np.array([[1.0, 0.0], [0.0, 1.0]])
        f_t = np.array([[1.0, 0.0], [0.0, 1.0]])
        sp = separability_sp(f_s, f_t, np.array([1, 2]), self._membership([1, 2]), 2)
        assert sp == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 5))
            f_s = random_unit_rows(rng, 30, 6)
            f_t = random_unit_rows(rng, 25, 6)
            y_s = rng.integers(1, k + 1, size=30)
            y_s[:k] = np.arange(1, k + 1)
            memb = rng.integers(1, k + 2, size=25)
            got = separability_sp(f_s, f_t, y_s, self._membership(memb), k)
            mus = []
            for i in range(1, k + 1):
                members = np.vstack([f_s[y_s == i], f_t[memb == i]])
                mus.append(members.mean(axis=0))
            total, count = 0.0, 0
            for i in range(k):
                for j in range(i + 1, k):
                    a, b = mus[i], mus[j]
                    total += float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
                    count += 1
            assert abs(got - total / count) <= 1e-12

    def test_requires_two_categories(self):
        with pytest.raises(ValueError):
            separability_sp(np.array([[1.0, 0.0]]), np.zeros((0, 2)), np.array([1]),
                            self._membership([]), 1)

    def test_skips_missing_with_warning(self):
        f_s = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
        with pytest.warns(UserWarning, match="skipped"):
            sp = separability_sp(f_s, np.zeros((0, 2)), np.array([1, 2, 2]),
                                 self._membership([]), 3)
        assert np.isfinite(sp)


class TestAverageCompactness:
    def test_singletons(self):
        feats = np.eye(3)
        assert average_compactness(feats, np.array([1, 2, 3]), 3) == pytest.approx(0.0, abs=1e-12)

    def test_right_angle_pair(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        got = average_compactness(feats, np.array([1, 1]), 1)
        assert got == pytest.approx(1.0 - np.cos(np.pi / 4), abs=1e-12)

    def test_equals_mean_of_fit_max_dev(self, rng):
        feats = random_unit_rows(rng, 40, 5)
        labels = rng.integers(1, 4, size=40)
        labels[:3] = [1, 2, 3]
        dd = fit_dandelion(feats, labels, 3)
        assert average_compactness(feats, labels, 3) == pytest.approx(float(dd.max_dev.mean()), abs=1e-12)
