import numpy as np
import pytest

from dandelion.autodiff import GradientTape, Tensor, backward
from dandelion.embedding import FeatherParams, feather_embed, feather_embed_vertices
from dandelion.geometry import build_graph

from conftest import central_difference, relative_errors


def straight_line_embedding(vertices, eval_points, scales):
    """Independent loop-based reference for the embedding pipeline."""
    vertices = np.asarray(vertices, dtype=np.float64)
    n, d = vertices.shape
    # step 1: affinities from squared distances, zero diagonal
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                w = float(np.sum((vertices[i] - vertices[j]) ** 2))
                a[i, j] = 1.0 / (1.0 + w)
    # step 2: row-normalize
    walk = np.zeros((n, n))
    for i in range(n):
        walk[i] = a[i] / a[i].sum()
    # steps 3-4: characteristic values per scale/feature/eval point, pooled
    out = []
    for p in range(1, scales + 1):
        m = np.linalg.matrix_power(walk, p)
        for f in range(d):
            for theta in eval_points:
                cos_vals = [
                    sum(m[v, u] * np.cos(theta * vertices[u, f]) for u in range(n))
                    for v in range(n)
                ]
                sin_vals = [
                    sum(m[v, u] * np.sin(theta * vertices[u, f]) for u in range(n))
                    for v in range(n)
                ]
                out.append(np.mean(cos_vals))
                out.append(np.mean(sin_vals))
    return np.array(out)


class TestFeatherParams:
    def test_default_dims(self):
        params = FeatherParams()
        assert len(params.eval_points) == 8
        assert params.scales == 2
        assert params.embedding_dim(64) == 2048

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            FeatherParams(eval_points=())
        with pytest.raises(ValueError):
            FeatherParams(eval_points=(1.0, 0.5))
        with pytest.raises(ValueError):
            FeatherParams(eval_points=(0.0, 1.0))
        with pytest.raises(ValueError):
            FeatherParams(scales=0)
        with pytest.raises(ValueError):
            FeatherParams(affinity="gaussian")


class TestFeatherEmbed:
    def test_single_centroid_plus_origin_closed_form(self):
        c = 0.7
        params = FeatherParams(eval_points=(1.3,), scales=1)
        graph = build_graph(np.array([[c]]))
        got = feather_embed(graph, params).values
        theta = 1.3
        expected = np.array([
            (np.cos(theta * 0.0) + np.cos(theta * c)) / 2.0,
            (np.sin(theta * 0.0) + np.sin(theta * c)) / 2.0,
        ])
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_matches_straight_line_reference(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 6))
            d = int(rng.integers(1, 5))
            vertices = rng.normal(size=(n, d))
            pts = tuple(sorted(rng.uniform(0.2, 4.0, size=int(rng.integers(1, 4)))))
            scales = int(rng.integers(1, 4))
            params = FeatherParams(eval_points=pts, scales=scales)
            got = feather_embed_vertices(vertices, params).data.reshape(-1)
            expected = straight_line_embedding(vertices, pts, scales)
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_identical_graphs_identical_embeddings(self, rng):
        vertices = rng.normal(size=(4, 3))
        params = FeatherParams(eval_points=(0.5, 1.0), scales=2)
        a = feather_embed_vertices(vertices, params).data
        b = feather_embed_vertices(vertices.copy(), params).data
        np.testing.assert_array_equal(a, b)

    def test_permutation_invariance(self, rng):
        params = FeatherParams(eval_points=(0.5, 1.5, 3.0), scales=2)
        for _ in range(10):
            centroids = rng.normal(size=(5, 4))
            base = feather_embed(build_graph(centroids), params).values
            perm = rng.permutation(5)
            permuted = feather_embed(build_graph(centroids[perm]), params).values
            np.testing.assert_allclose(permuted, base, atol=1e-9)

    def test_length_and_range(self, rng):
        params = FeatherParams(eval_points=(0.5, 2.0), scales=3)
        for _ in range(10):
            d = int(rng.integers(1, 6))
            vertices = rng.normal(size=(int(rng.integers(2, 7)), d)) * 3.0
            values = feather_embed_vertices(vertices, params).data.reshape(-1)
            assert values.size == params.embedding_dim(d)
            assert np.all(values >= -1.0 - 1e-12)
            assert np.all(values <= 1.0 + 1e-12)

    def test_rejects_single_vertex(self):
        params = FeatherParams(eval_points=(1.0,), scales=1)
        with pytest.raises(ValueError):
            feather_embed_vertices(np.array([[1.0, 2.0]]), params)

    def test_gradients_match_finite_differences(self, rng):
        params = FeatherParams(eval_points=(0.7, 2.1), scales=2)
        vertices = rng.uniform(-1, 1, size=(4, 3))
        weights = rng.uniform(-1, 1, size=(1, params.embedding_dim(3)))

        def scalar_embed(v):
            phi = feather_embed_vertices(v, params)
            from dandelion import autodiff as ad
            return ad.tsum(ad.mul(phi, Tensor(weights)))

        tape = GradientTape()
        v = tape.watch(Tensor(vertices))
        grads = backward(tape, scalar_embed(v))

        def f(arr):
            return scalar_embed(Tensor(arr)).item()

        fd = central_difference(f, vertices.copy())
        errs = relative_errors(grads[v], fd)
        assert np.max(errs) <= 1e-4
