import math

import numpy as np
import pytest

from kgdistill.errors import DimMismatch, TooFewCategories, ZeroVector
from kgdistill.vkg import (
    DYNAMIC,
    DYNAMIC_NO_SMOOTH,
    STATIC,
    CentroidBatch,
    batch_centroids,
    load_vkg,
    save_vkg,
    vkg_calibrate,
    vkg_init,
    vkg_update,
)


def full_centroids(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return CentroidBatch(centroids=arr, counts=np.ones(arr.shape[0], dtype=np.int64))


class TestInit:
    def test_copies_input_exactly(self):
        emb = np.arange(24, dtype=np.float64).reshape(3, 8)
        g = vkg_init(emb)
        np.testing.assert_array_equal(g.nodes, emb)
        emb[0, 0] = -1  # caller mutation must not leak in
        assert g.nodes[0, 0] == 0.0

    def test_static_updates_are_noops(self):
        g = vkg_init(np.eye(3), mode=STATIC)
        before = g.nodes.copy()
        for _ in range(5):
            vkg_update(g, full_centroids(np.ones((3, 3))))
        np.testing.assert_array_equal(g.nodes, before)

    def test_deterministic_from_same_source(self, tmp_path):
        from kgdistill.embio import load_embeddings, save_embeddings

        rng = np.random.default_rng(0)
        save_embeddings(tmp_path / "cat.kgde", rng.standard_normal((4, 6)))
        a = vkg_init(load_embeddings(tmp_path / "cat.kgde"))
        b = vkg_init(load_embeddings(tmp_path / "cat.kgde"))
        np.testing.assert_array_equal(a.nodes, b.nodes)

    def test_rejects_single_category(self):
        with pytest.raises(TooFewCategories):
            vkg_init(np.ones((1, 8)))


class TestCentroids:
    def test_hand_mean(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        p_hat = np.array([[0.9, 0.1], [0.8, 0.2]])  # both argmax to category 0
        c = batch_centroids(feats, p_hat)
        np.testing.assert_allclose(c.centroids[0], [0.5, 0.5], atol=1e-15)
        assert c.counts.tolist() == [2, 0]

    def test_absent_category(self):
        feats = np.array([[1.0, 0.0]])
        p_hat = np.array([[0.2, 0.7, 0.1]])
        c = batch_centroids(feats, p_hat)
        assert c.counts.tolist() == [0, 1, 0]
        assert not c.present[2]

    def test_exact_tie_goes_to_lowest_index(self):
        c = batch_centroids(np.array([[3.0, 4.0]]), np.array([[0.5, 0.5]]))
        assert c.counts.tolist() == [1, 0]
        np.testing.assert_array_equal(c.centroids[0], [3.0, 4.0])

    def test_empty_batch(self):
        c = batch_centroids(np.zeros((0, 4)), np.zeros((0, 3)))
        assert c.counts.tolist() == [0, 0, 0]
        assert not c.present.any()

    def test_row_count_mismatch(self):
        with pytest.raises(DimMismatch):
            batch_centroids(np.zeros((2, 4)), np.zeros((3, 3)))


class TestUpdate:
    def test_lambda_one_freezes_nodes(self):
        g = vkg_init(np.eye(3), lam=1.0, mode=DYNAMIC_NO_SMOOTH)
        before = g.nodes.copy()
        vkg_update(g, full_centroids(np.full((3, 3), 7.0)))
        np.testing.assert_array_equal(g.nodes, before)

    @pytest.mark.parametrize("lam", [0.9, 0.99])
    def test_geometric_contraction(self, lam):
        rng = np.random.default_rng(1)
        v0 = rng.standard_normal((3, 6))
        theta = rng.standard_normal((3, 6))
        g = vkg_init(v0.copy(), lam=lam, mode=DYNAMIC_NO_SMOOTH)
        for n in range(1, 101):
            vkg_update(g, full_centroids(theta))
            expect = lam**n * np.linalg.norm(v0 - theta, axis=1)
            got = np.linalg.norm(g.nodes - theta, axis=1)
            np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_absent_categories_unchanged_by_ema(self):
        g = vkg_init(np.eye(3), lam=0.5, mode=DYNAMIC_NO_SMOOTH)
        c = CentroidBatch(
            centroids=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
            counts=np.array([4, 0, 0]),
        )
        vkg_update(g, c)
        np.testing.assert_allclose(g.nodes[0], [0.5, 0.5, 0.0], atol=1e-15)
        np.testing.assert_array_equal(g.nodes[1], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(g.nodes[2], [0.0, 0.0, 1.0])

    def test_identical_centroids_smoothing_matches_dense_oracle(self):
        # Identical centroids trip the bandwidth guard: the affinity becomes
        # all-ones off the diagonal and row-normalized W is near-averaging.
        rng = np.random.default_rng(2)
        v0 = rng.standard_normal((4, 5))
        theta = np.tile(rng.standard_normal(5), (4, 1))
        lam, alpha = 0.8, 0.5

        g = vkg_init(v0.copy(), lam=lam, alpha=alpha, mode=DYNAMIC)
        with pytest.warns(UserWarning):
            vkg_update(g, full_centroids(theta))

        after_ema = lam * v0 + (1 - lam) * theta
        a = np.ones((4, 4)) - np.eye(4)
        l = a / 3.0  # degrees are all 3
        w = np.linalg.inv(np.eye(4) - alpha * l)
        w = w / w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(g.nodes, w @ after_ema, atol=1e-10)

    def test_smoothing_vanishes_as_alpha_to_zero(self):
        rng = np.random.default_rng(3)
        v0 = rng.standard_normal((5, 8))
        theta = rng.standard_normal((5, 8))
        smooth = vkg_init(v0.copy(), lam=0.7, alpha=1e-8, mode=DYNAMIC)
        plain = vkg_init(v0.copy(), lam=0.7, mode=DYNAMIC_NO_SMOOTH)
        vkg_update(smooth, full_centroids(theta))
        vkg_update(plain, full_centroids(theta))
        assert np.abs(smooth.nodes - plain.nodes).max() < 1e-6

    def test_raw_smoothing_flag(self):
        rng = np.random.default_rng(4)
        v0 = rng.standard_normal((4, 3))
        theta = rng.standard_normal((4, 3))
        raw = vkg_init(v0.copy(), lam=0.5, alpha=0.5, mode=DYNAMIC, raw_smoothing=True)
        norm = vkg_init(v0.copy(), lam=0.5, alpha=0.5, mode=DYNAMIC)
        vkg_update(raw, full_centroids(theta))
        vkg_update(norm, full_centroids(theta))
        assert not np.allclose(raw.nodes, norm.nodes)


class TestCalibrate:
    def test_identical_nodes_give_uniform_weighting(self):
        g = vkg_init(np.tile([1.0, 0.0], (3, 1)))
        p_hat = np.array([[0.5, 0.3, 0.2]])
        out = vkg_calibrate(g, np.array([[2.0, 1.0]]), p_hat)
        np.testing.assert_allclose(out, p_hat / 3.0, atol=1e-12)

    def test_aligned_feature_scalar_softmax_oracle(self):
        g = vkg_init(np.eye(3))
        f = np.array([[0.0, 0.0, 2.5]])  # aligned with node 2, orthogonal to others
        p_hat = np.ones((1, 3))
        out = vkg_calibrate(g, f, p_hat, temperature=1.0)
        e = math.exp(1.0)
        expect = np.array([1.0, 1.0, e]) / (2.0 + e)
        np.testing.assert_allclose(out[0], expect, atol=1e-4)
        assert abs(expect[0] - 0.2119) < 1e-4 and abs(expect[2] - 0.5761) < 1e-4

    def test_one_hot_teacher_stays_one_hot(self):
        g = vkg_init(np.eye(3))
        out = vkg_calibrate(g, np.array([[1.0, 1.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
        assert out[0, 0] == 0.0 and out[0, 2] == 0.0 and out[0, 1] > 0.0

    def test_feature_scale_invariance(self):
        rng = np.random.default_rng(5)
        g = vkg_init(rng.standard_normal((4, 6)))
        f = rng.standard_normal((3, 6))
        p_hat = rng.dirichlet(np.ones(4), size=3)
        a = vkg_calibrate(g, f, p_hat)
        b = vkg_calibrate(g, 137.0 * f, p_hat)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_outputs_in_unit_interval(self):
        rng = np.random.default_rng(6)
        g = vkg_init(rng.standard_normal((3, 4)))
        out = vkg_calibrate(g, rng.standard_normal((10, 4)), rng.dirichlet(np.ones(3), size=10))
        assert (out >= 0).all() and (out <= 1).all()

    def test_zero_feature_named(self):
        g = vkg_init(np.eye(2))
        with pytest.raises(ZeroVector) as exc:
            vkg_calibrate(g, np.zeros((1, 2)), np.ones((1, 2)))
        assert exc.value.kind == "feature" and exc.value.row == 0

    def test_zero_node_named(self):
        g = vkg_init(np.vstack([np.zeros(2), np.ones(2)]))
        with pytest.raises(ZeroVector) as exc:
            vkg_calibrate(g, np.ones((1, 2)), np.ones((1, 2)))
        assert exc.value.kind == "node" and exc.value.row == 0

    def test_temperature_sharpens(self):
        g = vkg_init(np.eye(3))
        f = np.array([[0.0, 0.0, 1.0]])
        hot = vkg_calibrate(g, f, np.ones((1, 3)), temperature=1.0)
        cold = vkg_calibrate(g, f, np.ones((1, 3)), temperature=0.1)
        assert cold[0, 2] > hot[0, 2]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        g = vkg_init(rng.standard_normal((3, 5)), lam=0.9, alpha=0.3, mode=DYNAMIC)
        save_vkg(g, tmp_path / "vkg")
        back = load_vkg(tmp_path / "vkg")
        np.testing.assert_array_equal(
            back.nodes, g.nodes.astype(np.float32).astype(np.float64)
        )
        assert back.lam == 0.9 and back.alpha == 0.3 and back.mode == DYNAMIC

    def test_static_round_trip_bit_identical_after_updates(self, tmp_path):
        g = vkg_init(np.eye(4), mode=STATIC)
        init = g.nodes.copy()
        for _ in range(3):
            vkg_update(g, full_centroids(np.random.default_rng(8).standard_normal((4, 4))))
        save_vkg(g, tmp_path / "vkg")
        np.testing.assert_array_equal(load_vkg(tmp_path / "vkg").nodes, init)
