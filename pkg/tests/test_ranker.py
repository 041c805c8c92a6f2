"""View ranker: architecture shapes, hinge loss, score normalization,
weighted descriptor."""

import numpy as np
import pytest

from pfmn import ranker as R
from pfmn import tensor as tz
from pfmn.errors import DimensionError, NumericError
from pfmn.registry import ParamRegistry
from pfmn.tensor import Tensor


@pytest.fixture(scope="module")
def setup():
    reg = ParamRegistry()
    params = R.RankerParams.create(reg, rng=42)
    return reg, params


def random_map(seed, batch=None):
    rng = np.random.default_rng(seed)
    shape = R.MAP_SHAPE if batch is None else (batch, *R.MAP_SHAPE)
    return (rng.standard_normal(shape, dtype=np.float32) * 0.05)


class TestScoreView:
    def test_output_in_unit_interval(self, setup):
        _, params = setup
        s = R.score_view(random_map(0), params)
        assert s.shape == ()
        assert 0.0 < float(s.data) < 1.0

    def test_zero_input_zero_bias_gives_half(self, setup):
        _, params = setup
        saved = params.proj_b.data.copy()
        params.proj_b.data[:] = 0
        try:
            s = R.score_view(np.zeros(R.MAP_SHAPE, dtype=np.float32), params)
            assert float(s.data) == pytest.approx(0.5, abs=1e-6)
        finally:
            params.proj_b.data[:] = saved

    def test_stage_shapes(self, setup):
        _, params = setup
        stages = R.feature_stack(random_map(1), params)
        assert stages[0].shape == (6, 6, 2048)
        assert stages[1].shape == (5, 5, 1024)
        assert stages[2].shape == (4, 4, 512)

    def test_batch_scores(self, setup):
        _, params = setup
        s = R.score_view(random_map(2, batch=3), params, training=True)
        assert s.shape == (3,)
        assert np.all((s.data > 0) & (s.data < 1))

    def test_inference_deterministic(self, setup):
        _, params = setup
        m = random_map(3)
        a = R.score_view(m, params)
        b = R.score_view(m, params)
        assert float(a.data) == float(b.data)

    def test_wrong_shape_rejected(self, setup):
        _, params = setup
        with pytest.raises(DimensionError):
            R.score_view(np.zeros((7, 7, 100), dtype=np.float32), params)


class TestRankLoss:
    def test_margin_satisfied(self):
        loss = R.rank_loss(Tensor(1.0), Tensor(0.0))
        assert float(loss.data) == pytest.approx(0.0)

    def test_equal_scores(self):
        loss = R.rank_loss(Tensor(0.4), Tensor(0.4))
        assert float(loss.data) == pytest.approx(1.0)

    def test_inverted_pair(self):
        loss = R.rank_loss(Tensor(0.2), Tensor(0.9))
        assert float(loss.data) == pytest.approx(1.7)

    def test_batch_hinge(self):
        pos = Tensor(np.array([1.0, 0.4, 0.2], dtype=np.float32))
        neg = Tensor(np.array([0.0, 0.4, 0.9], dtype=np.float32))
        loss = R.rank_loss(pos, neg)
        np.testing.assert_allclose(loss.data, [0.0, 1.0, 1.7], rtol=1e-6)

    def test_gradient_direction(self):
        pos = Tensor(0.3, requires_grad=True)
        neg = Tensor(0.6, requires_grad=True)
        tz.backward(R.rank_loss(pos, neg))
        assert pos.grad < 0  # descent raises the positive score
        assert neg.grad > 0

    def test_l2_penalty_positive(self, setup):
        reg, _ = setup
        pen = R.l2_penalty(reg)
        assert float(pen.data) > 0


class TestNormalizeScores:
    def test_uniform(self):
        w = R.normalize_scores(np.full(81, 0.37, dtype=np.float32))
        np.testing.assert_allclose(w.data, 1 / 81, rtol=1e-6)

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        w = R.normalize_scores(rng.random(81).astype(np.float32) + 0.01)
        assert abs(w.data.sum() - 1.0) <= 1e-6

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        raw = rng.random(81).astype(np.float32) + 0.01
        a = R.normalize_scores(raw)
        b = R.normalize_scores(2.0 * raw)
        np.testing.assert_allclose(a.data, b.data, atol=1e-7)

    def test_zero_scores_guarded(self):
        with pytest.raises(NumericError):
            R.normalize_scores(np.zeros(81, dtype=np.float32))

    def test_gradient_flows(self):
        raw = Tensor(np.array([0.5, 1.0, 1.5], dtype=np.float32), requires_grad=True)
        w = R.normalize_scores(raw)
        tz.backward(tz.pick(w, 0))
        assert raw.grad is not None and np.any(raw.grad != 0)


class TestHardSelect:
    def test_k_equals_all_is_soft(self):
        rng = np.random.default_rng(7)
        raw = rng.random(81).astype(np.float32) + 0.01
        soft = R.normalize_scores(raw)
        hard = R.hard_select(raw, k=81)
        np.testing.assert_array_equal(soft.data, hard.data)

    def test_k_twelve_support(self):
        rng = np.random.default_rng(8)
        raw = rng.random(81).astype(np.float32) + 0.01
        w = R.hard_select(raw, k=12)
        assert np.count_nonzero(w.data) == 12
        assert abs(w.data.sum() - 1.0) <= 1e-6
        kept = set(np.nonzero(w.data)[0])
        assert kept == set(np.argsort(-raw, kind="stable")[:12])


class TestSubshotDescriptor:
    def test_one_hot(self):
        rng = np.random.default_rng(9)
        v = rng.standard_normal((81, 2048), dtype=np.float32)
        w = np.zeros(81, dtype=np.float32)
        w[5] = 1.0
        out = R.subshot_descriptor(v, w)
        np.testing.assert_array_equal(out.data, v[5])

    def test_uniform_is_mean(self):
        rng = np.random.default_rng(10)
        v = rng.standard_normal((81, 2048), dtype=np.float32)
        out = R.subshot_descriptor(v, np.full(81, 1 / 81, dtype=np.float32))
        np.testing.assert_allclose(out.data, v.mean(axis=0), atol=1e-5)

    def test_convex_hull(self):
        rng = np.random.default_rng(11)
        v = rng.standard_normal((81, 2048), dtype=np.float32)
        w = rng.random(81).astype(np.float32)
        w /= w.sum()
        out = R.subshot_descriptor(v, w)
        assert np.all(out.data >= v.min(axis=0) - 1e-5)
        assert np.all(out.data <= v.max(axis=0) + 1e-5)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal((81, 2048), dtype=np.float32)
        w = rng.random(81).astype(np.float32)
        w /= w.sum()
        perm = rng.permutation(81)
        a = R.subshot_descriptor(v, w)
        b = R.subshot_descriptor(v[perm], w[perm])
        np.testing.assert_allclose(a.data, b.data, atol=1e-5)

    def test_linearity(self):
        rng = np.random.default_rng(13)
        v1 = rng.standard_normal((4, 2048), dtype=np.float32)
        v2 = rng.standard_normal((4, 2048), dtype=np.float32)
        w = rng.random(4).astype(np.float32)
        lhs = R.subshot_descriptor(v1 + v2, w)
        rhs = R.subshot_descriptor(v1, w).data + R.subshot_descriptor(v2, w).data
        np.testing.assert_allclose(lhs.data, rhs, atol=1e-4)

    def test_misaligned_counts(self):
        with pytest.raises(DimensionError):
            R.subshot_descriptor(np.zeros((81, 2048), dtype=np.float32),
                                 np.zeros(80, dtype=np.float32))
