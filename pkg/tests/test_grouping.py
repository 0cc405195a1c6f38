import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from centerseg.autodiff import Tensor, attention, one_hot_argmax
from centerseg.config import ModelConfig
from centerseg.grouping import (MappingMatrix, SemanticGroup, compute_assignment,
                                contextualize_centers, mean_pool, pool_regions)
from centerseg.nn import MLP, Block

from oracles import group_by_mean


def mapping_from_labels(labels, num_centers):
    hard = np.eye(num_centers)[labels]
    return MappingMatrix(Tensor(hard), Tensor(hard), Tensor(hard))


class TestContextualize:
    def test_depth_zero_identity(self):
        c = Tensor(np.random.default_rng(0).normal(size=(3, 8)))
        assert contextualize_centers(c, Tensor(np.ones((5, 8))), []) is c

    @pytest.mark.parametrize("n", [1, 4, 9])
    def test_shape(self, n):
        rng = np.random.default_rng(1)
        blocks = [Block(rng, 8, 2, cross=True) for _ in range(2)]
        out = contextualize_centers(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(n, 8))), blocks)
        assert out.shape == (3, 8)

    def test_single_patch_full_attention(self):
        rng = np.random.default_rng(2)
        block = Block(rng, 8, 2, cross=True)
        centers = Tensor(rng.normal(size=(4, 8)))
        patch = Tensor(rng.normal(size=(1, 8)))
        kv = block.ln_ctx(patch)
        _, weights = attention(block.ln1(centers), kv, kv, block.attn.weights(), block.attn.heads,
                               return_weights=True)
        np.testing.assert_array_equal(weights.data, 1.0)


class TestAssignment:
    def test_eval_argmax_example(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0], [5.0, 1.0]])
        # patches @ centers.T == logits with identity centers
        m = compute_assignment(Tensor(logits), Tensor(np.eye(2)), training=False)
        np.testing.assert_array_equal(m.hard.data, [[1, 0], [0, 1], [1, 0]])
        np.testing.assert_array_equal(m.hard.data.sum(axis=0), [2, 1])

    def test_orthogonal_alignment(self):
        rng = np.random.default_rng(3)
        basis = np.eye(4)
        which = rng.integers(0, 4, size=10)
        patches = basis[which] * rng.uniform(0.5, 2.0, size=(10, 1))
        m = compute_assignment(Tensor(patches), Tensor(basis), training=False)
        np.testing.assert_array_equal(m.labels(), which)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.booleans())
    def test_invariants(self, seed, training):
        rng = np.random.default_rng(seed)
        n, l, h = rng.integers(1, 12), rng.integers(1, 6), 4
        m = compute_assignment(Tensor(rng.normal(size=(n, h))), Tensor(rng.normal(size=(l, h))),
                               1.0, rng, training)
        np.testing.assert_array_equal(m.hard.data.sum(axis=1), 1.0)
        assert m.hard.data.sum() == n
        np.testing.assert_allclose(m.soft.data.sum(axis=1), 1.0, atol=1e-9)
        if not training:
            np.testing.assert_array_equal(m.hard.data, one_hot_argmax(m.logits.data))

    def test_patch_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        patches, centers = rng.normal(size=(7, 5)), rng.normal(size=(3, 5))
        perm = rng.permutation(7)
        a = compute_assignment(Tensor(patches), Tensor(centers))
        b = compute_assignment(Tensor(patches[perm]), Tensor(centers))
        np.testing.assert_array_equal(a.logits.data[perm], b.logits.data)
        np.testing.assert_allclose(mean_pool(a, Tensor(patches)).data,
                                   mean_pool(b, Tensor(patches[perm])).data, atol=1e-14)


class TestPool:
    def test_all_in_center_zero(self):
        rng = np.random.default_rng(5)
        patches = rng.normal(size=(6, 4))
        pooled = mean_pool(mapping_from_labels(np.zeros(6, int), 3), Tensor(patches)).data
        np.testing.assert_allclose(pooled[0], patches.mean(axis=0), atol=1e-15)
        np.testing.assert_array_equal(pooled[1:], 0.0)

    def test_empty_center_uses_center_only(self):
        rng = np.random.default_rng(6)
        mlp = MLP(rng, 4, 8)
        centers = Tensor(rng.normal(size=(3, 4)))
        out = pool_regions(mapping_from_labels(np.array([0, 0, 1]), 3), Tensor(rng.normal(size=(3, 4))),
                           centers, mlp)
        np.testing.assert_allclose(out.data[2], mlp(Tensor(centers.data[2:3])).data[0], atol=1e-14)

    def test_group_by_mean_oracle(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 3, size=6)
        patches = rng.normal(size=(6, 5))
        got = mean_pool(mapping_from_labels(labels, 3), Tensor(patches)).data
        np.testing.assert_allclose(got, group_by_mean(labels, patches, 3), atol=1e-12)


class TestModule:
    def _module(self, **kw):
        cfg = ModelConfig(hidden=8, heads=2, centers=3, cross_attn_depth=1, **kw)
        return SemanticGroup(np.random.default_rng(0), cfg)

    def test_eval_deterministic_and_batched(self):
        g = self._module()
        x = np.random.default_rng(1).normal(size=(2, 6, 8))
        r1, m1, _ = g(Tensor(x))
        r2, m2, _ = g(Tensor(x))
        np.testing.assert_array_equal(r1.data, r2.data)
        np.testing.assert_array_equal(m1.hard.data, m2.hard.data)
        single, _, _ = g(Tensor(x[1]))
        np.testing.assert_allclose(single.data, r1.data[1], atol=1e-12)

    def test_center_init_std(self):
        cfg = ModelConfig(hidden=64, centers=64)
        g = SemanticGroup(np.random.default_rng(0), cfg)
        assert abs(g.centers.data.std() - 0.02) < 0.002

    def test_centers_receive_gradient(self):
        g = self._module()
        x = Tensor(np.random.default_rng(2).normal(size=(2, 6, 8)))
        regions, _, _ = g(x, np.random.default_rng(3), training=True)
        (regions * regions).sum().backward()
        assert np.abs(g.centers.grad).sum() > 0
