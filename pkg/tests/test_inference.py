import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from centerseg.config import ModelConfig
from centerseg.errors import InvalidInputError
from centerseg.inference import (LabelSet, assign_pixels, label_features, miou, patch_similarity,
                                 region_similarity, segment, upsample_similarity)
from centerseg.model import CenterSegModel
from centerseg.text import TextBatch, Vocab

from oracles import brute_iou


def loop_cosine(a, b):
    out = np.zeros((len(a), len(b)))
    for i, u in enumerate(a):
        for j, v in enumerate(b):
            dot = sum(x * y for x, y in zip(u, v))
            out[i, j] = dot / (math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(y * y for y in v)))
    return out


class TestSimilarity:
    def test_identical_and_antiparallel(self):
        z = np.array([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
        s = region_similarity(z, z[:1])
        assert s[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert s[1, 0] == pytest.approx(-1.0, abs=1e-15)

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        np.testing.assert_allclose(region_similarity(a, b), loop_cosine(a, b), atol=1e-12)

    def test_patch_rows_copy_region_rows(self):
        rng = np.random.default_rng(1)
        s_hat = rng.normal(size=(3, 2))
        hard = np.eye(3)[[2, 0, 2, 1]]
        s = patch_similarity(hard, s_hat)
        np.testing.assert_array_equal(s[0], s_hat[2])
        np.testing.assert_array_equal(s[0], s[2])
        loop = np.array([[sum(hard[j, k] * s_hat[k, t] for k in range(3)) for t in range(2)]
                         for j in range(4)])
        np.testing.assert_array_equal(s, loop)


class TestUpsample:
    def test_identity(self):
        s = np.random.default_rng(0).normal(size=(9, 2))
        up = upsample_similarity(s, (3, 3), (3, 3))
        np.testing.assert_allclose(up, s.T.reshape(2, 3, 3), atol=1e-15)

    def test_constant(self):
        up = upsample_similarity(np.full((4, 1), 0.3), (2, 2), (7, 5))
        np.testing.assert_allclose(up, 0.3, atol=1e-15)

    def test_two_by_two_to_four_by_four(self):
        # map value 2*row + col is linear, so bilinear reproduces it at clamped
        # source coordinates [0, 0.25, 0.75, 1]
        s = np.array([[0.0], [1.0], [2.0], [3.0]])
        expect = np.array([[0, 0.25, 0.75, 1], [0.5, 0.75, 1.25, 1.5],
                           [1.5, 1.75, 2.25, 2.5], [2, 2.25, 2.75, 3]])
        np.testing.assert_allclose(upsample_similarity(s, (2, 2), (4, 4))[0], expect, atol=1e-15)

    def test_bad_grid(self):
        with pytest.raises(InvalidInputError):
            upsample_similarity(np.zeros((5, 1)), (2, 2), (4, 4))


class TestAssign:
    def test_threshold_examples(self):
        sim = np.array([0.9, 0.2]).reshape(2, 1, 1)
        assert assign_pixels(sim, 0.75)[0, 0] == 0
        sim = np.array([0.5, 0.2]).reshape(2, 1, 1)
        assert assign_pixels(sim, 0.75)[0, 0] == -1

    def test_no_background_at_minus_one(self):
        sim = np.random.default_rng(0).uniform(-1, 1, size=(3, 5, 5))
        assert (assign_pixels(sim, -1.0) >= 0).all()

    def test_ties_lowest_index(self):
        assert assign_pixels(np.full((3, 1, 1), 0.4), 0.0)[0, 0] == 0


class TestMiou:
    def test_perfect(self):
        gt = np.array([[0, 1], [-1, 1]])
        assert miou(gt, gt, 2).miou == 1.0

    def test_disjoint(self):
        pred = np.zeros((2, 2), int)
        gt = np.ones((2, 2), int)
        assert miou(pred, gt, 2).miou == 0.0

    def test_hand_example(self):
        r = miou(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [1, 1]]), 2)
        assert r.per_class_iou[:2].tolist() == [0.5, 2 / 3]
        assert r.miou == pytest.approx(7 / 12, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.booleans())
    def test_brute_force(self, seed, k, bg):
        rng = np.random.default_rng(seed)
        pred, gt = rng.integers(-1, k, size=(2, 8, 8))
        got = miou(pred, gt, k, bg).miou
        assert got == brute_iou(pred, gt, k, bg)

    def test_accumulation_is_count_sum(self):
        rng = np.random.default_rng(5)
        a = [rng.integers(-1, 2, size=(2, 4, 4)) for _ in range(3)]
        total = sum((miou(p, g, 2) for p, g in a[1:]), miou(*a[0], 2))
        stacked = miou(np.stack([p for p, _ in a]), np.stack([g for _, g in a]), 2)
        np.testing.assert_array_equal(total.intersection, stacked.intersection)
        np.testing.assert_array_equal(total.union, stacked.union)

    def test_csv(self, tmp_path):
        r = miou(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [1, 1]]), 2,
                 class_names=["red circle", "blue square"])
        r.write_csv(tmp_path / "iou.csv")
        rows = list(csv.reader((tmp_path / "iou.csv").open()))
        assert rows[0] == ["class", "intersection", "union", "iou"]
        assert rows[1] == ["red circle", "1", "2", "0.500000"]
        assert rows[-1][0] == "miou" and float(rows[-1][3]) == pytest.approx(7 / 12, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            miou(np.zeros((2, 2), int), np.zeros((2, 3), int), 1)


class TestLabels:
    def test_duplicate_rejected(self):
        with pytest.raises(InvalidInputError):
            LabelSet(["dog", "dog"])


@pytest.fixture(scope="module")
def tiny():
    cfg = ModelConfig(hidden=16, heads=2, text_layers=1, image_layers=2, plug_layer=1,
                      image_size=32, centers=4, cross_attn_depth=1, decoder_layers=1)
    vocab = Vocab.build(["a photo of a dog.", "a photo of a cat."])
    return CenterSegModel(cfg, len(vocab)), vocab


class TestSegment:
    def test_label_features(self, tiny):
        model, vocab = tiny
        feats = label_features(LabelSet(["dog", "cat"]), model, vocab)
        assert feats.shape == (2, 16)
        direct = model.encode_text(TextBatch.from_texts(["a photo of a dog."], vocab, 16)).data[0]
        np.testing.assert_array_equal(feats.data[0], direct)

    def test_unknown_label_warns(self, tiny, caplog):
        model, vocab = tiny
        with caplog.at_level("WARNING"):
            label_features(LabelSet(["zebra"]), model, vocab)
        assert "zebra" in caplog.text

    def test_deterministic_and_patch_constant(self, tiny):
        model, vocab = tiny
        feats = label_features(LabelSet(["dog", "cat"]), model, vocab)
        img = np.random.default_rng(0).random((3, 32, 32))
        a = segment(model, img, feats, 0.0)
        b = segment(model, img, feats, 0.0)
        np.testing.assert_array_equal(a.pixel_classes, b.pixel_classes)
        np.testing.assert_array_equal(a.pixel_similarity, b.pixel_similarity)
        # pre-interpolation scores are shared by all patches of a region
        labels = a.assignment.argmax(axis=1)
        for j in range(16):
            np.testing.assert_array_equal(a.patch_similarity[j], a.region_similarity[labels[j]])

    def test_label_scale_invariance(self, tiny):
        model, vocab = tiny
        feats = label_features(LabelSet(["dog", "cat"]), model, vocab)
        img = np.random.default_rng(1).random((3, 32, 32))
        a = segment(model, img, feats.data, -1.0).pixel_classes
        b = segment(model, img, feats.data * 4.2, -1.0).pixel_classes
        np.testing.assert_array_equal(a, b)
