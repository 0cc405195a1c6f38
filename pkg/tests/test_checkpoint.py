import csv

import numpy as np
import pytest

from centerseg.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from centerseg.config import ModelConfig
from centerseg.data import generate_synthetic
from centerseg.errors import CheckpointError
from centerseg.harness import Trainer, load_model

TINY = ModelConfig(hidden=16, heads=2, text_layers=1, image_layers=2, plug_layer=1,
                   image_size=32, centers=4, cross_attn_depth=1, decoder_layers=1,
                   batch_size=4, steps=6, sp_min_size=8)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    return generate_synthetic(tmp_path_factory.mktemp("data"), 6, seed=0, size=32)


def test_round_trip_forward_bit_exact(manifest, tmp_path):
    trainer = Trainer(TINY, manifest, tmp_path)
    trainer.fit(steps=2)
    model, _ = load_model(tmp_path / "final.ckpt")
    px = trainer.data.pixels[:2]
    a = trainer.model.encode_image(px).image_features.data
    b = model.encode_image(px).image_features.data
    np.testing.assert_array_equal(a, b)
    ckpt = load_checkpoint(tmp_path / "final.ckpt")
    assert ckpt.step == 2 and ckpt.config == TINY
    for name, p in trainer.model.named_parameters():
        np.testing.assert_array_equal(ckpt.params[name], p.data)


def test_optimizer_and_rng_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    rng.random(3)
    ckpt = Checkpoint(TINY, {"w": np.arange(4.0)}, 7, {"w/m": np.ones(4), "w/v": np.full(4, 2.0)},
                      {"w": 7}, rng.bit_generator.state, ["<pad>", "<unk>", "x", "<sep>"])
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "a.ckpt")
    np.testing.assert_array_equal(back.optimizer["w/v"], ckpt.optimizer["w/v"])
    other = np.random.default_rng()
    other.bit_generator.state = back.rng_state
    assert other.random() == rng.random()
    assert back.optimizer_t == {"w": 7} and back.vocab == ckpt.vocab


@pytest.mark.parametrize("damage", ["flip", "truncate", "magic", "version"])
def test_corruption_detected(tmp_path, damage):
    save_checkpoint(tmp_path / "a.ckpt", Checkpoint(TINY, {"w": np.arange(50.0)}))
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    if damage == "flip":
        raw[-20] ^= 0xFF
    elif damage == "truncate":
        raw = raw[:-10]
    elif damage == "magic":
        raw[0:4] = b"XXXX"
    else:
        raw[8] = 99
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "a.ckpt")


def read_totals(path):
    with open(path) as fh:
        return {int(r["step"]): float(r["total"]) for r in csv.DictReader(fh)}


def test_resume_matches_uninterrupted(manifest, tmp_path):
    cfg = TINY.replace(steps=5)
    straight = Trainer(cfg, manifest, tmp_path / "a")
    straight.fit()
    first = Trainer(cfg, manifest, tmp_path / "b")
    first.fit(steps=3)
    resumed = Trainer.resume(tmp_path / "b" / "final.ckpt", manifest, tmp_path / "b")
    resumed.fit()
    a, b = read_totals(tmp_path / "a" / "metrics.csv"), read_totals(tmp_path / "b" / "metrics.csv")
    assert sorted(b) == [1, 2, 3, 4, 5]
    assert abs(b[4] - a[4]) <= 1e-10 * abs(a[4])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
