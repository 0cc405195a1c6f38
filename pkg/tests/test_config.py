import pytest

from centerseg.config import ModelConfig
from centerseg.errors import ConfigError


class TestDefaults:
    def test_desk_defaults(self):
        cfg = ModelConfig()
        assert (cfg.hidden, cfg.heads, cfg.image_layers, cfg.plug_layer, cfg.text_layers) == (64, 4, 6, 5, 4)
        assert (cfg.patch_size, cfg.image_size, cfg.num_patches, cfg.batch_size, cfg.steps) == (8, 64, 64, 16, 500)
        assert cfg.sp_min_size == cfg.patch_size**2 // 2
        assert cfg.third_stage_layers == 1

    def test_published_settings_representable(self):
        cfg = ModelConfig.paper()
        assert (cfg.plug_layer, cfg.image_layers, cfg.centers, cfg.cross_attn_depth) == (10, 12, 8, 2)
        assert (cfg.mask_rate, cfg.decoder_layers, cfg.batch_size, cfg.epochs) == (0.75, 3, 768, 10)
        assert (cfg.lr_pretrained, cfg.lr_fresh) == (4e-6, 4e-3)

    @pytest.mark.parametrize("changes", [
        dict(heads=5), dict(plug_layer=6), dict(plug_layer=-1), dict(image_size=60),
        dict(centers=0), dict(cross_attn_depth=-1), dict(mask_rate=1.0), dict(temperature=0.0),
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            ModelConfig(**changes)


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(hidden=32, enable_rec=False, lr_fresh=3e-4, threshold=-1.0)
        cfg.save(tmp_path / "c.cfg")
        assert ModelConfig.load(tmp_path / "c.cfg") == cfg

    def test_comments_and_blank_lines(self):
        cfg = ModelConfig.loads("# desk run\n\nhidden = 32  # smaller\ncenters=4\nenable_sup = no\n")
        assert (cfg.hidden, cfg.centers, cfg.enable_sup) == (32, 4, False)

    def test_every_key_documented(self):
        keys = [line.split("=")[0].strip() for line in ModelConfig().dumps().splitlines()]
        assert set(keys) == set(ModelConfig().to_dict())

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="centres"):
            ModelConfig.loads("centres = 4\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            ModelConfig.loads("hidden = big\n")
        with pytest.raises(ConfigError):
            ModelConfig.loads("enable_rec = maybe\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            ModelConfig.loads("hidden 32\n")

    def test_overrides_on_base(self):
        base = ModelConfig(hidden=32)
        cfg = ModelConfig.from_dict({"centers": "4"}, base)
        assert (cfg.hidden, cfg.centers) == (32, 4)
