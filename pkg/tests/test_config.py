import json

import pytest

from ssmreg.config import (ABLATIONS, ConfigError, TrainConfig,
                           apply_ablation, config_digest, full_scale,
                           resolve_config, save_config)


def test_desk_scale_defaults():
    cfg = TrainConfig()
    assert cfg.image_size == (64, 64)
    assert cfg.channels == 1
    assert cfg.epochs == 200
    assert cfg.batch_size == 8
    assert cfg.lr == 1e-4
    assert cfg.poly_power == 0.9
    assert cfg.seed == 3407
    assert (cfg.w_sim, cfg.w_smooth, cfg.w_guide, cfg.w_recon) == (100.0, 10.0, 25.0, 10.0)
    assert (cfg.md_mode, cfg.mi_mode, cfg.flow_mode) == ("bi", "bi", "bi")
    assert cfg.use_roi_mask


def test_full_scale_preset():
    cfg = full_scale()
    assert cfg.image_size == (128, 128)
    assert cfg.channels == 3
    assert cfg.d_state == 16
    assert cfg.epochs == 1000


def test_ablation_presets():
    assert set(ABLATIONS) == {"b1", "b2", "b3", "b4", "b5", "b6"}
    table = {
        "b1": ("none", "none", "none", False),
        "b2": ("bi", "none", "none", False),
        "b3": ("bi", "bi", "none", False),
        "b4": ("uni", "uni", "uni", False),
        "b5": ("bi", "bi", "bi", False),
        "b6": ("bi", "bi", "bi", True),
    }
    for name, (md, mi, fl, roi) in table.items():
        cfg = apply_ablation(TrainConfig(), name)
        assert (cfg.md_mode, cfg.mi_mode, cfg.flow_mode, cfg.use_roi_mask) \
            == (md, mi, fl, roi), name
    base = TrainConfig()
    apply_ablation(base, "b1")
    assert base.md_mode == "bi", "apply_ablation must not mutate its input"
    with pytest.raises(ConfigError):
        apply_ablation(base, "b7")


def test_validation_rejects_bad_values():
    for kwargs in ({"lr": 0.0}, {"epochs": 0}, {"batch_size": 0},
                   {"d_state": 0}, {"md_mode": "triple"},
                   {"w_sim": -1.0}, {"image_size": (0, 64)}):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


def test_resolve_precedence(tmp_path, monkeypatch):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"epochs": 10, "lr": 0.5, "batch_size": 2}))
    monkeypatch.setenv("SSMREG_LR", "0.25")
    monkeypatch.setenv("SSMREG_SEED", "7")
    cfg = resolve_config(file=f, overrides={"seed": 99})
    assert cfg.epochs == 10          # file beats default
    assert cfg.lr == 0.25            # env beats file
    assert cfg.seed == 99            # override beats env
    assert cfg.batch_size == 2


def test_env_value_coercion(monkeypatch):
    monkeypatch.setenv("SSMREG_IMAGE_SIZE", "32,48")
    monkeypatch.setenv("SSMREG_USE_ROI_MASK", "false")
    monkeypatch.setenv("SSMREG_EPOCHS", "3")
    cfg = resolve_config()
    assert cfg.image_size == (32, 48)
    assert cfg.use_roi_mask is False
    assert cfg.epochs == 3
    monkeypatch.setenv("SSMREG_EPOCHS", "many")
    with pytest.raises(ConfigError):
        resolve_config()


def test_unknown_keys_rejected(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"epochz": 10}))
    with pytest.raises(ConfigError):
        resolve_config(file=f)
    with pytest.raises(ConfigError):
        resolve_config(overrides={"learning_rate": 0.1})


def test_save_and_resolve_round_trip(tmp_path):
    cfg = TrainConfig(epochs=17, lr=3e-3, image_size=(32, 32), md_mode="uni")
    path = save_config(cfg, tmp_path / "config.json")
    assert resolve_config(file=path) == cfg


def test_config_digest_stability():
    a = TrainConfig()
    assert config_digest(a) == config_digest(TrainConfig())
    assert len(config_digest(a)) == 16
    assert config_digest(a) != config_digest(TrainConfig(epochs=201))
    assert config_digest(a) != config_digest(apply_ablation(a, "b5"))
