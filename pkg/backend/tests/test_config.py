from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from app.services import config as config_mod
from app.services.config import load_config, require_live_credentials
from app.services.errors import ConfigError
from app.services.llm_client import API_KEY_ENV


def write_cfg(tmp_path: Path, data) -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


COCO_SOURCE = {"name": "hrsid", "task": "detection", "adapter": "coco", "paths": ["ann.json"]}


def test_defaults_without_file():
    cfg = load_config()
    assert cfg.sources == []
    assert cfg.rewrite.mode == "replay"
    assert cfg.dedup.global_max_distance == 0
    assert cfg.caption.threshold_percent == 1.0
    assert (cfg.split.train, cfg.split.test) == (0.8, 0.2)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    cfg = load_config(write_cfg(tmp_path, {"sources": [COCO_SOURCE], "rewrite": {"cassette": "c.jsonl"}}))
    assert cfg.sources[0].paths == [str((tmp_path / "ann.json").resolve())]
    assert cfg.rewrite.cassette == str((tmp_path / "c.jsonl").resolve())


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"dedupe": {"global_max_distance": 2}}))


def test_adapter_task_mismatch(tmp_path):
    bad = dict(COCO_SOURCE, task="paired")
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"sources": [bad]}))


def test_segmentation_needs_mapping(tmp_path):
    src = {"name": "whu", "task": "segmentation", "adapter": "mask", "paths": ["masks"]}
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"sources": [src]}))


def test_duplicate_source_names(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"sources": [COCO_SOURCE, COCO_SOURCE]}))


def test_bad_split_ratios(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"split": {"train": 0.9, "test": 0.2}}))


def test_invalid_yaml(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("sources: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_flag_beats_env_beats_file(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, {"seed": 1, "rewrite": {"model": "file-model"}})
    assert load_config(path).seed == 1

    monkeypatch.setenv("SAR_NARRATOR_SEED", "2")
    monkeypatch.setenv("SAR_NARRATOR_MODEL", "env-model")
    cfg = load_config(path)
    assert (cfg.seed, cfg.rewrite.model) == (2, "env-model")

    cfg = load_config(path, seed=3, model=None)
    assert (cfg.seed, cfg.rewrite.model) == (3, "env-model")


def test_env_seed_must_be_integer(monkeypatch):
    monkeypatch.setenv("SAR_NARRATOR_SEED", "abc")
    with pytest.raises(ConfigError):
        load_config()


def test_unknown_override():
    with pytest.raises(ConfigError):
        load_config(workers=4)


def test_fingerprint_tracks_effective_config(tmp_path):
    path = write_cfg(tmp_path, {"seed": 1})
    a = load_config(path)
    assert a.fingerprint() == load_config(path).fingerprint()
    assert a.fingerprint() != load_config(path, seed=2).fingerprint()
    assert len(a.fingerprint()) == 64


def test_lexicon_extras_extend_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path, {"rewrite": {"lexicons": {"colors": ["teal"]}}}))
    merged = cfg.rewrite.lexicons.merged()
    assert "teal" in merged.colors
    assert set(config_mod.DEFAULT_LEXICONS.colors) <= set(merged.colors)


def test_live_mode_requires_key(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    cfg = load_config(mode="live")
    with pytest.raises(ConfigError):
        require_live_credentials(cfg)
    monkeypatch.setenv(API_KEY_ENV, "sk-test")
    require_live_credentials(cfg)
    require_live_credentials(load_config())
