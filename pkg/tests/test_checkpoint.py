import numpy as np
import pytest

from pauselm.errors import DataValidationError
from pauselm.model import (
    ModelConfig,
    init_params,
    load_checkpoint,
    load_optimizer_state,
    save_checkpoint,
    save_optimizer_state,
)
from pauselm.trainer import AdamState


def cfg_and_params():
    cfg = ModelConfig(vocab_size=12, d_model=8, n_layers=1, n_heads=2, d_ff=16, max_seq_len=8)
    return cfg, init_params(cfg, seed=4)


def test_save_load_save_byte_identical(tmp_path):
    cfg, params = cfg_and_params()
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, cfg, params)
    loaded_cfg, loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded_cfg, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_restores_exact_values(tmp_path):
    cfg, params = cfg_and_params()
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, cfg, params)
    loaded_cfg, loaded = load_checkpoint(path)
    assert loaded_cfg == cfg
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].dtype == np.float64
        np.testing.assert_array_equal(loaded[name], params[name])


def test_rejects_non_finite_params(tmp_path):
    cfg, params = cfg_and_params()
    params["embed.word"][0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        save_checkpoint(tmp_path / "bad.bin", cfg, params)


def test_rejects_garbage_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(DataValidationError, match="magic"):
        load_checkpoint(path)


def test_kind_mismatch(tmp_path):
    cfg, params = cfg_and_params()
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, cfg, params)
    with pytest.raises(DataValidationError):
        load_optimizer_state(path)


def test_optimizer_state_roundtrip(tmp_path):
    cfg, params = cfg_and_params()
    state = AdamState.zeros(params)
    state.t = 7
    state.m["embed.word"][0, 0] = 0.5
    path = tmp_path / "opt.bin"
    save_optimizer_state(path, {"t": state.t, "epoch": 3}, state.to_tensors())
    meta, tensors = load_optimizer_state(path)
    restored = AdamState.from_tensors(int(meta["t"]), tensors)
    assert meta["epoch"] == 3
    assert restored.t == 7
    np.testing.assert_array_equal(restored.m["embed.word"], state.m["embed.word"])
    np.testing.assert_array_equal(restored.v["head.cls.b"], state.v["head.cls.b"])
