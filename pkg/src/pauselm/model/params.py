"""Parameter initialization and shape bookkeeping.

Parameters live in a flat dict of named float64 arrays; names are
stable and double as checkpoint keys. Layout per layer i:

    layer{i}.attn.{wq,wk,wv,wo}   (d_model, d_model)   + b{q,k,v,o}
    layer{i}.ln1 / ln2            gain, bias (d_model,)
    layer{i}.ff.w1 (d_model, d_ff), ff.w2 (d_ff, d_model) + biases
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig

DTYPE = np.float64
INIT_STD = 0.02

# Parameters updated by the freeze-all-but-temporal training switch.
TEMPORAL_PARAM_NAMES = ("embed.dur", "embed.pause")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "embed.word": (cfg.vocab_size, cfg.d_model),
        "embed.pos": (cfg.max_seq_len, cfg.d_model),
        "embed.dur": (cfg.n_time_bins, cfg.d_half),
        "embed.pause": (cfg.n_time_bins, cfg.d_half),
        "embed.ln.gain": (cfg.d_model,),
        "embed.ln.bias": (cfg.d_model,),
        "head.mlm.w": (cfg.d_model, cfg.vocab_size),
        "head.mlm.b": (cfg.vocab_size,),
        "head.pause.w": (cfg.d_model, cfg.n_time_bins - 1),  # NULL_BIN is never a target
        "head.pause.b": (cfg.n_time_bins - 1,),
        "head.cls.w": (cfg.d_model, 2),
        "head.cls.b": (2,),
    }
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{proj}"] = (cfg.d_model, cfg.d_model)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{b}"] = (cfg.d_model,)
        shapes[f"{p}.ln1.gain"] = (cfg.d_model,)
        shapes[f"{p}.ln1.bias"] = (cfg.d_model,)
        shapes[f"{p}.ff.w1"] = (cfg.d_model, cfg.d_ff)
        shapes[f"{p}.ff.b1"] = (cfg.d_ff,)
        shapes[f"{p}.ff.w2"] = (cfg.d_ff, cfg.d_model)
        shapes[f"{p}.ff.b2"] = (cfg.d_model,)
        shapes[f"{p}.ln2.gain"] = (cfg.d_model,)
        shapes[f"{p}.ln2.bias"] = (cfg.d_model,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh parameters: N(0, 0.02) weights, zero biases, unit LN gains."""
    rng = np.random.default_rng([seed, 100])
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=DTYPE)
        elif name.endswith((".bias", ".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            params[name] = rng.normal(0.0, INIT_STD, size=shape).astype(DTYPE)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def validate_params(cfg: ModelConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter keys mismatch: missing {missing}, extra {extra}")
    for name, arr in params.items():
        if tuple(arr.shape) != expected[name]:
            raise ValueError(
                f"parameter {name} has shape {tuple(arr.shape)}, expected {expected[name]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} contains non-finite values")
