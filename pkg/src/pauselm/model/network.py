"""Pause-augmented transformer encoder: forward pass, losses, exact gradients.

Input embedding composition per position i:

    word_table[word_id_i] + pos_table[i] + concat(dur_table[dur_bin_i],
                                                  pause_table[pause_bin_i])

followed by layer norm and dropout, then a post-layer-norm encoder stack
(as in BERT: residual -> LN, GELU feed-forward) with attention masked at
[PAD] keys. Three output heads: word MLM logits, 300-way pause-bin
logits (NULL_BIN is never a prediction target), and a binary
classification head over the position-0 hidden state.

Gradients are computed by hand-written backprop over explicit caches and
are exact for every parameter tensor; they are verified against central
finite differences in the test suite.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DataValidationError, NumericError
from ..tokenizer import CLS_ID, NULL_BIN, PAD_ID, SEP_ID, EncodedSequence
from .config import ModelConfig
from .ops import (
    cross_entropy_rows,
    dropout_backward,
    dropout_forward,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
    linear_backward,
    linear_forward,
    softmax_backward,
    softmax_last,
)
from .params import zeros_like_params

MASK_BIAS = -1e9  # additive key mask; underflows to exactly 0 after softmax


@dataclass
class Batch:
    """Stacked encoded sequences; labels use -1 where absent."""

    word_ids: np.ndarray       # (B, T) int64
    dur_bins: np.ndarray       # (B, T) int64
    pause_bins: np.ndarray     # (B, T) int64
    attention_mask: np.ndarray  # (B, T) int64
    labels: np.ndarray         # (B,) int64, -1 = unlabeled
    transcript_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return int(self.word_ids.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.word_ids.shape[1])

    def copy(self) -> "Batch":
        return Batch(
            word_ids=self.word_ids.copy(),
            dur_bins=self.dur_bins.copy(),
            pause_bins=self.pause_bins.copy(),
            attention_mask=self.attention_mask.copy(),
            labels=self.labels.copy(),
            transcript_ids=self.transcript_ids,
        )

    def word_position_mask(self) -> np.ndarray:
        """(B, T) bool: attended positions that are real words."""
        special = np.isin(self.word_ids, (PAD_ID, CLS_ID, SEP_ID))
        return (self.attention_mask == 1) & ~special


def stack_batch(seqs: Sequence[EncodedSequence]) -> Batch:
    if not seqs:
        raise ValueError("cannot stack an empty batch")
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"sequences have mixed lengths {sorted(lengths)}")
    labels = np.array([-1 if s.label is None else int(s.label) for s in seqs], dtype=np.int64)
    return Batch(
        word_ids=np.stack([s.word_ids for s in seqs]),
        dur_bins=np.stack([s.dur_bins for s in seqs]),
        pause_bins=np.stack([s.pause_bins for s in seqs]),
        attention_mask=np.stack([s.attention_mask for s in seqs]),
        labels=labels,
        transcript_ids=tuple(s.transcript_id for s in seqs),
    )


@dataclass
class ForwardOutput:
    hidden_states: np.ndarray  # (B, T, d_model)
    mlm_logits: np.ndarray     # (B, T, vocab_size)
    pause_logits: np.ndarray   # (B, T, 300)
    cls_logits: np.ndarray     # (B, 2)


class ForwardStats:
    """Instrumentation counter for evaluation-protocol assertions.

    Counts forward calls and, per call, how many word positions carried
    NULL_BIN pause input (i.e. were input-masked). Thread-safe so
    parallel evaluation sweeps can share one instance.
    """

    def __init__(self) -> None:
        self.forward_calls = 0
        self.masked_pause_positions_per_call: list[int] = []
        self._lock = threading.Lock()

    def record(self, batch: Batch) -> None:
        masked = int(((batch.pause_bins == NULL_BIN) & batch.word_position_mask()).sum())
        with self._lock:
            self.forward_calls += 1
            self.masked_pause_positions_per_call.append(masked)


def _validate_batch(batch: Batch, cfg: ModelConfig) -> None:
    if batch.seq_len > cfg.max_seq_len:
        raise DataValidationError(
            f"sequence length {batch.seq_len} exceeds max_seq_len {cfg.max_seq_len}"
        )
    if batch.word_ids.min() < 0 or batch.word_ids.max() >= cfg.vocab_size:
        raise DataValidationError("word id out of vocabulary range")
    for name, arr in (("duration", batch.dur_bins), ("pause", batch.pause_bins)):
        if arr.min() < 0 or arr.max() >= cfg.n_time_bins:
            raise DataValidationError(f"{name} bin out of table range")


def embedding_sum(batch: Batch, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Pre-layer-norm additive embedding composition, (B, T, d_model).

    Disabled halves are left as exact zeros; the table lookup is skipped
    entirely, so ablated output is bit-invariant to table contents.
    """
    _validate_batch(batch, cfg)
    T = batch.seq_len
    emb = params["embed.word"][batch.word_ids] + params["embed.pos"][:T][None, :, :]
    half = cfg.d_half
    if not cfg.disable_duration:
        emb[..., :half] += params["embed.dur"][batch.dur_bins]
    if not cfg.disable_pause:
        emb[..., half:] += params["embed.pause"][batch.pause_bins]
    return emb


def compose_embeddings(
    batch: Batch,
    params: dict,
    cfg: ModelConfig,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Full embedding stage: additive sum, layer norm, dropout (train only)."""
    out, _ = _embed_forward(batch, params, cfg, mode, dropout_rng)
    return out


def _dropout_rng_for(mode: str, cfg: ModelConfig, rng):
    if mode == "train" and cfg.dropout_rate > 0.0:
        return rng
    return None


def _embed_forward(batch, params, cfg, mode, dropout_rng):
    emb = embedding_sum(batch, params, cfg)
    normed, ln_cache = layer_norm_forward(emb, params["embed.ln.gain"], params["embed.ln.bias"])
    rng = _dropout_rng_for(mode, cfg, dropout_rng)
    out, keep = dropout_forward(normed, cfg.dropout_rate if rng is not None else 0.0, rng)
    return out, (ln_cache, keep)


def _embed_backward(dout, cache, batch, cfg, grads):
    ln_cache, keep = cache
    dnormed = dropout_backward(dout, keep)
    demb, dgain, dbias = layer_norm_backward(dnormed, ln_cache)
    grads["embed.ln.gain"] += dgain
    grads["embed.ln.bias"] += dbias

    T = batch.seq_len
    np.add.at(grads["embed.word"], batch.word_ids, demb)
    grads["embed.pos"][:T] += demb.sum(axis=0)
    half = cfg.d_half
    if not cfg.disable_duration:
        np.add.at(grads["embed.dur"], batch.dur_bins, demb[..., :half])
    if not cfg.disable_pause:
        np.add.at(grads["embed.pause"], batch.pause_bins, demb[..., half:])


def _attention_forward(x, params, prefix, mask_bias, cfg):
    B, T, D = x.shape
    H, Dh = cfg.n_heads, cfg.d_head
    q, cq = linear_forward(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k, ck = linear_forward(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v, cv = linear_forward(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    qh = q.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
    kh = k.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
    vh = v.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
    scale = 1.0 / np.sqrt(Dh)
    scores = qh @ kh.transpose(0, 1, 3, 2) * scale + mask_bias
    probs = softmax_last(scores)
    ctx = probs @ vh
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
    out, co = linear_forward(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache = (cq, ck, cv, co, qh, kh, vh, probs, scale, (B, T, D, H, Dh))
    return out, probs, cache


def _attention_backward(dout, cache, prefix, grads):
    cq, ck, cv, co, qh, kh, vh, probs, scale, (B, T, D, H, Dh) = cache
    dmerged, dwo, dbo = linear_backward(dout, co)
    grads[f"{prefix}.wo"] += dwo
    grads[f"{prefix}.bo"] += dbo

    dctx = dmerged.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dprobs, probs)
    dqh = dscores @ kh * scale
    dkh = dscores.transpose(0, 1, 3, 2) @ qh * scale

    dx = np.zeros((B, T, D), dtype=dout.dtype)
    for dpart, cpart, wname, bname in (
        (dqh, cq, f"{prefix}.wq", f"{prefix}.bq"),
        (dkh, ck, f"{prefix}.wk", f"{prefix}.bk"),
        (dvh, cv, f"{prefix}.wv", f"{prefix}.bv"),
    ):
        flat = dpart.transpose(0, 2, 1, 3).reshape(B, T, D)
        dxi, dw, db = linear_backward(flat, cpart)
        dx += dxi
        grads[wname] += dw
        grads[bname] += db
    return dx


def _ff_forward(x, params, prefix):
    h1, c1 = linear_forward(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    g, cg = gelu_forward(h1)
    out, c2 = linear_forward(g, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    return out, (c1, cg, c2)


def _ff_backward(dout, cache, prefix, grads):
    c1, cg, c2 = cache
    dg, dw2, db2 = linear_backward(dout, c2)
    grads[f"{prefix}.w2"] += dw2
    grads[f"{prefix}.b2"] += db2
    dh1 = gelu_backward(dg, cg)
    dx, dw1, db1 = linear_backward(dh1, c1)
    grads[f"{prefix}.w1"] += dw1
    grads[f"{prefix}.b1"] += db1
    return dx


def _check_finite(arr, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activations in {where}")


def forward(
    batch: Batch,
    params: dict,
    cfg: ModelConfig,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
    stats: ForwardStats | None = None,
    want_caches: bool = False,
):
    """Run the encoder; returns (ForwardOutput, caches or None).

    mode "eval" disables dropout and is bitwise deterministic; "train"
    applies dropout driven by dropout_rng. Attention gives exactly zero
    weight to [PAD] keys. Raises NumericError naming the layer if any
    intermediate goes non-finite.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if stats is not None:
        stats.record(batch)

    x, embed_cache = _embed_forward(batch, params, cfg, mode, dropout_rng)
    _check_finite(x, "embedding stage")

    # (B, 1, 1, T) additive bias over keys
    mask_bias = np.where(batch.attention_mask[:, None, None, :] == 1, 0.0, MASK_BIAS)
    rng = _dropout_rng_for(mode, cfg, dropout_rng)
    rate = cfg.dropout_rate if rng is not None else 0.0

    layer_caches = []
    attn_probs = []
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        a, probs, attn_cache = _attention_forward(x, params, f"{p}.attn", mask_bias, cfg)
        a_drop, keep_a = dropout_forward(a, rate, rng)
        h1, ln1_cache = layer_norm_forward(
            x + a_drop, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]
        )
        f, ff_cache = _ff_forward(h1, params, f"{p}.ff")
        f_drop, keep_f = dropout_forward(f, rate, rng)
        h2, ln2_cache = layer_norm_forward(
            h1 + f_drop, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]
        )
        _check_finite(h2, f"encoder layer {i}")
        layer_caches.append((attn_cache, keep_a, ln1_cache, ff_cache, keep_f, ln2_cache))
        attn_probs.append(probs)
        x = h2

    hidden = x
    mlm_logits, mlm_cache = linear_forward(hidden, params["head.mlm.w"], params["head.mlm.b"])
    pause_logits, pause_cache = linear_forward(
        hidden, params["head.pause.w"], params["head.pause.b"]
    )
    cls_logits, cls_cache = linear_forward(
        hidden[:, 0, :], params["head.cls.w"], params["head.cls.b"]
    )
    _check_finite(mlm_logits, "mlm head")
    _check_finite(pause_logits, "pause head")
    _check_finite(cls_logits, "cls head")

    out = ForwardOutput(
        hidden_states=hidden,
        mlm_logits=mlm_logits,
        pause_logits=pause_logits,
        cls_logits=cls_logits,
    )
    caches = None
    if want_caches:
        caches = {
            "embed": embed_cache,
            "layers": layer_caches,
            "attn_probs": attn_probs,
            "heads": {"mlm": mlm_cache, "pause": pause_cache, "cls": cls_cache},
        }
    return out, caches


def forward_sequence(
    seq: EncodedSequence,
    params: dict,
    cfg: ModelConfig,
    stats: ForwardStats | None = None,
) -> ForwardOutput:
    """Single-sequence eval-mode forward; output arrays lose the batch axis."""
    out, _ = forward(stack_batch([seq]), params, cfg, mode="eval", stats=stats)
    return ForwardOutput(
        hidden_states=out.hidden_states[0],
        mlm_logits=out.mlm_logits[0],
        pause_logits=out.pause_logits[0],
        cls_logits=out.cls_logits[0],
    )


def _encoder_backward(dhidden, batch, caches, params, cfg, grads):
    dx = dhidden
    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}"
        attn_cache, keep_a, ln1_cache, ff_cache, keep_f, ln2_cache = caches["layers"][i]
        ds2, dg2, db2 = layer_norm_backward(dx, ln2_cache)
        grads[f"{p}.ln2.gain"] += dg2
        grads[f"{p}.ln2.bias"] += db2
        df = dropout_backward(ds2, keep_f)
        dh1 = ds2 + _ff_backward(df, ff_cache, f"{p}.ff", grads)
        ds1, dg1, db1 = layer_norm_backward(dh1, ln1_cache)
        grads[f"{p}.ln1.gain"] += dg1
        grads[f"{p}.ln1.bias"] += db1
        da = dropout_backward(ds1, keep_a)
        dx = ds1 + _attention_backward(da, attn_cache, f"{p}.attn", grads)
    _embed_backward(dx, caches["embed"], batch, cfg, grads)


@dataclass(frozen=True)
class LossWeights:
    mlm: float = 1.0
    pause: float = 1.0
    cls: float = 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mlm, self.pause, self.cls)


@dataclass
class LossBreakdown:
    total: float
    mlm: float
    pause: float
    cls: float
    n_masked_words: int
    n_masked_pauses: int
    n_labeled: int


def _gather_targets(batch: Batch, plan) -> tuple:
    """Index arrays for the three loss surfaces. plan is a MaskingPlan."""
    w_rows = np.array([(m.seq_index, m.position) for m in plan.word_masks], dtype=np.int64)
    w_targets = np.array([m.original_id for m in plan.word_masks], dtype=np.int64)
    p_rows = np.array([(m.seq_index, m.position) for m in plan.pause_masks], dtype=np.int64)
    p_targets = np.array([m.original_pause_bin for m in plan.pause_masks], dtype=np.int64)
    labeled = np.flatnonzero(batch.labels >= 0)
    return w_rows, w_targets, p_rows, p_targets, labeled


def _loss_core(
    batch: Batch,
    plan,
    params: dict,
    cfg: ModelConfig,
    weights: LossWeights,
    dropout_rng,
    mode: str,
    with_grads: bool,
):
    from ..trainer import apply_masking_plan  # circular at import time only

    w_rows, w_targets, p_rows, p_targets, labeled = _gather_targets(batch, plan)
    mlm_active = weights.mlm > 0.0 and len(w_rows) > 0
    pause_active = weights.pause > 0.0 and len(p_rows) > 0
    cls_active = weights.cls > 0.0 and len(labeled) > 0
    if not (mlm_active or pause_active or cls_active):
        raise ValueError(
            "no loss source: the masking plan is empty (or its weights are zero) "
            "and no labeled sequences are present"
        )

    masked = apply_masking_plan(batch, plan)
    out, caches = forward(
        masked, params, cfg, mode=mode, dropout_rng=dropout_rng, want_caches=with_grads
    )

    loss_mlm = loss_pause = loss_cls = 0.0
    d_mlm = d_pause = d_cls = None
    if mlm_active:
        rows = out.mlm_logits[w_rows[:, 0], w_rows[:, 1]]
        loss_mlm, drows = cross_entropy_rows(rows, w_targets)
        if with_grads:
            d_mlm = np.zeros_like(out.mlm_logits)
            d_mlm[w_rows[:, 0], w_rows[:, 1]] = drows * weights.mlm
    if pause_active:
        rows = out.pause_logits[p_rows[:, 0], p_rows[:, 1]]
        loss_pause, drows = cross_entropy_rows(rows, p_targets)
        if with_grads:
            d_pause = np.zeros_like(out.pause_logits)
            d_pause[p_rows[:, 0], p_rows[:, 1]] = drows * weights.pause
    if cls_active:
        rows = out.cls_logits[labeled]
        loss_cls, drows = cross_entropy_rows(rows, batch.labels[labeled])
        if with_grads:
            d_cls = np.zeros_like(out.cls_logits)
            d_cls[labeled] = drows * weights.cls

    total = weights.mlm * loss_mlm + weights.pause * loss_pause + weights.cls * loss_cls
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss: total={total}")
    breakdown = LossBreakdown(
        total=float(total),
        mlm=float(loss_mlm),
        pause=float(loss_pause),
        cls=float(loss_cls),
        n_masked_words=len(w_rows),
        n_masked_pauses=len(p_rows),
        n_labeled=len(labeled),
    )
    if not with_grads:
        return breakdown, None

    grads = zeros_like_params(params)
    dhidden = np.zeros_like(out.hidden_states)
    if d_mlm is not None:
        dh, dw, db = linear_backward(d_mlm, caches["heads"]["mlm"])
        dhidden += dh
        grads["head.mlm.w"] += dw
        grads["head.mlm.b"] += db
    if d_pause is not None:
        dh, dw, db = linear_backward(d_pause, caches["heads"]["pause"])
        dhidden += dh
        grads["head.pause.w"] += dw
        grads["head.pause.b"] += db
    if d_cls is not None:
        dh0, dw, db = linear_backward(d_cls, caches["heads"]["cls"])
        dhidden[:, 0, :] += dh0
        grads["head.cls.w"] += dw
        grads["head.cls.b"] += db

    _encoder_backward(dhidden, masked, caches, params, cfg, grads)
    return breakdown, grads


def compute_loss(
    batch: Batch,
    plan,
    params: dict,
    cfg: ModelConfig,
    weights: LossWeights,
    dropout_rng: np.random.Generator | None = None,
    mode: str = "train",
) -> LossBreakdown:
    """Forward-only loss evaluation (the finite-difference oracle path)."""
    breakdown, _ = _loss_core(batch, plan, params, cfg, weights, dropout_rng, mode, False)
    return breakdown


def loss_and_gradients(
    batch: Batch,
    plan,
    params: dict,
    cfg: ModelConfig,
    weights: LossWeights,
    dropout_rng: np.random.Generator | None = None,
    mode: str = "train",
) -> tuple[LossBreakdown, dict]:
    """Weighted MLM + pause + classification loss with exact gradients.

    Masked word positions are scored against their original ids, masked
    pause positions against their original pause bins; unmasked
    positions contribute nothing. Loss terms with weight zero (or no
    contributing positions) produce exactly zero gradient everywhere.
    """
    return _loss_core(batch, plan, params, cfg, weights, dropout_rng, mode, True)
