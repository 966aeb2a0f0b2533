"""Two-stage training: masked-LM pretraining and classification fine-tuning.

Stage 1 optimizes the MLM and pause-prediction losses over all weights
(optionally everything except the temporal tables can be frozen); stage
2 optimizes the classification head together with the full model.
Determinism discipline: every source of randomness (shuffling, masking,
dropout) draws from its own stream seeded by (seed, purpose, epoch), so
a run is reproducible bit-for-bit and training can resume from an
epoch checkpoint without diverging from the uninterrupted run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataValidationError, NumericError
from .model import (
    Batch,
    LossBreakdown,
    LossWeights,
    ModelConfig,
    TEMPORAL_PARAM_NAMES,
    init_params,
    load_checkpoint,
    load_optimizer_state,
    loss_and_gradients,
    save_checkpoint,
    save_optimizer_state,
    stack_batch,
)
from .tokenizer import EncodedSequence, N_RESERVED, NULL_BIN, UNK_ID

# rng stream tags: (seed, tag, epoch) per purpose
_SHUFFLE, _MASKING, _DROPOUT = 101, 102, 103
_FT_SHUFFLE, _FT_MASKING, _FT_DROPOUT = 201, 202, 203

WORD_ACTIONS = ("mask", "random", "keep")


@dataclass(frozen=True)
class WordMask:
    seq_index: int
    position: int
    original_id: int
    action: str  # 80% "mask", 10% "random", 10% "keep"
    replacement_id: int


@dataclass(frozen=True)
class PauseMask:
    seq_index: int
    position: int
    original_pause_bin: int


@dataclass(frozen=True)
class MaskingPlan:
    """Which positions are masked in a batch, with their originals."""

    word_masks: tuple[WordMask, ...] = ()
    pause_masks: tuple[PauseMask, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.word_masks and not self.pause_masks


EMPTY_PLAN = MaskingPlan()


@dataclass(frozen=True)
class TrainConfig:
    stage: str  # "pretrain" | "finetune"
    learning_rate: float
    batch_size: int
    epochs: int = 10
    iterations: int = 200
    word_mask_rate: float = 0.15
    pause_mask_rate: float = 0.15
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    freeze_non_temporal: bool = False
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only

    def __post_init__(self) -> None:
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be 'pretrain' or 'finetune', got {self.stage!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("word_mask_rate", "pause_mask_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {rate}")
        if self.grad_clip_norm < 0:
            raise ConfigError(f"grad_clip_norm must be >= 0, got {self.grad_clip_norm}")


def pretrain_defaults(**overrides) -> TrainConfig:
    """Stage-1 regime: lr 1e-5, batch 8, 10 epochs, MLM + pause losses."""
    cfg = TrainConfig(
        stage="pretrain",
        learning_rate=1e-5,
        batch_size=8,
        epochs=10,
        loss_weights=LossWeights(mlm=1.0, pause=1.0, cls=0.0),
    )
    return replace(cfg, **overrides) if overrides else cfg


def finetune_defaults(**overrides) -> TrainConfig:
    """Stage-2 regime: lr 2e-5, batch 4, 200 optimizer steps, cls loss only."""
    cfg = TrainConfig(
        stage="finetune",
        learning_rate=2e-5,
        batch_size=4,
        iterations=200,
        word_mask_rate=0.0,
        pause_mask_rate=0.0,
        loss_weights=LossWeights(mlm=0.0, pause=0.0, cls=1.0),
    )
    return replace(cfg, **overrides) if overrides else cfg


def make_masking_plan(
    batch: Batch,
    word_mask_rate: float,
    pause_mask_rate: float,
    rng: np.random.Generator,
    vocab_size: int,
) -> MaskingPlan:
    """Independently mask eligible (non-special) positions of a batch.

    Word positions draw the 80/10/10 mask/random/keep action split;
    pause positions are always replaced with NULL_BIN at input.
    Deterministic given the rng state and batch content.
    """
    for name, rate in (("word_mask_rate", word_mask_rate), ("pause_mask_rate", pause_mask_rate)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {rate}")

    eligible = batch.word_position_mask()
    word_hit = (rng.random(eligible.shape) < word_mask_rate) & eligible
    pause_hit = (rng.random(eligible.shape) < pause_mask_rate) & eligible

    word_rows = np.argwhere(word_hit)  # row-major order: deterministic
    n = len(word_rows)
    action_draw = rng.random(n)
    if vocab_size > N_RESERVED:
        replacements = rng.integers(N_RESERVED, vocab_size, size=n)
    else:
        replacements = np.full(n, UNK_ID, dtype=np.int64)

    word_masks = []
    for j, (b, t) in enumerate(word_rows):
        if action_draw[j] < 0.8:
            action = "mask"
        elif action_draw[j] < 0.9:
            action = "random"
        else:
            action = "keep"
        word_masks.append(
            WordMask(
                seq_index=int(b),
                position=int(t),
                original_id=int(batch.word_ids[b, t]),
                action=action,
                replacement_id=int(replacements[j]),
            )
        )

    pause_masks = [
        PauseMask(
            seq_index=int(b),
            position=int(t),
            original_pause_bin=int(batch.pause_bins[b, t]),
        )
        for b, t in np.argwhere(pause_hit)
    ]
    return MaskingPlan(word_masks=tuple(word_masks), pause_masks=tuple(pause_masks))


def apply_masking_plan(batch: Batch, plan: MaskingPlan) -> Batch:
    """Build the model-input batch: word actions applied, masked pause
    positions carry NULL_BIN in both temporal channels."""
    from .tokenizer import MASK_ID

    if plan.is_empty:
        return batch
    masked = batch.copy()
    for m in plan.word_masks:
        if m.action == "mask":
            masked.word_ids[m.seq_index, m.position] = MASK_ID
        elif m.action == "random":
            masked.word_ids[m.seq_index, m.position] = m.replacement_id
        # "keep" leaves the original id in place
    for m in plan.pause_masks:
        masked.dur_bins[m.seq_index, m.position] = NULL_BIN
        masked.pause_bins[m.seq_index, m.position] = NULL_BIN
    return masked


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            t=0,
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, t: int, tensors: dict[str, np.ndarray]) -> "AdamState":
        m = {k[2:]: a for k, a in tensors.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in tensors.items() if k.startswith("v.")}
        return cls(t=t, m=m, v=v)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    # accumulate in sorted-name order: the result must not depend on dict
    # insertion order, or resumed runs drift by an ulp and then diverge
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    clip: float = 0.0,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction, mutating params in place.

    When clip > 0, gradients are rescaled to global norm <= clip before
    the moment updates.
    """
    norm = global_grad_norm(grads)
    if not np.isfinite(norm):
        raise NumericError(f"non-finite gradients (global norm {norm})")
    scale = clip / norm if clip > 0.0 and norm > clip else 1.0

    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in sorted(params):
        p = params[name]
        g = grads[name] if scale == 1.0 else grads[name] * scale
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def _freeze_non_temporal(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name not in TEMPORAL_PARAM_NAMES:
            g[:] = 0.0


class TrainLogger:
    """Append-only JSONL training log (one line per logged step/epoch)."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._t0 = time.monotonic()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, stage: str, epoch: int, iteration: int, losses: LossBreakdown) -> None:
        if self.path is None:
            return
        line = {
            "stage": stage,
            "epoch": epoch,
            "iteration": iteration,
            "loss_total": losses.total,
            "loss_mlm": losses.mlm,
            "loss_pause": losses.pause,
            "loss_cls": losses.cls,
            "wall_ms": round((time.monotonic() - self._t0) * 1000.0, 3),
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(line) + "\n")


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    if not parts:
        return LossBreakdown(0.0, 0.0, 0.0, 0.0, 0, 0, 0)
    return LossBreakdown(
        total=float(np.mean([p.total for p in parts])),
        mlm=float(np.mean([p.mlm for p in parts])),
        pause=float(np.mean([p.pause for p in parts])),
        cls=float(np.mean([p.cls for p in parts])),
        n_masked_words=sum(p.n_masked_words for p in parts),
        n_masked_pauses=sum(p.n_masked_pauses for p in parts),
        n_labeled=sum(p.n_labeled for p in parts),
    )


def _batches(dataset: Sequence[EncodedSequence], order: np.ndarray, batch_size: int):
    for lo in range(0, len(order), batch_size):
        yield [dataset[i] for i in order[lo : lo + batch_size]]


def _optstate_path(checkpoint_path: Path) -> Path:
    return checkpoint_path.with_suffix(checkpoint_path.suffix + ".optstate")


def _save_with_state(
    path: Path, model_cfg: ModelConfig, params: dict, state: AdamState, epoch: int
) -> None:
    save_checkpoint(path, model_cfg, params)
    save_optimizer_state(_optstate_path(path), {"t": state.t, "epoch": epoch}, state.to_tensors())


def pretrain(
    dataset: Sequence[EncodedSequence],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    run_dir: str | Path,
    resume_from: str | Path | None = None,
) -> tuple[Path, dict[str, np.ndarray]]:
    """Masked-LM pretraining over an encoded corpus (labels are ignored).

    Writes checkpoint.bin (and per-epoch checkpoints when
    checkpoint_every > 0) plus a train_log.jsonl under run_dir. On a
    non-finite loss the run aborts after writing a diagnostic
    checkpoint. Returns (final checkpoint path, parameters).
    """
    if cfg.stage != "pretrain":
        raise ConfigError(f"pretrain called with stage {cfg.stage!r}")
    if not dataset:
        raise DataValidationError("pretraining corpus is empty")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    logger = TrainLogger(run_dir / "train_log.jsonl")

    if resume_from is not None:
        ckpt_cfg, params = load_checkpoint(resume_from)
        if ckpt_cfg != model_cfg:
            raise ConfigError("resume checkpoint config differs from the requested model config")
        meta, tensors = load_optimizer_state(_optstate_path(Path(resume_from)))
        state = AdamState.from_tensors(int(meta["t"]), tensors)
        start_epoch = int(meta["epoch"]) + 1
    else:
        params = init_params(model_cfg, seed=cfg.seed)
        state = AdamState.zeros(params)
        start_epoch = 0

    final_path = run_dir / "checkpoint.bin"
    iteration = state.t
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, _SHUFFLE, epoch]).permutation(len(dataset))
        mask_rng = np.random.default_rng([cfg.seed, _MASKING, epoch])
        drop_rng = np.random.default_rng([cfg.seed, _DROPOUT, epoch])
        epoch_parts: list[LossBreakdown] = []
        for seqs in _batches(dataset, order, cfg.batch_size):
            batch = stack_batch(seqs)
            plan = make_masking_plan(
                batch, cfg.word_mask_rate, cfg.pause_mask_rate, mask_rng, model_cfg.vocab_size
            )
            if plan.is_empty:
                continue  # nothing to predict in this batch
            try:
                breakdown, grads = loss_and_gradients(
                    batch, plan, params, model_cfg, cfg.loss_weights, dropout_rng=drop_rng
                )
                if cfg.freeze_non_temporal:
                    _freeze_non_temporal(grads)
                adam_step(
                    params,
                    grads,
                    state,
                    lr=cfg.learning_rate,
                    betas=(cfg.adam_beta1, cfg.adam_beta2),
                    eps=cfg.adam_eps,
                    clip=cfg.grad_clip_norm,
                )
            except NumericError:
                _save_with_state(run_dir / "checkpoint-diagnostic.bin", model_cfg, params, state, epoch)
                raise
            iteration += 1
            epoch_parts.append(breakdown)
        logger.log("pretrain", epoch, iteration, _mean_breakdown(epoch_parts))
        if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            _save_with_state(
                run_dir / f"checkpoint-epoch{epoch:03d}.bin", model_cfg, params, state, epoch
            )

    _save_with_state(final_path, model_cfg, params, state, cfg.epochs - 1)
    return final_path, params


def finetune(
    dataset: Sequence[EncodedSequence],
    init: str | Path | tuple[ModelConfig, dict],
    cfg: TrainConfig,
    run_dir: str | Path,
    model_cfg_override: ModelConfig | None = None,
) -> tuple[Path, dict[str, np.ndarray]]:
    """Classification fine-tuning for exactly cfg.iterations optimizer steps.

    Every window must carry a label (windows inherit their transcript's
    label at encode time). With iterations == 0 the saved checkpoint is
    byte-identical to the initial one.
    """
    if cfg.stage != "finetune":
        raise ConfigError(f"finetune called with stage {cfg.stage!r}")
    if not dataset:
        raise DataValidationError("fine-tuning dataset is empty")
    missing = [s.transcript_id for s in dataset if s.label is None]
    if missing:
        raise DataValidationError(
            f"fine-tuning requires labels; missing for {sorted(set(missing))[:5]}"
        )

    if isinstance(init, tuple):
        model_cfg, params = init
        params = {k: a.copy() for k, a in params.items()}
    else:
        model_cfg, params = load_checkpoint(init)
    if model_cfg_override is not None:
        model_cfg = model_cfg_override

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    logger = TrainLogger(run_dir / "train_log.jsonl")
    state = AdamState.zeros(params)

    iteration = 0
    pass_idx = 0
    while iteration < cfg.iterations:
        order = np.random.default_rng([cfg.seed, _FT_SHUFFLE, pass_idx]).permutation(len(dataset))
        mask_rng = np.random.default_rng([cfg.seed, _FT_MASKING, pass_idx])
        drop_rng = np.random.default_rng([cfg.seed, _FT_DROPOUT, pass_idx])
        for seqs in _batches(dataset, order, cfg.batch_size):
            if iteration >= cfg.iterations:
                break
            batch = stack_batch(seqs)
            plan = make_masking_plan(
                batch, cfg.word_mask_rate, cfg.pause_mask_rate, mask_rng, model_cfg.vocab_size
            )
            try:
                breakdown, grads = loss_and_gradients(
                    batch, plan, params, model_cfg, cfg.loss_weights, dropout_rng=drop_rng
                )
                if cfg.freeze_non_temporal:
                    _freeze_non_temporal(grads)
                adam_step(
                    params,
                    grads,
                    state,
                    lr=cfg.learning_rate,
                    betas=(cfg.adam_beta1, cfg.adam_beta2),
                    eps=cfg.adam_eps,
                    clip=cfg.grad_clip_norm,
                )
            except NumericError:
                _save_with_state(run_dir / "checkpoint-diagnostic.bin", model_cfg, params, state, pass_idx)
                raise
            iteration += 1
            logger.log("finetune", pass_idx, iteration, breakdown)
        pass_idx += 1

    final_path = run_dir / "checkpoint.bin"
    save_checkpoint(final_path, model_cfg, params)
    return final_path, params
