"""Evaluation protocols: masked-pause RMSE, binary classification metrics,
and pause-distribution statistics.

The masked-pause protocol is a leave-one-out sweep: for every word
position, only that position's pause token is masked (words and all
other pauses stay intact), the model predicts the pause bin, and the
decoded bin center is scored against the true continuous pause. An
all-at-once variant (every pause masked in a single pass per window) is
available behind a flag for comparison.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataValidationError
from .ingest import Transcript, extract_intervals
from .model import ForwardStats, ModelConfig, forward_sequence
from .tokenizer import (
    MAX_SECONDS,
    N_BINS,
    NULL_BIN,
    Vocabulary,
    bin_center,
    encode,
    quantize_array,
)

GROUP_NAMES = {0: "control", 1: "ad", None: "unlabeled"}


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Root mean square error between two equally long sequences."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of empty sequences is undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when precision + recall == 0."""
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class TranscriptRmse:
    transcript_id: str
    group: str
    rmse_s: float
    n_words: int


@dataclass(frozen=True)
class GroupRmseSummary:
    group: str
    n_transcripts: int
    mean_rmse_s: float
    min_rmse_s: float
    max_rmse_s: float


@dataclass
class RmseReport:
    per_transcript: list[TranscriptRmse]
    groups: dict[str, GroupRmseSummary]
    forward_passes: int
    total_word_positions: int

    def to_dict(self) -> dict:
        return {
            "per_transcript": [
                {
                    "id": r.transcript_id,
                    "group": r.group,
                    "rmse_s": r.rmse_s,
                    "n_words": r.n_words,
                }
                for r in self.per_transcript
            ],
            "groups": {
                g: {
                    "n_transcripts": s.n_transcripts,
                    "mean_rmse_s": s.mean_rmse_s,
                    "min_rmse_s": s.min_rmse_s,
                    "max_rmse_s": s.max_rmse_s,
                }
                for g, s in sorted(self.groups.items())
            },
            "protocol": {
                "forward_passes": self.forward_passes,
                "total_word_positions": self.total_word_positions,
            },
        }


def _check_vocab(cfg: ModelConfig, vocab: Vocabulary) -> None:
    if len(vocab) != cfg.vocab_size:
        raise DataValidationError(
            f"vocabulary size {len(vocab)} does not match model vocab_size {cfg.vocab_size}"
        )


def _sweep_transcript(t, params, cfg, vocab, sweep, stats):
    iv = extract_intervals(t)
    truth_all = np.clip(np.asarray(iv.pauses, dtype=np.float64), 0.0, MAX_SECONDS)
    preds: list[float] = []
    trues: list[float] = []
    word_idx = 0
    for window in encode(t, iv, vocab, cfg.max_seq_len):
        positions = list(window.word_positions())
        if sweep:
            for pos in positions:
                masked = _mask_positions(window, [pos])
                out = forward_sequence(masked, params, cfg, stats=stats)
                preds.append(bin_center(int(np.argmax(out.pause_logits[pos]))))
                trues.append(float(truth_all[word_idx]))
                word_idx += 1
        else:
            masked = _mask_positions(window, positions)
            out = forward_sequence(masked, params, cfg, stats=stats)
            for pos in positions:
                preds.append(bin_center(int(np.argmax(out.pause_logits[pos]))))
                trues.append(float(truth_all[word_idx]))
                word_idx += 1
    return TranscriptRmse(
        transcript_id=t.id,
        group=GROUP_NAMES[t.label],
        rmse_s=rmse(preds, trues),
        n_words=len(preds),
    )


def _mask_positions(window, positions):
    from dataclasses import replace

    dur = window.dur_bins.copy()
    pause = window.pause_bins.copy()
    for pos in positions:
        dur[pos] = NULL_BIN
        pause[pos] = NULL_BIN
    return replace(window, dur_bins=dur, pause_bins=pause)


def eval_masked_pause(
    transcripts: Sequence[Transcript],
    params: dict,
    cfg: ModelConfig,
    vocab: Vocabulary,
    sweep: bool = True,
    stats: ForwardStats | None = None,
    n_threads: int = 1,
) -> RmseReport:
    """Masked-pause prediction RMSE per transcript with group summaries.

    sweep=True (default) masks exactly one pause position per forward
    pass, so the number of forward passes equals the total word count.
    Decoded predictions always lie in [0.005, 2.995]; truth is the
    continuous pause clamped to the quantizer domain [0, 3].
    """
    _check_vocab(cfg, vocab)
    if stats is None:
        stats = ForwardStats()

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(
                pool.map(lambda t: _sweep_transcript(t, params, cfg, vocab, sweep, stats), transcripts)
            )
    else:
        rows = [_sweep_transcript(t, params, cfg, vocab, sweep, stats) for t in transcripts]

    groups: dict[str, GroupRmseSummary] = {}
    for name in sorted({r.group for r in rows}):
        values = [r.rmse_s for r in rows if r.group == name]
        groups[name] = GroupRmseSummary(
            group=name,
            n_transcripts=len(values),
            mean_rmse_s=float(np.mean(values)),
            min_rmse_s=float(np.min(values)),
            max_rmse_s=float(np.max(values)),
        )
    return RmseReport(
        per_transcript=rows,
        groups=groups,
        forward_passes=stats.forward_calls,
        total_word_positions=sum(r.n_words for r in rows),
    )


@dataclass(frozen=True)
class MetricsReport:
    """Binary classification metrics; the positive class is AD (label 1)."""

    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "MetricsReport":
        if len(y_true) != len(y_pred):
            raise ValueError("y_true and y_pred lengths differ")
        tp = fp = tn = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == 1:
                tp, fp = (tp + 1, fp) if t == 1 else (tp, fp + 1)
            else:
                tn, fn = (tn + 1, fn) if t == 0 else (tn, fn + 1)
        return cls(tp=tp, fp=fp, tn=tn, fn=fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        return f1_from_precision_recall(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy_pct": round(100.0 * self.accuracy, 1),
            "precision_pct": round(100.0 * self.precision, 1),
            "recall_pct": round(100.0 * self.recall, 1),
            "f1_pct": round(100.0 * self.f1, 1),
        }


def classify_transcript(t: Transcript, params: dict, cfg: ModelConfig, vocab: Vocabulary) -> int:
    """Average window cls logits, then argmax; ties resolve to control (0)."""
    iv = extract_intervals(t)
    logits = [
        forward_sequence(w, params, cfg).cls_logits for w in encode(t, iv, vocab, cfg.max_seq_len)
    ]
    mean_logits = np.mean(np.stack(logits), axis=0)
    return int(np.argmax(mean_logits))  # first max wins, so a tie yields 0


def eval_classification(
    transcripts: Sequence[Transcript],
    params: dict,
    cfg: ModelConfig,
    vocab: Vocabulary,
) -> MetricsReport:
    """Transcript-level metrics from window-averaged classification logits."""
    _check_vocab(cfg, vocab)
    unlabeled = [t.id for t in transcripts if t.label is None]
    if unlabeled:
        raise DataValidationError(
            f"classification evaluation requires labels; missing for {unlabeled[:5]}"
        )
    y_true = [int(t.label) for t in transcripts]
    y_pred = [classify_transcript(t, params, cfg, vocab) for t in transcripts]
    return MetricsReport.from_predictions(y_true, y_pred)


@dataclass(frozen=True)
class GroupPauseStats:
    group: str
    counts: tuple[int, ...]  # one count per 10 ms bin; bin 299 absorbs >= 2.99 s
    n: int
    mean_s: float
    variance_s2: float
    n_long: int  # pauses in [0.8, 3.0]
    mean_long_s: float
    variance_long_s2: float


@dataclass
class PauseStatsReport:
    groups: dict[str, GroupPauseStats]
    amplified_range_s: tuple[float, float] = (0.8, 3.0)

    def to_dict(self) -> dict:
        return {
            "amplified_range_s": list(self.amplified_range_s),
            "groups": {
                g: {
                    "n": s.n,
                    "mean_s": s.mean_s,
                    "variance_s2": s.variance_s2,
                    "n_long": s.n_long,
                    "mean_long_s": s.mean_long_s,
                    "variance_long_s2": s.variance_long_s2,
                }
                for g, s in sorted(self.groups.items())
            },
        }

    def csv_rows(self) -> list[tuple[str, str, str, str]]:
        rows = [("bin_start_s", "bin_end_s", "group", "count")]
        for g, s in sorted(self.groups.items()):
            for b, count in enumerate(s.counts):
                rows.append((f"{b * 0.01:.2f}", f"{(b + 1) * 0.01:.2f}", g, str(count)))
        return rows

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(self.csv_rows())


def pause_stats(transcripts: Sequence[Transcript]) -> PauseStatsReport:
    """10 ms histogram and moments of inter-word pauses, per group.

    Only real gaps between consecutive words are counted; the final
    word's conventional zero pause is excluded. The "long" statistics
    restrict to pauses in the amplified [0.8 s, 3.0 s] range.
    """
    by_group: dict[str, list[float]] = {}
    for t in transcripts:
        pauses = extract_intervals(t).pauses[:-1]
        by_group.setdefault(GROUP_NAMES[t.label], []).extend(pauses)

    groups: dict[str, GroupPauseStats] = {}
    for name, values in sorted(by_group.items()):
        arr = np.asarray(values, dtype=np.float64)
        counts = np.bincount(quantize_array(arr), minlength=N_BINS) if arr.size else np.zeros(N_BINS, dtype=np.int64)
        long = arr[(arr >= 0.8) & (arr <= MAX_SECONDS)]
        groups[name] = GroupPauseStats(
            group=name,
            counts=tuple(int(c) for c in counts),
            n=int(arr.size),
            mean_s=float(arr.mean()) if arr.size else 0.0,
            variance_s2=float(arr.var()) if arr.size else 0.0,
            n_long=int(long.size),
            mean_long_s=float(long.mean()) if long.size else 0.0,
            variance_long_s2=float(long.var()) if long.size else 0.0,
        )
    return PauseStatsReport(groups=groups)


def write_json_report(report_dict: dict, path: str | Path) -> None:
    """Canonical JSON emission: sorted keys, trailing newline, deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_dict, indent=2, sort_keys=True) + "\n", encoding="utf-8")
