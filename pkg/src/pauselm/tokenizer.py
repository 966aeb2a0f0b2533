"""Vocabulary building and transcript encoding.

Durations and pauses are constrained to [0, 3) seconds and quantized
uniformly into 10 ms bins (300 per axis). The (duration-bin, pause-bin)
pair attached to each word position forms its pause token; the 300x300
product vocabulary is kept factored as two bin axes and never
materialized. Bin index 300 (NULL_BIN) marks positions with no temporal
information: special tokens, padding, and masked pause positions.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataValidationError
from .ingest import IntervalSequence, Transcript

N_BINS = 300
NULL_BIN = 300
BIN_WIDTH_S = 0.01
MAX_SECONDS = 3.0

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
MASK_ID = 3
UNK_ID = 4
RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")
N_RESERVED = len(RESERVED_TOKENS)


def quantize_seconds(v: float) -> int:
    """Map seconds onto a 10 ms bin: bin b covers [b*0.01, (b+1)*0.01).

    Negative inputs clamp to bin 0 and bin 299 absorbs everything
    >= 2.99 s. The +1e-9 nudge gives decimal-intent flooring: values
    meant as exact multiples of 0.01 land in the right bin even though
    e.g. float(0.29) * 100 is fractionally below 29.
    """
    if not math.isfinite(v):
        raise ValueError(f"cannot quantize non-finite value {v!r}")
    clamped = min(max(v, 0.0), MAX_SECONDS)  # pre-clamp so huge floats cannot overflow
    return min(int(clamped * 100.0 + 1e-9), N_BINS - 1)


def quantize_array(values: np.ndarray) -> np.ndarray:
    """Vectorized quantize_seconds for histogram and encoding paths."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot quantize non-finite values")
    clamped = np.clip(values, 0.0, MAX_SECONDS)
    bins = np.floor(clamped * 100.0 + 1e-9).astype(np.int64)
    return np.minimum(bins, N_BINS - 1)


def bin_center(b: int) -> float:
    """Decode a bin index to the center of its 10 ms cell, in seconds."""
    if not 0 <= b < N_BINS:
        raise ValueError(f"bin index {b} outside [0, {N_BINS - 1}]")
    return (b + 0.5) * BIN_WIDTH_S


@dataclass(frozen=True)
class PauseToken:
    """Quantized (duration-bin, pause-bin) pair for one token position.

    Real word positions carry both bins in [0, 299]; special positions
    ([CLS]/[SEP]/[PAD]) and masked pause positions carry NULL_BIN in both.
    """

    dur_bin: int
    pause_bin: int

    def __post_init__(self) -> None:
        real = 0 <= self.dur_bin < N_BINS and 0 <= self.pause_bin < N_BINS
        null = self.dur_bin == NULL_BIN and self.pause_bin == NULL_BIN
        if not (real or null):
            raise ValueError(
                f"invalid pause token ({self.dur_bin}, {self.pause_bin}): bins must "
                f"both be in [0, {N_BINS - 1}] or both NULL_BIN ({NULL_BIN})"
            )

    @property
    def is_null(self) -> bool:
        return self.dur_bin == NULL_BIN


NULL_PAUSE_TOKEN = PauseToken(NULL_BIN, NULL_BIN)


class Vocabulary:
    """Word-level vocabulary with five fixed reserved ids.

    Build it from training-split text only; encoding test data with a
    vocabulary built on it would leak. Ordering is deterministic:
    frequency descending, then lexicographic.
    """

    def __init__(self, words: Sequence[str]):
        for w in words:
            if w in RESERVED_TOKENS:
                raise DataValidationError(f"reserved token {w!r} cannot be a vocabulary word")
        self.id_to_token: tuple[str, ...] = RESERVED_TOKENS + tuple(words)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataValidationError("vocabulary contains duplicate words")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    @property
    def n_words(self) -> int:
        return len(self.id_to_token) - N_RESERVED

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:N_RESERVED]) != RESERVED_TOKENS:
            raise DataValidationError(
                f"vocabulary file must start with the reserved tokens {RESERVED_TOKENS}"
            )
        return cls(lines[N_RESERVED:])


def build_vocab(corpus: Sequence[Transcript], min_count: int = 1) -> Vocabulary:
    """Count normalized words and keep those with frequency >= min_count."""
    if not corpus:
        raise DataValidationError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for t in corpus:
        counts.update(w.text for w in t.words)
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


@dataclass(eq=False)
class EncodedSequence:
    """One model-ready window: aligned ids, bins and attention mask.

    All arrays have length max_seq_len. Position 0 is [CLS], the last
    attended position is [SEP], and [PAD] fills the tail with attention
    0. Windows split from one long transcript share its id and label.
    """

    transcript_id: str
    word_ids: np.ndarray
    dur_bins: np.ndarray
    pause_bins: np.ndarray
    attention_mask: np.ndarray
    label: int | None = None

    def __len__(self) -> int:
        return int(self.word_ids.shape[0])

    @property
    def n_words(self) -> int:
        return int(self.attention_mask.sum()) - 2  # minus [CLS] and [SEP]

    @property
    def pause_tokens(self) -> tuple[PauseToken, ...]:
        return tuple(
            PauseToken(int(d), int(p)) for d, p in zip(self.dur_bins, self.pause_bins)
        )

    def word_positions(self) -> range:
        """Positions of real words: 1 .. n_words inclusive."""
        return range(1, 1 + self.n_words)


def encode(
    t: Transcript,
    iv: IntervalSequence,
    vocab: Vocabulary,
    max_seq_len: int,
) -> list[EncodedSequence]:
    """Encode one transcript into [CLS] word... [SEP] [PAD]... windows.

    Each word position carries PauseToken(quantize(duration),
    quantize(pause)); special positions carry NULL_BIN pairs. Transcripts
    longer than max_seq_len - 2 words are split into consecutive
    non-overlapping windows, never truncated.
    """
    if max_seq_len < 8:
        raise ValueError(f"max_seq_len must be >= 8, got {max_seq_len}")
    n = len(t.words)
    if len(iv.durations) != n:
        raise DataValidationError(
            f"interval sequence length {len(iv.durations)} != word count {n}"
        )
    window = max_seq_len - 2
    out: list[EncodedSequence] = []
    for lo in range(0, n, window):
        hi = min(lo + window, n)
        k = hi - lo
        word_ids = np.full(max_seq_len, PAD_ID, dtype=np.int64)
        dur_bins = np.full(max_seq_len, NULL_BIN, dtype=np.int64)
        pause_bins = np.full(max_seq_len, NULL_BIN, dtype=np.int64)
        attention = np.zeros(max_seq_len, dtype=np.int64)

        word_ids[0] = CLS_ID
        for j in range(k):
            word_ids[1 + j] = vocab.id(t.words[lo + j].text)
            dur_bins[1 + j] = quantize_seconds(iv.durations[lo + j])
            pause_bins[1 + j] = quantize_seconds(iv.pauses[lo + j])
        word_ids[1 + k] = SEP_ID
        attention[: k + 2] = 1

        out.append(
            EncodedSequence(
                transcript_id=t.id,
                word_ids=word_ids,
                dur_bins=dur_bins,
                pause_bins=pause_bins,
                attention_mask=attention,
                label=t.label,
            )
        )
    return out


def encode_corpus(
    transcripts: Sequence[Transcript],
    vocab: Vocabulary,
    max_seq_len: int,
) -> list[EncodedSequence]:
    """Extract intervals and encode every transcript, in corpus order."""
    from .ingest import extract_intervals

    encoded: list[EncodedSequence] = []
    for t in transcripts:
        encoded.extend(encode(t, extract_intervals(t), vocab, max_seq_len))
    return encoded
