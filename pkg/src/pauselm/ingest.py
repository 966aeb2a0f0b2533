"""Ingestion of word-level-timestamped transcripts.

Dataset format is JSONL, one transcript per line:

    {"id": "s001", "label": 1, "words": [{"w": "the", "start": 0.0, "end": 0.12}, ...]}

``label`` is optional (0 = control, 1 = AD) so the same format serves
unlabeled pretraining corpora and labeled fine-tuning corpora. All
parsing is strict: NaN/Inf timestamps, duplicate ids, decreasing start
times and end < start are rejected with errors that name the offending
line or word.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataValidationError, ParseError

_EDGE_PUNCT = re.compile(r"^[^\w']+|[^\w']+$")
_WHITESPACE = re.compile(r"\s+")


def normalize_word(raw: str) -> str:
    """Normalize a surface form: lowercase, strip surrounding punctuation.

    Internal apostrophes (and hyphens) survive, so "Don't" -> "don't".
    A token that is pure punctuation keeps its raw form rather than
    vanishing; whitespace is removed in every case.
    """
    w = _EDGE_PUNCT.sub("", raw.lower())
    w = _WHITESPACE.sub("", w)
    if not w:
        w = _WHITESPACE.sub("", raw)
    return w


@dataclass(frozen=True)
class TimedWord:
    """One word with its time anchors in seconds."""

    text: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Transcript:
    """One subject sample: an ordered word stream with an optional label."""

    id: str
    words: tuple[TimedWord, ...]
    label: int | None = None


@dataclass(frozen=True)
class IntervalSequence:
    """Per-word durations and following pauses, aligned with the words."""

    durations: tuple[float, ...]
    pauses: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.durations) != len(self.pauses):
            raise DataValidationError("durations and pauses must be equally long")


def extract_intervals(t: Transcript) -> IntervalSequence:
    """Compute word durations and inter-word pauses for one transcript.

    pauses[i] is the silent gap after word i, clamped at 0 (ASR overlap
    artifacts produce negative gaps). The final word has no following
    word; its pause is 0 by convention.
    """
    durations = tuple(w.end - w.start for w in t.words)
    pauses = []
    for i in range(len(t.words) - 1):
        pauses.append(max(0.0, t.words[i + 1].start - t.words[i].end))
    pauses.append(0.0)
    return IntervalSequence(durations=durations, pauses=tuple(pauses))


def _require_finite_number(value: object, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DataValidationError(f"{what} must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise DataValidationError(f"{what} must be finite, got {value!r}")
    return v


def transcript_from_dict(obj: object, line_number: int | None = None) -> Transcript:
    """Validate one raw record and build a Transcript (words normalized)."""
    where = f"line {line_number}: " if line_number is not None else ""
    if not isinstance(obj, dict):
        raise DataValidationError(f"{where}record must be a JSON object")

    tid = obj.get("id")
    if not isinstance(tid, str) or not tid:
        raise DataValidationError(f"{where}'id' must be a non-empty string")

    label = obj.get("label")
    if label is not None:
        if isinstance(label, bool) or label not in (0, 1):
            raise DataValidationError(f"{where}'label' must be 0 or 1, got {label!r}")
        label = int(label)

    raw_words = obj.get("words")
    if not isinstance(raw_words, list) or not raw_words:
        raise DataValidationError(f"{where}'words' must be a non-empty list")

    words = []
    prev_start = None
    for i, rw in enumerate(raw_words):
        ctx = f"{where}word {i}"
        if not isinstance(rw, dict):
            raise DataValidationError(f"{ctx}: must be an object")
        text = rw.get("w")
        if not isinstance(text, str) or not text.strip():
            raise DataValidationError(f"{ctx}: 'w' must be a non-empty string")
        start = _require_finite_number(rw.get("start"), f"{ctx}: 'start'")
        end = _require_finite_number(rw.get("end"), f"{ctx}: 'end'")
        if start < 0:
            raise DataValidationError(f"{ctx}: start {start} < 0")
        if end < start:
            raise DataValidationError(f"{ctx}: end {end} < start {start}")
        if prev_start is not None and start < prev_start:
            raise DataValidationError(
                f"{ctx}: start {start} decreases below previous start {prev_start}"
            )
        prev_start = start
        words.append(TimedWord(text=normalize_word(text), start=start, end=end))

    return Transcript(id=tid, words=tuple(words), label=label)


def _reject_constant(name: str) -> float:
    raise DataValidationError(f"non-finite JSON constant {name!r} not permitted")


def parse_dataset(path: str | Path) -> list[Transcript]:
    """Parse a transcript JSONL file; blank lines are ignored.

    Raises ParseError (with the line number) for malformed JSON and
    DataValidationError for invariant violations, including duplicate ids.
    """
    path = Path(path)
    transcripts: list[Transcript] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, parse_constant=_reject_constant)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line_number) from exc
            t = transcript_from_dict(obj, line_number)
            if t.id in seen_ids:
                raise DataValidationError(f"line {line_number}: duplicate id {t.id!r}")
            seen_ids.add(t.id)
            transcripts.append(t)
    return transcripts


def transcript_to_dict(t: Transcript) -> dict:
    rec: dict = {"id": t.id}
    if t.label is not None:
        rec["label"] = t.label
    rec["words"] = [{"w": w.text, "start": w.start, "end": w.end} for w in t.words]
    return rec


def write_dataset(transcripts: Iterable[Transcript], path: str | Path) -> None:
    """Serialize transcripts as JSONL; parse_dataset round-trips exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(transcript_to_dict(t)) + "\n")


def dataset_summary(transcripts: Sequence[Transcript]) -> dict:
    """Counts used by the `ingest` subcommand's report."""
    n_words = sum(len(t.words) for t in transcripts)
    labels = {"ad": 0, "control": 0, "unlabeled": 0}
    for t in transcripts:
        if t.label == 1:
            labels["ad"] += 1
        elif t.label == 0:
            labels["control"] += 1
        else:
            labels["unlabeled"] += 1
    return {
        "n_transcripts": len(transcripts),
        "n_words": n_words,
        "labels": labels,
    }
