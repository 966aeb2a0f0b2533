import json
import math

import pytest
from hypothesis import given, strategies as st

from pauselm.errors import DataValidationError, ParseError
from pauselm.ingest import (
    IntervalSequence,
    TimedWord,
    Transcript,
    dataset_summary,
    extract_intervals,
    normalize_word,
    parse_dataset,
    write_dataset,
)

from conftest import make_transcript


def write_lines(tmp_path, lines, name="data.jsonl"):
    path = tmp_path / name
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestParseDataset:
    def test_minimal_record(self, tmp_path):
        path = write_lines(
            tmp_path,
            ['{"id": "t1", "label": 1, "words": [{"w": "cookie", "start": 0.0, "end": 0.4}]}'],
        )
        (t,) = parse_dataset(path)
        assert t.id == "t1"
        assert t.label == 1
        assert len(t.words) == 1
        assert t.words[0] == TimedWord("cookie", 0.0, 0.4)

    def test_empty_file(self, tmp_path):
        assert parse_dataset(write_lines(tmp_path, [])) == []

    def test_end_before_start_names_word(self, tmp_path):
        path = write_lines(
            tmp_path,
            ['{"id": "t1", "words": [{"w": "a", "start": 0.0, "end": 0.1}, '
             '{"w": "b", "start": 0.2, "end": 0.1}]}'],
        )
        with pytest.raises(DataValidationError, match="word 1"):
            parse_dataset(path)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = write_lines(
            tmp_path,
            ['{"id": "ok", "words": [{"w": "a", "start": 0, "end": 1}]}', "{nope"],
        )
        with pytest.raises(ParseError, match="line 2"):
            parse_dataset(path)

    def test_duplicate_id(self, tmp_path):
        line = '{"id": "dup", "words": [{"w": "a", "start": 0, "end": 1}]}'
        with pytest.raises(DataValidationError, match="duplicate id"):
            parse_dataset(write_lines(tmp_path, [line, line]))

    def test_decreasing_start_times(self, tmp_path):
        path = write_lines(
            tmp_path,
            ['{"id": "t", "words": [{"w": "a", "start": 1.0, "end": 1.2}, '
             '{"w": "b", "start": 0.5, "end": 1.5}]}'],
        )
        with pytest.raises(DataValidationError, match="decreases"):
            parse_dataset(path)

    def test_rejects_nan_timestamps(self, tmp_path):
        path = write_lines(
            tmp_path, ['{"id": "t", "words": [{"w": "a", "start": NaN, "end": 1.0}]}']
        )
        with pytest.raises(DataValidationError, match="NaN"):
            parse_dataset(path)

    @pytest.mark.parametrize(
        "record",
        [
            '{"words": [{"w": "a", "start": 0, "end": 1}]}',  # no id
            '{"id": "t", "words": []}',  # empty words
            '{"id": "t", "label": 2, "words": [{"w": "a", "start": 0, "end": 1}]}',
            '{"id": "t", "label": true, "words": [{"w": "a", "start": 0, "end": 1}]}',
            '{"id": "t", "words": [{"w": "", "start": 0, "end": 1}]}',
            '{"id": "t", "words": [{"w": "a", "start": -0.5, "end": 1}]}',
            '["not", "an", "object"]',
        ],
    )
    def test_invalid_records(self, tmp_path, record):
        with pytest.raises(DataValidationError):
            parse_dataset(write_lines(tmp_path, [record]))

    def test_blank_lines_skipped(self, tmp_path):
        path = write_lines(
            tmp_path, ["", '{"id": "t", "words": [{"w": "a", "start": 0, "end": 1}]}', ""]
        )
        assert len(parse_dataset(path)) == 1

    def test_label_optional(self, tmp_path):
        path = write_lines(tmp_path, ['{"id": "t", "words": [{"w": "a", "start": 0, "end": 1}]}'])
        assert parse_dataset(path)[0].label is None


class TestNormalization:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Don't", "don't"),
            ('"Hello,"', "hello"),
            ("WORLD!!", "world"),
            ("well-known", "well-known"),
            ("...", "..."),  # pure punctuation keeps its raw form
            ("a b", "ab"),
        ],
    )
    def test_normalize_word(self, raw, expected):
        assert normalize_word(raw) == expected

    def test_idempotent(self):
        for raw in ["Don't", '"Hi"', "...", "A-B", "x'y'"]:
            once = normalize_word(raw)
            assert normalize_word(once) == once


class TestExtractIntervals:
    def test_two_words(self):
        t = Transcript(
            id="t",
            words=(TimedWord("the", 0.00, 0.12), TimedWord("boy", 0.30, 0.55)),
        )
        iv = extract_intervals(t)
        assert iv.durations == pytest.approx((0.12, 0.25))
        assert iv.pauses == pytest.approx((0.18, 0.0))

    def test_single_word_final_pause_convention(self):
        t = Transcript(id="t", words=(TimedWord("a", 0.0, 1.0),))
        iv = extract_intervals(t)
        assert iv.durations == (1.0,)
        assert iv.pauses == (0.0,)

    def test_overlap_clamps_to_zero(self):
        t = Transcript(
            id="t", words=(TimedWord("a", 0.0, 1.00), TimedWord("b", 0.95, 1.40))
        )
        assert extract_intervals(t).pauses[0] == 0.0

    def test_pure_and_deterministic(self):
        t = make_transcript("t", [0.1, 0.5, 0.0])
        assert extract_intervals(t) == extract_intervals(t)

    def test_tiling_identity(self):
        # words tile the span exactly: durations + pauses == last end - first start
        t = make_transcript("t", [0.3, 0.0, 1.2], duration=0.25, first_start=2.0)
        iv = extract_intervals(t)
        span = t.words[-1].end - t.words[0].start
        assert sum(iv.durations) + sum(iv.pauses) == pytest.approx(span)

    def test_mismatched_interval_length_rejected(self):
        with pytest.raises(DataValidationError):
            IntervalSequence(durations=(0.1,), pauses=(0.0, 0.0))


words_st = st.lists(
    st.builds(
        lambda text, start, dur, gap: (text, start, dur, gap),
        st.sampled_from(["the", "boy", "cookie", "jar", "don't"]),
        st.just(0.0),
        st.floats(0.0, 3.0, allow_nan=False),
        st.floats(0.0, 2.0, allow_nan=False),
    ),
    min_size=1,
    max_size=12,
)


@given(words_st, st.sampled_from([None, 0, 1]))
def test_roundtrip_property(tmp_path_factory, spec, label):
    # build a valid transcript by tiling durations and gaps
    t_now = 0.0
    words = []
    for text, _, dur, gap in spec:
        words.append(TimedWord(text, t_now, t_now + dur))
        t_now += dur + gap
    transcript = Transcript(id="prop", words=tuple(words), label=label)

    path = tmp_path_factory.mktemp("rt") / "rt.jsonl"
    write_dataset([transcript], path)
    (parsed,) = parse_dataset(path)
    assert parsed == transcript

    # a second serialize -> parse cycle is also exact
    path2 = path.with_name("rt2.jsonl")
    write_dataset([parsed], path2)
    assert parse_dataset(path2) == [parsed]
    assert path.read_bytes() == path2.read_bytes()


@given(words_st)
def test_interval_sum_bounded_by_span(spec):
    t_now = 0.0
    words = []
    for text, _, dur, gap in spec:
        words.append(TimedWord(text, t_now, t_now + dur))
        t_now += dur + gap
    t = Transcript(id="p", words=tuple(words))
    iv = extract_intervals(t)
    span = t.words[-1].end - t.words[0].start
    assert sum(iv.durations) + sum(iv.pauses) <= span + 1e-9
    assert all(d >= 0 for d in iv.durations)
    assert all(p >= 0 for p in iv.pauses)
    assert iv.pauses[-1] == 0.0


def test_dataset_summary():
    ts = [
        make_transcript("a", [0.1], label=1),
        make_transcript("b", [0.1, 0.2], label=0),
        make_transcript("c", [0.3]),
    ]
    s = dataset_summary(ts)
    assert s["n_transcripts"] == 3
    assert s["n_words"] == 2 + 3 + 2
    assert s["labels"] == {"ad": 1, "control": 1, "unlabeled": 1}
