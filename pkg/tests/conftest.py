import math

import pytest

from pauselm.ingest import TimedWord, Transcript
from pauselm.synth import GroupTimingSpec, SynthSpec


def make_transcript(id_, gaps, label=None, duration=0.2, first_start=0.0):
    """Transcript whose inter-word pauses are exactly `gaps` (len(gaps)+1 words)."""
    words = []
    t = first_start
    for i in range(len(gaps) + 1):
        words.append(TimedWord(text=f"w{i}", start=t, end=t + duration))
        t += duration + (gaps[i] if i < len(gaps) else 0.0)
    return Transcript(id=id_, words=tuple(words), label=label)


def small_synth_spec(**overrides):
    base = dict(
        n_per_group=6,
        words_min=5,
        words_max=9,
        control=GroupTimingSpec(math.log(0.25), 0.3, math.log(0.15), 0.4),
        ad=GroupTimingSpec(math.log(0.25), 0.3, math.log(0.45), 0.4),
        seed=11,
    )
    base.update(overrides)
    return SynthSpec(**base)


@pytest.fixture
def tiny_corpus():
    from pauselm.synth import generate

    return generate(small_synth_spec())
