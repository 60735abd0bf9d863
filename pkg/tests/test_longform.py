import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from cascade_st.backends import TableASR, TimelineASR
from cascade_st.core import BackendError, DataError, Talk, validate_config
from cascade_st.longform import (longest_common_run, midpoint_cuts, plan_chunks, stitch_pair, stitch_texts,
                                 transcribe_longform)
from oracles import brute_common_run, brute_stitch, timeline, token_stream


def test_plan_examples():
    assert list(plan_chunks(60, 30, 10)) == [(0, 30), (20, 50), (40, 60)]
    assert list(plan_chunks(61, 30, 10)) == [(0, 30), (20, 50), (40, 61)]
    assert list(plan_chunks(25, 30, 10)) == [(0, 25)]
    assert list(plan_chunks(30, 30, 10)) == [(0, 30)]


@pytest.mark.parametrize("args", [(0, 30, 10), (-1, 30, 10), (60, 30, 30), (60, 30, 0), (60, 30, 40)])
def test_plan_rejects(args):
    with pytest.raises(DataError):
        plan_chunks(*args)


def test_plan_invariants_many():
    rng = random.Random(0)
    for _ in range(10_000):
        chunk = rng.uniform(1, 60)
        overlap = rng.uniform(0.01, chunk - 0.05)
        duration = rng.uniform(0.1, 1000)
        spans = list(plan_chunks(duration, chunk, overlap))
        assert spans[0][0] == 0 and spans[-1][1] == duration
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            assert s1 < e0  # consecutive windows overlap, so coverage has no gaps
            assert math.isclose(e0 - s0, chunk, abs_tol=1e-9)
            assert math.isclose(s1 - s0, chunk - overlap, rel_tol=1e-9, abs_tol=1e-9)
        assert all(0 <= s < e <= duration for s, e in spans)
        assert spans[-1][1] - spans[-1][0] <= chunk + 1e-9


@settings(max_examples=300)
@given(st.lists(st.sampled_from("abc"), max_size=12), st.lists(st.sampled_from("abc"), max_size=12))
def test_common_run_matches_brute_force(left, right):
    assert tuple(longest_common_run(left, right)) == brute_common_run(left, right)


@settings(max_examples=300)
@given(st.lists(st.sampled_from(["x", "X", "y", "z"]), max_size=30),
       st.lists(st.sampled_from(["x", "y", "Y", "z"]), max_size=30))
def test_stitch_pair_matches_brute_force(left, right):
    assert stitch_pair(left, right) == brute_stitch(left, right)


def test_stitch_keeps_left_surface_form():
    merged, traces = stitch_texts(["The Cat sat", "the cat sat down"])
    assert merged == ["The", "Cat", "sat", "down"]
    assert traces[0].match == ["The", "Cat", "sat"] and not traces[0].fallback


def test_stitch_without_shared_tokens_cuts_midpoints():
    merged, traces = stitch_texts(["a b c d", "w x y z"])
    assert traces[0].fallback
    assert merged == ["a", "b", "y", "z"]
    assert midpoint_cuts(4, 4) == (2, 2)


def test_stitch_skips_empty_chunks():
    merged, traces = stitch_texts(["", "a b", "", "b c"])
    assert merged == ["a", "b", "c"] and len(traces) == 1


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(20, 200))
def test_truthful_chunks_reconstruct(seed, n):
    tokens = token_stream(n, seed)
    asr = TimelineASR({"a.wav": timeline(tokens)})
    duration = n / 2
    texts = [asr.transcribe("a.wav", s, e, 1).texts[0] for s, e in plan_chunks(duration, 6, 2)]
    merged, _ = stitch_texts(texts, window=20)
    assert merged == tokens


def _talk(n_tokens, seed=0):
    tokens = token_stream(n_tokens, seed)
    return tokens, Talk("t", audio="a.wav", duration_s=n_tokens / 2), TimelineASR({"a.wav": timeline(tokens)})


def test_transcribe_longform_exact():
    tokens, talk, asr = _talk(400)
    res = transcribe_longform(talk, asr, validate_config(parallelism=3))
    assert res.text.split() == tokens
    assert len(res.chunk_texts) == len(res.spans) == len(res.traces) + 1


def test_transcribe_longform_needs_duration():
    with pytest.raises(DataError):
        transcribe_longform(Talk("t", audio="a.wav"), None, validate_config())


def test_chunk_failure_names_the_span():
    talk = Talk("t", audio="a.wav", duration_s=50)
    with pytest.raises(BackendError, match=r"chunk \(20\.000, 50\.000\)"):
        transcribe_longform(talk, TableASR({("a.wav", 0.0, 30.0): "x"}), validate_config())
