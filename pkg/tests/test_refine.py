from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from cascade_st.backends import EchoLLM, FunctionLLM, MapLLM, RepetitionLLM, ScriptedLLM
from cascade_st.core import DataError, NBestList, TransportError, validate_config
from cascade_st.refine import (ASR_ANSWER_MARKER, batch_refine, build_asr_prompt, degeneracy, has_repetition,
                               refine_transcript, strip_echo)

GOLDEN = Path(__file__).parent / "golden"


def nb(*texts, uid="u"):
    return NBestList(uid, tuple((t, -float(i)) for i, t in enumerate(texts)))


def test_prompt_snapshot():
    assert build_asr_prompt(nb("Hyp 1", "Hyp 2", "Hyp 3"), 5) == (GOLDEN / "asr_prompt.txt").read_text()


def test_prompt_keeps_rank_order_and_truncates():
    prompt = build_asr_prompt(nb("c", "a", "b", "d", "e", "f"), 5)
    assert "\nc <SS> a <SS> b <SS> d <SS> e\n" in prompt and "f" not in prompt.split("\n")[2]


def test_prompt_single_candidate_has_no_delimiter():
    assert "<SS>" not in build_asr_prompt(nb("only one"), 5)


def test_prompt_rejects_empty():
    with pytest.raises(DataError):
        build_asr_prompt(NBestList("u", ()), 5)


def test_strip_echo():
    assert strip_echo(f"prompt\n{ASR_ANSWER_MARKER}\n  answer here ", ASR_ANSWER_MARKER) == "answer here"
    assert strip_echo("answer", ASR_ANSWER_MARKER) == "answer"


@pytest.mark.parametrize("text,expected", [
    ("", "empty"),
    ("   ", "empty"),
    ("a b c d a b c d a b c d", "repetition"),
    ("one two three four five six seven", "length"),
    ("one two three", None),
])
def test_degeneracy_order(text, expected):
    assert degeneracy(text, 4, validate_config()) == expected


def test_repetition_needs_consecutive_windows():
    assert not has_repetition("a b c d x a b c d y a b c d".split())
    assert has_repetition("x a b c d a b c d a b c d y".split())


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=11))
def test_short_outputs_never_repeat(tokens):
    assert not has_repetition(tokens)  # 3 windows of 4 need 12 tokens


def test_refine_uses_llm_output():
    res = refine_transcript(nb("helo world", "hello world"), MapLLM({"helo world": "Hello world."}),
                            validate_config())
    assert res.refined == "Hello world." and not res.used_fallback


def test_refine_falls_back_on_repetition():
    res = refine_transcript(nb("a short hypothesis"), RepetitionLLM(), validate_config())
    assert res.used_fallback and res.reason == "repetition" and res.refined == "a short hypothesis"


def test_refine_falls_back_on_length():
    res = refine_transcript(nb("one two"), FunctionLLM(lambda p: "w " * 4), validate_config())
    assert (res.used_fallback, res.reason) == (True, "length")


def test_echo_llm_returns_rank_one():
    res = refine_transcript(nb("first", "second"), EchoLLM(), validate_config())
    assert res.refined == "first"


def test_batch_records_failures():
    def flaky(prompt):
        if "bad" in prompt:
            raise TransportError("boom")
        return "fine"

    batch = batch_refine([nb("ok", uid="1"), nb("bad", uid="2"), nb("ok2", uid="3")],
                         FunctionLLM(flaky), validate_config(parallelism=2))
    assert batch.results[1] is None and "2" in batch.failures
    assert batch.summary == {"refined": 2, "fallback": 0, "failed": 1}
    assert batch.status == "warning"


def test_batch_all_failed():
    batch = batch_refine([nb("x")], ScriptedLLM({}), validate_config())
    assert batch.status == "failed"
