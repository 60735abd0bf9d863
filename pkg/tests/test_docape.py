import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from cascade_st.backends import EchoLLM, FunctionLLM, MapLLM, RepetitionLLM
from cascade_st.core import DataError, DocChunk, SentenceRecord, Talk, TransportError, validate_config
from cascade_st.docape import (ANSWER_MARKER, ApeWindowState, Mismatch, build_ape_prompt, chunk_document,
                               count_tokens, parse_ape_output, postedit_document)
from conftest import make_talk

GOLDEN = Path(__file__).parent / "golden"


def words(text):
    return len(text.split())


def talk_of_lengths(lengths, mt=True):
    sents = [SentenceRecord(i, " ".join(["w"] * n), "m" if mt else None) for i, n in enumerate(lengths)]
    return Talk("t", sentences=tuple(sents))


def chunk_of(pairs, index=0):
    recs = tuple(SentenceRecord(i, s, m) for i, (s, m) in enumerate(pairs))
    return DocChunk("t", index, 0, len(recs) - 1, recs)


@pytest.mark.parametrize("lengths,expected,oversized", [
    ([100, 100, 100], [[0, 1], [2]], [False, False]),
    ([300], [[0]], [True]),
    ([256], [[0]], [False]),
    ([10, 300, 10], [[0], [1], [2]], [False, True, False]),
])
def test_chunk_examples(lengths, expected, oversized):
    chunks = chunk_document(talk_of_lengths(lengths), 256, words)
    assert [[r.index for r in c.records] for c in chunks] == expected
    assert [c.oversized for c in chunks] == oversized


def test_chunk_needs_mt():
    with pytest.raises(DataError):
        chunk_document(talk_of_lengths([3], mt=False))


def test_chunk_partition_and_budget_randomized():
    rng = random.Random(1)
    for _ in range(1000):
        lengths = [rng.randint(1, 120) for _ in range(rng.randint(1, 30))]
        budget = rng.randint(1, 256)
        chunks = chunk_document(talk_of_lengths(lengths), budget, words)
        assert [r.index for c in chunks for r in c.records] == list(range(len(lengths)))
        for c in chunks:
            used = sum(lengths[r.index] for r in c.records)
            assert used <= budget or (c.oversized and len(c) == 1)
        for a, b in zip(chunks, chunks[1:]):  # greedy: the next sentence did not fit
            assert sum(lengths[r.index] for r in a.records) + lengths[b.first_sentence] > budget


def test_count_tokens():
    assert count_tokens("Hello, world!") == 4


def test_prompt_snapshot_empty_payload():
    chunk = chunk_of([("ASR Hyp 1", "MT Hyp 1"), ("ASR Hyp 2", "MT Hyp 2")])
    assert build_ape_prompt(chunk, ApeWindowState("t")) == (GOLDEN / "ape_prompt.txt").read_text()


def test_prompt_snapshot_with_payload():
    chunk = chunk_of([("ASR Hyp 1", "MT Hyp 1"), ("ASR Hyp 2", "MT Hyp 2")], index=1)
    state = ApeWindowState("t", 1, (("ASR Hyp 0", "PE 0"),))
    prompt = build_ape_prompt(chunk, state)
    assert prompt == (GOLDEN / "ape_prompt_payload.txt").read_text()
    # a completion continuing after the prefill parses back to the chunk's sentences
    assert parse_ape_output(prompt + "A <SS> B", 2, ["PE 0"]) == ["A", "B"]


def test_single_sentence_prompt_has_no_delimiter():
    assert "<SS>" not in build_ape_prompt(chunk_of([("a", "b")]))


@pytest.mark.parametrize("raw,expected,payload,out", [
    ("A <SS> B <SS> C", 3, (), ["A", "B", "C"]),
    ("P <SS> A <SS> B", 2, ("P",), ["A", "B"]),
    ("A <SS> B", 2, ("P",), ["A", "B"]),
    (f"prompt\n{ANSWER_MARKER}\nA <SS> B", 2, (), ["A", "B"]),
])
def test_parse_examples(raw, expected, payload, out):
    assert parse_ape_output(raw, expected, payload) == out


@pytest.mark.parametrize("raw", ["A <SS> B", "", "A <SS>  <SS> C", "A B C"])
def test_parse_mismatch(raw):
    res = parse_ape_output(raw, 3)
    assert isinstance(res, Mismatch) and not res and res.raw == raw


sent_st = st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="<>"),
                  min_size=1, max_size=30).filter(lambda s: s.strip())


@settings(max_examples=200)
@given(st.lists(sent_st, min_size=1, max_size=6), st.lists(sent_st, max_size=2))
def test_parse_inverts_prompt(sentences, payload):
    chunk = chunk_of([(f"src {i}", f"mt {i}") for i in range(len(sentences))])
    state = ApeWindowState("t", 1, tuple(("s", p) for p in payload))
    completion = build_ape_prompt(chunk, state) + " <SS> ".join(sentences)
    assert parse_ape_output(completion, len(sentences), payload) == [s.strip() for s in sentences]


def test_identity_llm_keeps_mt():
    talk = make_talk("t", 12, with_mt=True)
    out, report = postedit_document(talk, EchoLLM(), validate_config(token_budget=30))
    assert [s.ape for s in out.sentences] == [s.mt for s in talk.sentences]
    assert report.fallbacks == 0 and report.postedited == report.chunks > 1


def test_oracle_llm_gives_references():
    talk = make_talk("t", 12, with_mt=True)
    llm = MapLLM({s.mt: s.ref for s in talk.sentences})
    out, _ = postedit_document(talk, llm, validate_config(token_budget=30))
    assert [s.ape for s in out.sentences] == [s.ref for s in talk.sentences]


def test_fallback_on_repetition():
    talk = make_talk("t", 3, with_mt=True)
    out, report = postedit_document(talk, RepetitionLLM(), validate_config())
    assert [s.ape for s in out.sentences] == [s.mt for s in talk.sentences]
    assert report.fallbacks == 1 and report.mismatches == 1


def test_payload_is_last_emitted_pairs():
    talk = make_talk("t", 15, with_mt=True)
    prompts = []

    def llm(prompt):
        prompts.append(prompt)
        prefill = prompt.split(ANSWER_MARKER + "\n")[1]
        n = prompt.split("\n")[3].count("<SS>") + 1 - prefill.count("<SS>")
        if len(prompts) % 2:  # alternate good output (echoing the prefill) and garbage
            return prefill + " <SS> ".join(f"pe{len(prompts)}x{i} more words" for i in range(n))
        return "junk"

    cfg = validate_config(token_budget=25)
    out, report = postedit_document(talk, FunctionLLM(llm), cfg)
    emitted = [s.ape for s in out.sentences]
    chunks = chunk_document(talk, 25)
    for k in range(1, len(chunks)):
        done = emitted[:chunks[k].first_sentence]
        prefill = prompts[k].split(ANSWER_MARKER + "\n")[1]
        assert prefill == "".join(e + " <SS> " for e in done[-cfg.payload_sentences:])
    assert report.postedited == (report.chunks + 1) // 2 and report.fallbacks == report.chunks // 2


def test_payload_disabled():
    talk = make_talk("t", 10, with_mt=True)
    prompts = []
    postedit_document(talk, FunctionLLM(lambda p: prompts.append(p) or "x"),
                      validate_config(token_budget=20, payload_sentences=0))
    assert all(p.endswith(ANSWER_MARKER + "\n") for p in prompts)


def test_transport_error_names_chunk():
    def fail(prompt):
        raise TransportError("down")

    with pytest.raises(TransportError, match="chunk 0"):
        postedit_document(make_talk("t", 3, with_mt=True), FunctionLLM(fail), validate_config())
