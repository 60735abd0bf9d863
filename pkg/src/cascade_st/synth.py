"""Fine-tuning data for the two LLM tasks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .backends import NoisyOracleASR, TableMT, corrupt
from .core import JOINER, BackendError, DataError, NBestList, SentenceRecord, Talk
from .docape import ApeWindowState, TokenCounter, build_ape_prompt, chunk_document, count_tokens
from .refine import build_asr_prompt

log = logging.getLogger(__name__)

HALVES = ("A", "B")


@dataclass(frozen=True)
class SftRecord:
    task: str
    prompt: str
    completion: str
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("asr_refine", "doc_ape"):
            raise DataError(f"unknown task {self.task!r}")
        if not self.completion.strip():
            raise DataError("completion must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"task": self.task, "prompt": self.prompt, "completion": self.completion,
                "meta": dict(sorted(self.meta.items()))}


def split_halves(talks: Sequence[Talk]) -> tuple[list[Talk], list[Talk]]:
    """Alternate talks, sorted by id, into halves A and B."""
    if len(talks) < 2:
        raise DataError("need at least two talks to split into halves")
    ordered = sorted(talks, key=lambda t: t.talk_id)
    return ordered[0::2], ordered[1::2]


def make_asr_sft(nbests: Iterable[NBestList], k: int = 5) -> tuple[list[SftRecord], int]:
    """One record per utterance with a reference; returns (records, skipped)."""
    records, skipped = [], 0
    for nb in nbests:
        if nb.ref is None or not nb.ref.strip():
            skipped += 1
            continue
        meta = {"utterance_id": nb.utterance_id}
        if nb.talk_id is not None:
            meta["talk_id"] = nb.talk_id
        records.append(SftRecord("asr_refine", build_asr_prompt(nb, k), nb.ref, meta))
    if skipped:
        log.warning("skipped %d utterances without a reference", skipped)
    return records, skipped


@dataclass(frozen=True)
class CrossFitTalk:
    """A talk whose src/mt were produced by models trained on the other half."""

    talk: Talk
    half: str
    model_half: str


def make_ape_sft(talks: Iterable[Talk | CrossFitTalk], budget: int = 256,
                 counter: TokenCounter = count_tokens) -> list[SftRecord]:
    records = []
    for item in talks:
        talk, extra = (item.talk, {"half": item.half, "model_half": item.model_half}) \
            if isinstance(item, CrossFitTalk) else (item, {})
        for s in talk.sentences:
            missing = [n for n in ("mt", "ref") if getattr(s, n) is None]
            if missing:
                raise DataError(f"talk {talk.talk_id}, sentence {s.index}: missing {', '.join(missing)}")
        for chunk in chunk_document(talk, budget, counter):
            completion = JOINER.join(r.ref for r in chunk.records)
            meta = {"talk_id": talk.talk_id, "chunk_index": chunk.chunk_index,
                    "first_sentence": chunk.first_sentence, "last_sentence": chunk.last_sentence, **extra}
            records.append(SftRecord("doc_ape", build_ape_prompt(chunk, ApeWindowState(talk.talk_id)),
                                     completion, meta))
    return records


def cross_infer(halves: tuple[Sequence[Talk], Sequence[Talk]], asr: Mapping[str, Any],
                mt: Mapping[str, Any]) -> list[CrossFitTalk]:
    """Decode each half with the clients trained on the other half.

    Utterances follow the gold segmentation, which must pair one segment
    with each reference sentence.
    """
    out = []
    for half, talks in zip(HALVES, halves):
        model_half = "B" if half == "A" else "A"
        for talk in talks:
            if talk.audio is None:
                raise DataError(f"talk {talk.talk_id}: no audio reference")
            if len(talk.segments) != len(talk.sentences):
                raise DataError(f"talk {talk.talk_id}: {len(talk.segments)} segments but "
                                f"{len(talk.sentences)} sentences")
            try:
                srcs = [asr[model_half].transcribe(talk.audio, seg.start_s, seg.end_s, 1).texts[0]
                        for seg in talk.segments]
                mts = mt[model_half].translate(srcs)
            except BackendError as exc:
                raise type(exc)(f"talk {talk.talk_id}: {exc}") from exc
            if len(mts) != len(srcs):
                raise DataError(f"talk {talk.talk_id}: MT returned {len(mts)} of {len(srcs)} sentences")
            sents = []
            for gold, src, hyp in zip(talk.sentences, srcs, mts):
                if gold.ref is None:
                    raise DataError(f"talk {talk.talk_id}, sentence {gold.index}: missing ref")
                sents.append(SentenceRecord(gold.index, src if src.strip() else gold.src, hyp, None, gold.ref))
            out.append(CrossFitTalk(talk.with_sentences(sents), half, model_half))
    return sorted(out, key=lambda c: c.talk.talk_id)


def noise_oracles(talks: Iterable[Talk], noise: float, seed: int) -> tuple[dict, dict]:
    """Per-half ASR and MT mocks that corrupt the gold data at ``noise`` rate.

    Stand-ins for models fine-tuned on one half; each half's pair uses its
    own seed, so A- and B-"trained" clients make different errors.
    """
    talks = list(talks)
    asr, mt = {}, {}
    for h, half in enumerate(HALVES):
        half_seed = seed * 2 + h
        gold = {}
        table = {}
        for t in talks:
            for seg, sent in zip(t.segments, t.sentences):
                gold[(t.audio, seg.start_s, seg.end_s)] = sent.src
                noisy_src = corrupt(sent.src, noise, f"{half_seed}/0")
                if sent.ref is not None:
                    table[noisy_src] = corrupt(sent.ref, noise, f"{half_seed}/mt/{t.talk_id}/{sent.index}")
        asr[half] = NoisyOracleASR(gold, noise, half_seed)
        mt[half] = TableMT(table)
    return asr, mt
