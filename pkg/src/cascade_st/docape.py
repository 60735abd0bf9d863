"""Document-level post-editing of sentence-level translations.

A talk is packed into source-side token budgets, each chunk is rendered
into the three-section prompt (transcript, translations, post-edit) and
decoded in order. The last post-edited sentences of a chunk are carried
into the next prompt as a payload: they appear at the head of every
section and are pre-filled in the answer, so the model continues after
committed context instead of decoding it again.
"""
from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from .core import DELIMITER, JOINER, BackendError, DataError, DocChunk, PipelineConfig, SentenceRecord, Talk
from .refine import degeneracy, strip_echo

log = logging.getLogger(__name__)

TokenCounter = Callable[[str], int]

SRC_HEADER = "Noisy English Transcript:\n"
MT_HEADER = "German Translations:\n"
ANSWER_MARKER = "Post-Edited German Translations:"

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]")


def count_tokens(text: str) -> int:
    """Words and individual punctuation marks."""
    return len(_WORD_OR_PUNCT.findall(text))


def chunk_document(talk: Talk, budget: int = 256, counter: TokenCounter = count_tokens) -> list[DocChunk]:
    """Greedy packing of consecutive sentences under a source-side token budget.

    A sentence that alone exceeds the budget becomes its own chunk, marked
    ``oversized``.
    """
    if budget < 1:
        raise DataError("budget must be >= 1")
    for s in talk.sentences:
        if s.mt is None:
            raise DataError(f"talk {talk.talk_id}, sentence {s.index}: missing mt")
    chunks: list[DocChunk] = []
    current: list[SentenceRecord] = []
    used = 0

    def flush():
        nonlocal current, used
        if current:
            chunks.append(DocChunk(talk.talk_id, len(chunks), current[0].index, current[-1].index,
                                   tuple(current), oversized=used > budget))
        current, used = [], 0

    for s in talk.sentences:
        n = counter(s.src)
        if current and used + n > budget:
            flush()
        current.append(s)
        used += n
        if used > budget:
            flush()
    flush()
    return chunks


@dataclass(frozen=True)
class ApeWindowState:
    talk_id: str
    next_chunk: int = 0
    payload: tuple[tuple[str, str], ...] = ()


def build_ape_prompt(chunk: DocChunk, state: ApeWindowState | None = None) -> str:
    payload = state.payload if state is not None else ()
    srcs = [p[0] for p in payload] + [r.src for r in chunk.records]
    mts = [p[1] for p in payload] + [r.mt for r in chunk.records]
    prefill = "".join(p[1] + JOINER for p in payload)
    return (f"{SRC_HEADER}{JOINER.join(srcs)}\n"
            f"{MT_HEADER}{JOINER.join(mts)}\n"
            f"{ANSWER_MARKER}\n{prefill}")


@dataclass(frozen=True)
class Mismatch:
    """Output whose sentence count does not line up with the input."""

    expected: int
    found: int
    raw: str

    def __bool__(self) -> bool:
        return False


def parse_ape_output(raw: str, expected: int, payload: Sequence[str] = ()) -> list[str] | Mismatch:
    """Split a completion on the delimiter, dropping an echoed prompt or payload."""
    if expected < 1:
        raise ValueError("expected must be >= 1")
    text = strip_echo(raw, ANSWER_MARKER)
    parts = [p.strip() for p in text.split(DELIMITER)]
    if payload and len(parts) >= len(payload) and \
            [" ".join(p.split()) for p in parts[:len(payload)]] == [" ".join(p.split()) for p in payload]:
        parts = parts[len(payload):]
    if len(parts) != expected or not all(parts):
        return Mismatch(expected, len(parts), raw)
    return parts


@dataclass
class ApeReport:
    chunks: int = 0
    postedited: int = 0
    fallbacks: int = 0
    mismatches: int = 0

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def add(self, other: "ApeReport") -> None:
        for k in ("chunks", "postedited", "fallbacks", "mismatches"):
            setattr(self, k, getattr(self, k) + getattr(other, k))


def postedit_document(talk: Talk, llm, cfg: PipelineConfig,
                      counter: TokenCounter = count_tokens) -> tuple[Talk, ApeReport]:
    """Fill ``ape`` for every sentence; chunks whose output is unusable keep their MT."""
    chunks = chunk_document(talk, cfg.token_budget, counter)
    state = ApeWindowState(talk.talk_id)
    report = ApeReport(chunks=len(chunks))
    out: list[SentenceRecord] = []
    for chunk in chunks:
        prompt = build_ape_prompt(chunk, state)
        try:
            raw = llm.complete(prompt)
        except BackendError as exc:
            raise type(exc)(f"talk {talk.talk_id}, chunk {chunk.chunk_index}: {exc}") from exc
        mts = [r.mt for r in chunk.records]
        parsed = parse_ape_output(raw, len(chunk), [p[1] for p in state.payload])
        reason = None
        if isinstance(parsed, Mismatch):
            report.mismatches += 1
            reason = f"expected {parsed.expected} sentences, got {parsed.found}"
        else:
            reason = degeneracy(" ".join(parsed), count_words(mts), cfg)
        if reason is not None:
            log.warning("talk %s chunk %d: keeping MT (%s)", talk.talk_id, chunk.chunk_index, reason)
            report.fallbacks += 1
            edited = mts
        else:
            report.postedited += 1
            edited = parsed
        pairs = [(r.src, e) for r, e in zip(chunk.records, edited)]
        out.extend(SentenceRecord(r.index, r.src, r.mt, e, r.ref) for r, e in zip(chunk.records, edited))
        carried = (list(state.payload) + pairs)[-cfg.payload_sentences:] if cfg.payload_sentences else []
        state = ApeWindowState(talk.talk_id, chunk.chunk_index + 1, tuple(carried))
    return talk.with_sentences(out), report


def count_words(texts: Sequence[str]) -> int:
    return sum(len(t.split()) for t in texts)
