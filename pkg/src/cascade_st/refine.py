"""N-best transcript refinement with an instruction-tuned LLM."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .core import JOINER, BackendError, DataError, NBestList, PipelineConfig

log = logging.getLogger(__name__)

ASR_INSTRUCTION = "Punctuate and Post-edit the hypothesis\nbased on the predictions:\n"
ASR_ANSWER_MARKER = "Post-edited Hypothesis:"


def build_asr_prompt(nbest: NBestList, k: int = 5) -> str:
    """Prompt listing the top ``k`` candidates in their original rank order."""
    if k < 1:
        raise DataError("k must be >= 1")
    hyps = nbest.top(k)
    if not hyps:
        raise DataError(f"{nbest.utterance_id}: empty N-best list")
    return f"{ASR_INSTRUCTION}{JOINER.join(hyps)}\n{ASR_ANSWER_MARKER}\n"


def strip_echo(output: str, marker: str) -> str:
    """Drop everything up to and including the last ``marker``."""
    i = output.rfind(marker)
    if i >= 0:
        output = output[i + len(marker):]
    return output.strip()


def has_repetition(tokens: Sequence[str], ngram: int = 4, count: int = 3) -> bool:
    """True if some ``ngram``-token window occurs ``count`` times back to back."""
    span = ngram * count
    for i in range(len(tokens) - span + 1):
        window = tokens[i:i + ngram]
        if all(tokens[i + r * ngram:i + (r + 1) * ngram] == window for r in range(1, count)):
            return True
    return False


def degeneracy(output: str, reference_len: int, cfg: PipelineConfig) -> str | None:
    """Reason the output looks degenerate, or None.

    ``reference_len`` is the token count the output is expected to be near
    (the longest candidate for ASR refinement, the chunk's MT for APE).
    """
    tokens = output.split()
    if not tokens:
        return "empty"
    if has_repetition(tokens, cfg.repeat_ngram, cfg.repeat_count):
        return "repetition"
    if len(tokens) > cfg.degeneracy_factor * reference_len:
        return "length"
    return None


@dataclass(frozen=True)
class RefinementResult:
    utterance_id: str
    refined: str
    used_fallback: bool = False
    reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def refine_transcript(nbest: NBestList, llm, cfg: PipelineConfig) -> RefinementResult:
    """Ask the LLM for a corrected transcript, falling back to rank 1 on degenerate output.

    Transport errors propagate; the guard firing is not an error.
    """
    prompt = build_asr_prompt(nbest, cfg.nbest_k)
    raw = llm.complete(prompt)
    text = strip_echo(raw, ASR_ANSWER_MARKER)
    longest = max(len(h.split()) for h in nbest.top(cfg.nbest_k))
    reason = degeneracy(text, longest, cfg)
    if reason is not None:
        log.info("%s: refinement fell back to rank-1 hypothesis (%s)", nbest.utterance_id, reason)
        return RefinementResult(nbest.utterance_id, nbest.texts[0], True, reason)
    return RefinementResult(nbest.utterance_id, text)


@dataclass
class BatchRefinement:
    results: list[RefinementResult | None]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def summary(self) -> dict[str, int]:
        done = [r for r in self.results if r is not None]
        fallback = sum(r.used_fallback for r in done)
        return {"refined": len(done) - fallback, "fallback": fallback, "failed": len(self.failures)}

    @property
    def status(self) -> str:
        if not self.failures:
            return "ok"
        return "failed" if len(self.failures) == len(self.results) else "warning"


def batch_refine(nbests: Sequence[NBestList], llm, cfg: PipelineConfig) -> BatchRefinement:
    """Refine every utterance; a failing utterance is recorded and skipped (result None)."""
    def one(nb: NBestList):
        try:
            return refine_transcript(nb, llm, cfg), None
        except BackendError as exc:
            log.warning("%s: refinement failed: %s", nb.utterance_id, exc)
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        outcomes = list(pool.map(one, nbests))
    batch = BatchRefinement([r for r, _ in outcomes])
    for nb, (_, err) in zip(nbests, outcomes):
        if err is not None:
            batch.failures[nb.utterance_id] = err
    return batch
