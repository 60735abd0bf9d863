"""Chunked long-form decoding: overlapping windows, stitched by shared token runs."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

from .core import BackendError, DataError, PipelineConfig, Talk

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChunkPlan:
    spans: tuple[tuple[float, float], ...]

    def __iter__(self):
        return iter(self.spans)

    def __len__(self) -> int:
        return len(self.spans)


def plan_chunks(duration_s: float, chunk_s: float = 30.0, overlap_s: float = 10.0) -> ChunkPlan:
    """Fixed-width windows advancing by ``chunk_s - overlap_s``.

    The last window is clamped to end at ``duration_s``; a window is only
    started if the previous one ended before the end of the audio.
    """
    if not duration_s > 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    if not 0 < overlap_s < chunk_s:
        raise DataError(f"need 0 < overlap_s < chunk_s, got overlap {overlap_s}, chunk {chunk_s}")
    stride = chunk_s - overlap_s
    spans = []
    i = 0
    while True:
        # multiply rather than accumulate so long files do not drift
        start = i * stride
        end = start + chunk_s
        if end >= duration_s:
            spans.append((start, duration_s))
            break
        spans.append((start, end))
        i += 1
    return ChunkPlan(tuple(spans))


class Overlap(NamedTuple):
    left_start: int
    right_start: int
    length: int


def longest_common_run(left: Sequence[str], right: Sequence[str]) -> Overlap:
    """Longest common contiguous run of two token windows.

    Among runs of equal length the one ending latest in ``left`` wins, then
    the one starting earliest in ``right``. ``length == 0`` when the windows
    share no token.
    """
    best = Overlap(0, 0, 0)
    best_end = -1
    prev = [0] * (len(right) + 1)
    for i in range(1, len(left) + 1):
        cur = [0] * (len(right) + 1)
        li = left[i - 1]
        for j in range(1, len(right) + 1):
            if li == right[j - 1]:
                n = cur[j] = prev[j - 1] + 1
                if n > best.length or (n == best.length and i > best_end):
                    best, best_end = Overlap(i - n, j - n, n), i
        prev = cur
    return best


def _find_overlap(left_tokens: Sequence[str], right_tokens: Sequence[str], window: int) -> tuple[int, Overlap]:
    lw = [t.casefold() for t in left_tokens[-window:]]
    rw = [t.casefold() for t in right_tokens[:window]]
    return len(left_tokens) - len(lw), longest_common_run(lw, rw)


def stitch_pair(left_tokens: Sequence[str], right_tokens: Sequence[str],
                window: int = 20) -> tuple[int, int] | None:
    """Cut points joining two chunk transcripts.

    Only the last ``window`` tokens of ``left`` and the first ``window`` of
    ``right`` are searched, case-insensitively. The merged sequence is
    ``left[:cut_left] + right[cut_right:]``: the shared run is kept once,
    in its left-hand surface form. Returns None when the windows share no
    token.
    """
    if not left_tokens or not right_tokens:
        return None
    offset, ov = _find_overlap(left_tokens, right_tokens, window)
    if ov.length == 0:
        return None
    return offset + ov.left_start + ov.length, ov.right_start + ov.length


def midpoint_cuts(n_left: int, n_right: int, window: int = 20) -> tuple[int, int]:
    lw, rw = min(window, n_left), min(window, n_right)
    return n_left - lw + lw // 2, rw // 2


@dataclass
class StitchTrace:
    """Debug record for one joint between consecutive chunks."""

    joint: int
    left_window: list[str]
    right_window: list[str]
    match: list[str]
    cut_left: int
    cut_right: int
    fallback: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(joint=self.joint, left_window=self.left_window, right_window=self.right_window,
                    match=self.match, cut_left=self.cut_left, cut_right=self.cut_right,
                    fallback=self.fallback)


def stitch_texts(texts: Sequence[str], window: int = 20) -> tuple[list[str], list[StitchTrace]]:
    """Left-to-right fold of chunk transcripts into one token list."""
    merged: list[str] = []
    traces = []
    for k, text in enumerate(texts):
        tokens = text.split()
        if k == 0 or not merged:
            merged = tokens
            continue
        if not tokens:
            continue
        offset, ov = _find_overlap(merged, tokens, window)
        fallback = ov.length == 0
        if fallback:
            cut_left, cut_right = midpoint_cuts(len(merged), len(tokens), window)
            match = []
        else:
            cut_left = offset + ov.left_start + ov.length
            cut_right = ov.right_start + ov.length
            match = merged[cut_left - ov.length:cut_left]
        traces.append(StitchTrace(k - 1, merged[-window:], tokens[:window], match,
                                  cut_left, cut_right, fallback))
        merged = merged[:cut_left] + tokens[cut_right:]
    return merged, traces


@dataclass
class LongFormResult:
    text: str
    chunk_texts: list[str]
    spans: list[tuple[float, float]]
    traces: list[StitchTrace] = field(default_factory=list)


def transcribe_longform(talk: Talk, asr, cfg: PipelineConfig) -> LongFormResult:
    """Transcribe a whole recording chunk by chunk and stitch the outputs."""
    if talk.audio is None or talk.duration_s is None:
        raise DataError(f"talk {talk.talk_id}: long-form decoding needs audio and duration_s")
    plan = plan_chunks(talk.duration_s, cfg.chunk_s, cfg.overlap_s)

    def run(span):
        start, end = span
        try:
            nbest = asr.transcribe(talk.audio, start, end, 1)
        except BackendError as exc:
            raise type(exc)(f"talk {talk.talk_id}, chunk ({start:.3f}, {end:.3f}): {exc}") from exc
        return nbest.hypotheses[0][0]

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        texts = list(pool.map(run, plan.spans))
    tokens, traces = stitch_texts(texts, cfg.stitch_window)
    fallbacks = sum(t.fallback for t in traces)
    if fallbacks:
        log.warning("talk %s: %d of %d joints had no shared tokens, cut at window midpoints",
                    talk.talk_id, fallbacks, len(traces))
    return LongFormResult(" ".join(tokens), texts, list(plan.spans), traces)
