"""Word error rate, resegmentation, BLEU and chrF.

BLEU and chrF follow the sacrebleu defaults (13a tokenisation with
exponential smoothing; whitespace-free character 6-grams with beta=2), so
scores are comparable to the numbers usually reported in shared-task evaluations.
"""
from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .core import DataError, Talk

MATCH, SUBSTITUTE, DELETE, INSERT = "match", "substitute", "delete", "insert"


@dataclass(frozen=True)
class EditOp:
    kind: str
    a_pos: int | None  # index into the source sequence (None for insert)
    b_pos: int | None  # index into the target sequence (None for delete)


@dataclass(frozen=True)
class Alignment:
    """Edit script turning sequence ``a`` into sequence ``b``."""

    ops: tuple[EditOp, ...]
    cost: int

    def apply(self, a: Sequence[str], b: Sequence[str]) -> list[str]:
        out = []
        for op in self.ops:
            if op.kind == MATCH:
                out.append(a[op.a_pos])
            elif op.kind in (SUBSTITUTE, INSERT):
                out.append(b[op.b_pos])
        return out

    def counts(self) -> Counter:
        return Counter(op.kind for op in self.ops)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> Alignment:
    """Minimal unit-cost alignment of ``a`` onto ``b``.

    Ops are named as an edit script on ``a``: ``delete`` drops a word of
    ``a``, ``insert`` adds a word of ``b``. In WER terms, with ``a`` the
    hypothesis, a ``delete`` is an inserted hypothesis word and vice versa.
    Ties in the backtrace prefer match > substitute > delete > insert.
    """
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ai, row, prev = a[i - 1], d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ai != b[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    ops = []
    i, j = n, m
    while i or j:
        here = d[i][j]
        if i and j and a[i - 1] == b[j - 1] and d[i - 1][j - 1] == here:
            ops.append(EditOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and j and d[i - 1][j - 1] + 1 == here:
            ops.append(EditOp(SUBSTITUTE, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and d[i - 1][j] + 1 == here:
            ops.append(EditOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return Alignment(tuple(ops), d[n][m])


def _encode(*seqs: Sequence[str]) -> list[np.ndarray]:
    vocab: dict[str, int] = {}
    return [np.fromiter((vocab.setdefault(w, len(vocab)) for w in s), dtype=np.int64, count=len(s))
            for s in seqs]


def _last_row(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row ``len(a)`` of the Levenshtein table: ED(a, b[:j]) for every j."""
    cols = np.arange(len(b) + 1, dtype=np.int64)
    row = cols.copy()
    tmp = np.empty_like(row)
    for i, x in enumerate(a, start=1):
        tmp[0] = i
        np.minimum(row[1:] + 1, row[:-1] + (b != x), out=tmp[1:])
        # horizontal moves: new[j] = min_k<=j tmp[k] + (j - k)
        row = np.minimum.accumulate(tmp - cols) + cols
    return row


def edit_cost(a: Sequence[str], b: Sequence[str]) -> int:
    """Levenshtein distance only, for long sequences.

    Bit-parallel over the columns of ``a`` (one Python int holds a whole
    column of vertical deltas), so each word of ``b`` costs a handful of
    big-integer operations.
    """
    if len(a) > len(b):
        a, b = b, a
    m = len(a)
    if m == 0:
        return len(b)
    peq: dict[str, int] = {}
    for i, w in enumerate(a):
        peq[w] = peq.get(w, 0) | (1 << i)
    full = (1 << m) - 1
    top = 1 << (m - 1)
    vp, vn, score = full, 0, m
    for w in b:
        eq = peq.get(w, 0)
        xv = eq | vn
        xh = (((eq & vp) + vp) ^ vp) | eq
        ph = vn | (~(xh | vp) & full)
        mh = vp & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        # row 0 of the table grows by one per column, hence the carried-in 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        vp = mh | (~(xv | ph) & full)
        vn = ph & xv
    return score


# ---------------------------------------------------------------- WER

_STRAY_APOSTROPHE = re.compile(r"(?<!\w)'|'(?!\w)")


def normalize_words(text: str, lowercase: bool = True, strip_punct: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    if strip_punct:
        text = "".join(" " if unicodedata.category(c).startswith("P") and c != "'" else c for c in text)
        # keep word-internal apostrophes ("don't")
        text = _STRAY_APOSTROPHE.sub(" ", text)
    return text.split()


def wer(hyp: str, ref: str, lowercase: bool = True, strip_punct: bool = True) -> float:
    """Word error rate in percent (may exceed 100)."""
    r = normalize_words(ref, lowercase, strip_punct)
    if not r:
        raise DataError("reference is empty after normalisation")
    h = normalize_words(hyp, lowercase, strip_punct)
    return 100.0 * edit_cost(h, r) / len(r)


def corpus_wer(pairs: Iterable[tuple[str, str]], lowercase: bool = True, strip_punct: bool = True) -> float:
    errors = words = 0
    for hyp, ref in pairs:
        r = normalize_words(ref, lowercase, strip_punct)
        errors += edit_cost(normalize_words(hyp, lowercase, strip_punct), r)
        words += len(r)
    if words == 0:
        raise DataError("reference is empty after normalisation")
    return 100.0 * errors / words


# ---------------------------------------------------------------- resegmentation

def mwer_resegment(hyp_words: Sequence[str], ref_segments: Sequence[Sequence[str]]) -> list[list[str]]:
    """Cut a hypothesis word stream into one piece per reference segment.

    Boundaries minimise the summed per-segment edit distance. That minimum
    equals the edit distance between the stream and the concatenated
    references, so the search runs in O(len(hyp) * len(refs)): a backward
    table at each segment boundary gives the optimal remaining cost, and
    each boundary is then placed at the earliest column that keeps the
    total optimal.
    """
    if not ref_segments:
        raise DataError("need at least one reference segment")
    hyp = list(hyp_words)
    if len(ref_segments) == 1:
        return [hyp]
    n = len(hyp)
    encoded = _encode(hyp, *ref_segments)
    h, refs = encoded[0], encoded[1:]
    concat = np.concatenate(refs) if sum(map(len, refs)) else np.zeros(0, dtype=np.int64)
    bounds = np.cumsum([0] + [len(r) for r in refs])
    total = len(concat)

    # remaining[b][j] = ED(concat[b:], hyp[j:]) for every boundary b
    rev_h = h[::-1]
    wanted = {total - int(b) for b in bounds}
    rows: dict[int, np.ndarray] = {}
    cols = np.arange(n + 1, dtype=np.int64)
    row = cols.copy()
    if 0 in wanted:
        rows[0] = row
    tmp = np.empty_like(row)
    for i, x in enumerate(concat[::-1], start=1):
        tmp[0] = i
        np.minimum(row[1:] + 1, row[:-1] + (rev_h != x), out=tmp[1:])
        row = np.minimum.accumulate(tmp - cols) + cols
        if i in wanted:
            rows[i] = row
    remaining = {int(b): rows[total - int(b)][::-1] for b in bounds}

    pieces = []
    j = 0
    for s, seg in enumerate(refs[:-1]):
        target = remaining[int(bounds[s])][j]
        head = _last_row(seg, h[j:]) if len(seg) else np.arange(n - j + 1)
        tails = remaining[int(bounds[s + 1])][j:]
        cut = j + int(np.flatnonzero(head + tails == target)[0])
        pieces.append(hyp[j:cut])
        j = cut
    pieces.append(hyp[j:])
    return pieces


def segmentation_cost(pieces: Sequence[Sequence[str]], ref_segments: Sequence[Sequence[str]]) -> int:
    return sum(edit_cost(p, r) for p, r in zip(pieces, ref_segments))


# ---------------------------------------------------------------- BLEU

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> str:
    """mteval-v13a tokenisation."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = line.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return " ".join(line.split())


def _ngrams(tokens: Sequence[str], max_order: int) -> Counter:
    out: Counter = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            out[tuple(tokens[i:i + n])] += 1
    return out


@dataclass(frozen=True)
class BleuStats:
    correct: tuple[int, ...]
    total: tuple[int, ...]
    sys_len: int
    ref_len: int


def bleu_stats(hyps: Sequence[str], refs: Sequence[str], max_order: int = 4,
               tokenize: bool = True) -> BleuStats:
    if len(hyps) != len(refs):
        raise DataError(f"BLEU needs equal counts, got {len(hyps)} hypotheses and {len(refs)} references")
    correct, total = [0] * max_order, [0] * max_order
    sys_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h = (tokenize_13a(hyp) if tokenize else hyp).split()
        r = (tokenize_13a(ref) if tokenize else ref).split()
        sys_len += len(h)
        ref_len += len(r)
        h_ng, r_ng = _ngrams(h, max_order), _ngrams(r, max_order)
        for ng, c in h_ng.items():
            correct[len(ng) - 1] += min(c, r_ng.get(ng, 0))
            total[len(ng) - 1] += c
    return BleuStats(tuple(correct), tuple(total), sys_len, ref_len)


def bleu_from_stats(stats: BleuStats, smooth: str = "exp", effective_order: bool = False) -> float:
    """Score from sufficient statistics.

    ``smooth="exp"`` halves the pseudo-count for each successive order with
    no matches; ``smooth="none"`` lets such orders zero the score. An order
    with no hypothesis n-grams at all zeroes the score unless
    ``effective_order`` truncates the geometric mean before it.
    """
    if smooth not in ("exp", "none"):
        raise ValueError(f"unknown smoothing {smooth!r}")
    if stats.sys_len == 0:
        return 0.0
    logs = []
    halving = 1.0
    for correct, total in zip(stats.correct, stats.total):
        if total == 0:
            if effective_order and logs:
                break
            return 0.0
        if correct == 0:
            if smooth == "none":
                return 0.0
            halving *= 2
            logs.append(-math.log(halving * total))
        else:
            logs.append(math.log(correct / total))
    bp = 1.0 if stats.sys_len >= stats.ref_len else math.exp(1 - stats.ref_len / stats.sys_len)
    score = 100.0 * bp * math.exp(sum(logs) / len(logs))
    return min(100.0, score)


def bleu(hyps: Sequence[str], refs: Sequence[str], smooth: str = "exp", effective_order: bool = False,
         tokenize: bool = True) -> float:
    """Corpus BLEU (single reference, n-grams 1-4)."""
    if not refs:
        raise DataError("BLEU needs at least one reference")
    return bleu_from_stats(bleu_stats(hyps, refs, tokenize=tokenize), smooth, effective_order)


# ---------------------------------------------------------------- chrF

def chrf_stats(hyps: Sequence[str], refs: Sequence[str], order: int = 6) -> list[tuple[int, int, int]]:
    if len(hyps) != len(refs):
        raise DataError(f"chrF needs equal counts, got {len(hyps)} hypotheses and {len(refs)} references")
    stats = [[0, 0, 0] for _ in range(order)]
    for hyp, ref in zip(hyps, refs):
        h, r = "".join(hyp.split()), "".join(ref.split())
        for n in range(1, order + 1):
            hc = Counter(h[i:i + n] for i in range(len(h) - n + 1))
            rc = Counter(r[i:i + n] for i in range(len(r) - n + 1))
            st = stats[n - 1]
            # hypothesis n-grams only count where the reference has n-grams of this order
            st[0] += sum(hc.values()) if rc else 0
            st[1] += sum(rc.values())
            st[2] += sum((hc & rc).values())
    return [tuple(s) for s in stats]


def chrf_from_stats(stats: Sequence[tuple[int, int, int]], beta: float = 2.0) -> float:
    # precision and recall are averaged over orders where both sides have n-grams, then combined
    prec = rec = 0.0
    effective = 0
    for n_hyp, n_ref, n_match in stats:
        if n_hyp > 0 and n_ref > 0:
            prec += n_match / n_hyp
            rec += n_match / n_ref
            effective += 1
    if effective == 0:
        return 0.0
    prec /= effective
    rec /= effective
    if prec + rec == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * prec * rec / (b2 * prec + rec)


def chrf2(hyps: Sequence[str], refs: Sequence[str], order: int = 6, beta: float = 2.0) -> float:
    return chrf_from_stats(chrf_stats(hyps, refs, order), beta)


# ---------------------------------------------------------------- report

# Published en-de tst2019 COMET for the cascade before and after adding both
# LLM refinement stages; kept for orientation, not reproducible with mocks.
REFERENCE_CONTEXT = {"tst2019_comet_baseline": 77.41, "tst2019_comet_full_pipeline": 79.63}


@dataclass
class EvalReport:
    wer: float | None
    bleu: float | None
    chrf2: float | None
    comet: float | None = None
    hyp_segments: int = 0
    ref_segments: int = 0
    resegmented: bool = False
    normalization: dict[str, bool] = field(default_factory=dict)
    reference_context: dict[str, float] = field(default_factory=lambda: dict(REFERENCE_CONTEXT))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate(hyp_talks: Sequence[Talk], ref_talks: Sequence[Talk], resegment: bool = False,
             lowercase: bool = True, strip_punct: bool = True, scorer=None) -> EvalReport:
    """Score pipeline output against references.

    WER compares the per-talk source transcripts; BLEU/chrF2 compare the
    final translations (post-edit when present, else MT). With
    ``resegment`` the hypothesis translation of each talk is re-cut to the
    reference sentence boundaries; without it sentence counts must agree.
    """
    hyp_by_id = {t.talk_id: t for t in hyp_talks}
    ref_by_id = {t.talk_id: t for t in ref_talks}
    if set(hyp_by_id) != set(ref_by_id):
        missing = sorted(set(ref_by_id) ^ set(hyp_by_id))
        raise DataError(f"hypothesis and reference talks differ: {', '.join(missing)}")
    if not ref_by_id or not any(t.sentences for t in ref_talks):
        raise DataError("no reference sentences to evaluate against")

    wer_pairs = []
    srcs, hyps, refs = [], [], []
    n_hyp = n_ref = 0
    for tid in sorted(ref_by_id):
        hyp_t, ref_t = hyp_by_id[tid], ref_by_id[tid]
        wer_pairs.append((" ".join(s.src for s in hyp_t.sentences), " ".join(s.src for s in ref_t.sentences)))
        if any(s.ref is None for s in ref_t.sentences):
            raise DataError(f"talk {tid}: reference translation missing")
        t_refs = [s.ref for s in ref_t.sentences]
        t_hyps = [s.hypothesis or "" for s in hyp_t.sentences]
        n_hyp += len(t_hyps)
        n_ref += len(t_refs)
        if resegment:
            pieces = mwer_resegment(" ".join(t_hyps).split(), [r.split() for r in t_refs])
            t_hyps = [" ".join(p) for p in pieces]
        elif len(t_hyps) != len(t_refs):
            raise DataError(f"talk {tid}: {len(t_hyps)} hypothesis sentences vs {len(t_refs)} references "
                            "(pass resegment to realign)")
        srcs.extend(s.src for s in ref_t.sentences)
        hyps.extend(t_hyps)
        refs.extend(t_refs)

    word_error = None
    if any(ref.strip() for _, ref in wer_pairs):
        word_error = corpus_wer(wer_pairs, lowercase, strip_punct)
    comet = scorer.score(srcs, hyps, refs) if scorer is not None else None
    return EvalReport(
        wer=word_error, bleu=bleu(hyps, refs), chrf2=chrf2(hyps, refs), comet=comet,
        hyp_segments=n_hyp, ref_segments=n_ref, resegmented=resegment,
        normalization={"lowercase": lowercase, "strip_punct": strip_punct},
    )
