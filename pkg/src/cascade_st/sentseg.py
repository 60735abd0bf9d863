"""Punctuation restoration hook and rule-based sentence splitting."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .core import DataError

DEFAULT_ABBREVIATIONS = frozenset({
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "St.", "Jr.", "Sr.", "e.g.", "i.e.", "etc.", "vs.",
    "No.", "U.S.", "U.K.", "Inc.", "Ltd.", "Co.", "approx.", "cf.", "Fig.", "Nr.", "z.B.", "bzw.", "usw.",
})

_TOKEN = re.compile(r"\S+")
_CLOSERS = "\"')]}»”’"
_OPENERS = "\"'([{«“‘"


@dataclass(frozen=True)
class SegmentationRules:
    terminators: frozenset[str] = frozenset(".!?")
    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
    min_sentence_tokens: int = 1

    def __post_init__(self):
        if not self.terminators:
            raise DataError("at least one terminator is required")
        bad = sorted(a for a in self.abbreviations if not a or a[-1] not in self.terminators)
        if bad:
            raise DataError(f"abbreviations must end with a terminator: {', '.join(bad)}")
        if self.min_sentence_tokens < 1:
            raise DataError("min_sentence_tokens must be >= 1")

    def extended(self, abbreviations) -> "SegmentationRules":
        return SegmentationRules(self.terminators, self.abbreviations | frozenset(abbreviations),
                                 self.min_sentence_tokens)


def load_rules(path: str | Path | None, base: SegmentationRules | None = None) -> SegmentationRules:
    """Extend the default rules with a file of abbreviations, one per line ('#' starts a comment)."""
    base = base or SegmentationRules()
    if path is None:
        return base
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read rules: {exc}") from exc
    extra = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    return base.extended(extra)


def restore_punctuation(text: str, punctuator=None) -> str:
    if not text.strip():
        raise DataError("cannot punctuate empty text")
    if punctuator is None:
        return text
    return punctuator.punctuate(text)


def _ends_sentence(token: str, rules: SegmentationRules) -> bool:
    core = token.rstrip(_CLOSERS)
    if not core or core[-1] not in rules.terminators:
        return False
    return core.lstrip(_OPENERS) not in rules.abbreviations


def _starts_sentence(token: str) -> bool:
    core = token.lstrip(_OPENERS)
    return bool(core) and (core[0].isupper() or core[0].isdigit())


def split_sentences(text: str, rules: SegmentationRules | None = None) -> list[str]:
    """Split after a terminator that is followed by an upper-case or numeric token.

    Tokens that are protected abbreviations never end a sentence. Sentences
    are slices of the input, so whitespace inside a sentence is kept.
    """
    rules = rules or SegmentationRules()
    tokens = list(_TOKEN.finditer(text))
    if not tokens:
        return []
    groups: list[list[re.Match]] = [[]]
    for tok, nxt in zip(tokens, tokens[1:] + [None]):
        groups[-1].append(tok)
        if nxt is not None and _ends_sentence(tok.group(), rules) and _starts_sentence(nxt.group()):
            groups.append([])

    if rules.min_sentence_tokens > 1:
        merged: list[list[re.Match]] = []
        for g in groups:
            if merged and len(merged[-1]) < rules.min_sentence_tokens:
                merged[-1].extend(g)
            else:
                merged.append(g)
        if len(merged) > 1 and len(merged[-1]) < rules.min_sentence_tokens:
            merged[-2].extend(merged.pop())
        groups = merged
    return [text[g[0].start():g[-1].end()] for g in groups]
