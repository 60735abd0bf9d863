"""Domain types, configuration and the JSONL corpus model shared by all stages."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

DELIMITER = "<SS>"
JOINER = f" {DELIMITER} "


class PipelineError(Exception):
    """Base class for every error raised by the toolkit."""


class DataError(PipelineError, ValueError):
    """Malformed input data or configuration."""


class CorpusError(DataError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 field: str | None = None):
        self.path, self.line, self.field = path, line, field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


class BackendError(PipelineError):
    """An inference service could not produce a usable answer."""


class TransportError(BackendError):
    pass


class ProtocolError(BackendError):
    pass


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    text: str | None = None

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise DataError(f"segment needs 0 <= start_s < end_s, got ({self.start_s}, {self.end_s})")


@dataclass(frozen=True)
class SentenceRecord:
    index: int
    src: str
    mt: str | None = None
    ape: str | None = None
    ref: str | None = None

    def __post_init__(self):
        if not self.src.strip():
            raise DataError(f"sentence {self.index}: empty src")
        for name in ("src", "mt", "ape", "ref"):
            value = getattr(self, name)
            if value is not None and DELIMITER in value:
                raise DataError(f"sentence {self.index}: {name} contains the reserved delimiter {DELIMITER}")

    @property
    def hypothesis(self) -> str | None:
        """Final target-side text: the post-edit when present, else the MT output."""
        return self.ape if self.ape is not None else self.mt


@dataclass(frozen=True)
class Talk:
    talk_id: str
    audio: str | None = None
    duration_s: float | None = None
    src_lang: str = "en"
    tgt_lang: str = "de"
    segments: tuple[Segment, ...] = ()
    sentences: tuple[SentenceRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.talk_id:
            raise DataError("talk_id must be non-empty")
        if self.duration_s is not None and not self.duration_s > 0:
            raise DataError(f"talk {self.talk_id}: duration_s must be positive")
        prev = -math.inf
        for seg in self.segments:
            if seg.start_s < prev:
                raise DataError(f"talk {self.talk_id}: segments not ordered by start time")
            prev = seg.start_s
            if self.duration_s is not None and seg.end_s > self.duration_s:
                raise DataError(f"talk {self.talk_id}: segment ends after talk duration")
        for i, s in enumerate(self.sentences):
            if s.index != i:
                raise DataError(f"talk {self.talk_id}: sentence indices must be 0..n-1, found {s.index} at {i}")

    def with_sentences(self, sentences: Iterable[SentenceRecord]) -> "Talk":
        return dataclasses.replace(self, sentences=tuple(sentences))


@dataclass(frozen=True)
class NBestList:
    utterance_id: str
    hypotheses: tuple[tuple[str, float], ...]
    talk_id: str | None = None
    start_s: float | None = None
    end_s: float | None = None
    ref: str | None = None

    def __post_init__(self):
        hyps = tuple((str(t), float(s)) for t, s in self.hypotheses)
        object.__setattr__(self, "hypotheses", hyps)
        if not hyps:
            raise DataError(f"{self.utterance_id}: N-best list is empty")
        scores = [s for _, s in hyps]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise DataError(f"{self.utterance_id}: N-best scores must be non-increasing")

    @property
    def texts(self) -> list[str]:
        return [t for t, _ in self.hypotheses]

    def top(self, k: int) -> list[str]:
        return self.texts[:k]


@dataclass(frozen=True)
class DocChunk:
    talk_id: str
    chunk_index: int
    first_sentence: int
    last_sentence: int
    records: tuple[SentenceRecord, ...]
    oversized: bool = False

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class PipelineConfig:
    nbest_k: int = 5
    token_budget: int = 256
    chunk_s: float = 30.0
    overlap_s: float = 10.0
    stitch_window: int = 20
    payload_sentences: int = 2
    asr_beam: int = 5
    mt_beam: int = 5
    llm_beam: int = 3
    llm_max_new_tokens: int = 512
    degeneracy_factor: float = 1.5
    repeat_ngram: int = 4
    repeat_count: int = 3
    wer_lowercase: bool = True
    wer_strip_punct: bool = True
    long_form: bool = False
    llm_refine: bool = True
    long_form_talks: tuple[str, ...] = ()
    no_llm_talks: tuple[str, ...] = ()
    parallelism: int = 4
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    seed: int = 0
    asr_endpoint: str | None = None
    mt_endpoint: str | None = None
    llm_endpoint: str | None = None
    scorer_endpoint: str | None = None
    punct_endpoint: str | None = None
    rules_path: str | None = None

    def uses_long_form(self, talk_id: str) -> bool:
        return self.long_form or talk_id in self.long_form_talks

    def uses_llm(self, talk_id: str) -> bool:
        return self.llm_refine and talk_id not in self.no_llm_talks

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for key in ("long_form_talks", "no_llm_talks"):
            d[key] = list(d[key])
        return d


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise DataError(f"config {name}: expected a list of strings")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise DataError(f"config {name}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise DataError(f"config {name}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"config {name}: expected a number")
        return float(value)
    if value is not None and not isinstance(value, str):
        raise DataError(f"config {name}: expected a string")
    return value


def validate_config(cfg: PipelineConfig | Mapping[str, Any] | None = None, **overrides: Any) -> PipelineConfig:
    """Fill defaults, coerce types and check every config invariant."""
    if cfg is None:
        raw: dict[str, Any] = {}
    elif isinstance(cfg, PipelineConfig):
        raw = cfg.to_dict()
    else:
        raw = dict(cfg)
    raw.update(overrides)
    unknown = sorted(set(raw) - set(_CONFIG_FIELDS))
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(unknown)}")
    defaults = PipelineConfig()
    values = {k: _coerce(k, v, getattr(defaults, k)) for k, v in raw.items()}
    out = dataclasses.replace(defaults, **values)

    checks = [
        (out.nbest_k >= 1, "nbest_k must be >= 1"),
        (out.token_budget >= 1, "token_budget must be >= 1"),
        (0 < out.overlap_s < out.chunk_s, "need 0 < overlap_s < chunk_s"),
        (out.stitch_window >= 1, "stitch_window must be >= 1"),
        (out.payload_sentences >= 0, "payload_sentences must be >= 0"),
        (min(out.asr_beam, out.mt_beam, out.llm_beam) >= 1, "beam sizes must be >= 1"),
        (out.nbest_k <= out.asr_beam, "nbest_k cannot exceed asr_beam"),
        (out.degeneracy_factor > 1, "degeneracy_factor must be > 1"),
        (out.repeat_ngram >= 1 and out.repeat_count >= 2, "repeat_ngram >= 1 and repeat_count >= 2 required"),
        (out.parallelism >= 1, "parallelism must be >= 1"),
        (out.timeout_s > 0, "timeout_s must be positive"),
        (out.max_retries >= 0, "max_retries must be >= 0"),
        (out.llm_max_new_tokens >= 1, "llm_max_new_tokens must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise DataError(f"invalid config: {msg}")
    return out


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return validate_config()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a flat JSON object")
    return validate_config(raw)


# ---------------------------------------------------------------- JSONL helpers

def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line number, object) pairs, skipping blank lines."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read file: {exc}", str(path)) from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON: {exc.msg}", str(path), lineno) from exc
        if not isinstance(obj, dict):
            raise CorpusError("record must be a JSON object", str(path), lineno)
        yield lineno, obj


class _Fields:
    """Typed field access that reports file/line/field on failure."""

    def __init__(self, obj: Mapping[str, Any], path: str, line: int):
        self.obj, self.path, self.line = obj, path, line

    def fail(self, name: str, msg: str):
        raise CorpusError(msg, self.path, self.line, name)

    def text(self, name: str, optional: bool = False) -> str | None:
        v = self.obj.get(name)
        if v is None:
            if optional:
                return None
            self.fail(name, "missing required field")
        if not isinstance(v, str):
            self.fail(name, "expected a string")
        return v

    def number(self, name: str, optional: bool = False) -> float | None:
        v = self.obj.get(name)
        if v is None:
            if optional:
                return None
            self.fail(name, "missing required field")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(name, "expected a finite number")
        return float(v)

    def integer(self, name: str) -> int:
        v = self.obj.get(name)
        if v is None:
            self.fail(name, "missing required field")
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(name, "expected an integer")
        return v


def _record_kind(obj: Mapping[str, Any]) -> str:
    if "index" in obj:
        return "sentence"
    if "start_s" in obj or "end_s" in obj:
        return "segment"
    return "talk"


def _talk_id(f: _Fields) -> str:
    talk_id = f.text("talk_id")
    if not talk_id.strip():
        f.fail("talk_id", "must be non-empty")
    return talk_id


def _parse_sentence(f: _Fields) -> tuple[str, SentenceRecord]:
    talk_id = _talk_id(f)
    index = f.integer("index")
    if index < 0:
        f.fail("index", "must be non-negative")
    values = {}
    for name in ("src", "mt", "ape", "ref"):
        v = f.text(name, optional=name != "src")
        if v is not None and DELIMITER in v:
            f.fail(name, f"contains the reserved delimiter {DELIMITER}")
        values[name] = v
    if not values["src"].strip():
        f.fail("src", "must be non-empty")
    return talk_id, SentenceRecord(index=index, **values)


def _parse_segment(f: _Fields) -> tuple[str, Segment]:
    talk_id = _talk_id(f)
    start, end = f.number("start_s"), f.number("end_s")
    if not 0 <= start < end:
        f.fail("end_s", "need 0 <= start_s < end_s")
    return talk_id, Segment(start, end, f.text("text", optional=True))


def _parse_talk(f: _Fields) -> dict[str, Any]:
    talk_id = _talk_id(f)
    duration = f.number("duration_s", optional=True)
    if duration is not None and duration <= 0:
        f.fail("duration_s", "must be positive")
    return dict(talk_id=talk_id, audio=f.text("audio", optional=True), duration_s=duration,
                src_lang=f.text("src_lang", optional=True) or "en",
                tgt_lang=f.text("tgt_lang", optional=True) or "de")


CORPUS_FILES = ("talks.jsonl", "segments.jsonl", "sentences.jsonl")


def _corpus_sources(path: Path) -> list[Path]:
    if path.is_dir():
        files = [path / name for name in CORPUS_FILES if (path / name).exists()]
        if not files:
            raise CorpusError(f"no corpus files ({', '.join(CORPUS_FILES)}) found", str(path))
        return files
    if not path.exists():
        raise CorpusError("no such file or directory", str(path))
    return [path]


def load_corpus(path: str | Path) -> list[Talk]:
    """Load talks from a corpus directory or a single mixed-record JSONL file.

    Records are told apart by their keys: sentences carry ``index``, segments
    carry ``start_s``/``end_s``, anything else is a talk header.  Talks that
    only appear through segment or sentence records get a bare header.
    Returned talks are sorted by ``talk_id``.
    """
    headers: dict[str, dict[str, Any]] = {}
    header_loc: dict[str, tuple[str, int]] = {}
    segments: dict[str, list[tuple[Segment, str, int]]] = {}
    sentences: dict[str, list[tuple[SentenceRecord, str, int]]] = {}
    for src in _corpus_sources(Path(path)):
        for lineno, obj in read_jsonl(src):
            f = _Fields(obj, str(src), lineno)
            kind = _record_kind(obj)
            if kind == "sentence":
                tid, sent = _parse_sentence(f)
                sentences.setdefault(tid, []).append((sent, str(src), lineno))
            elif kind == "segment":
                tid, seg = _parse_segment(f)
                segments.setdefault(tid, []).append((seg, str(src), lineno))
            else:
                hdr = _parse_talk(f)
                tid = hdr["talk_id"]
                if tid in headers:
                    f.fail("talk_id", f"duplicate talk {tid!r}")
                headers[tid] = hdr
                header_loc[tid] = (str(src), lineno)

    talks = []
    for tid in sorted(set(headers) | set(segments) | set(sentences)):
        hdr = headers.get(tid, {"talk_id": tid})
        segs = sorted(segments.get(tid, []), key=lambda t: (t[0].start_s, t[0].end_s))
        duration = hdr.get("duration_s")
        for seg, file, line in segs:
            if duration is not None and seg.end_s > duration:
                raise CorpusError("segment ends after talk duration", file, line, "end_s")
        sents = sorted(sentences.get(tid, []), key=lambda t: t[0].index)
        for expected, (sent, file, line) in enumerate(sents):
            if sent.index != expected:
                raise CorpusError(f"talk {tid!r}: sentence indices must be 0..n-1 (expected {expected})",
                                  file, line, "index")
        talks.append(Talk(segments=tuple(s for s, _, _ in segs),
                          sentences=tuple(s for s, _, _ in sents), **hdr))
    return talks


def talk_header(talk: Talk) -> dict[str, Any]:
    rec: dict[str, Any] = {"talk_id": talk.talk_id}
    if talk.audio is not None:
        rec["audio"] = talk.audio
    if talk.duration_s is not None:
        rec["duration_s"] = talk.duration_s
    rec["src_lang"] = talk.src_lang
    rec["tgt_lang"] = talk.tgt_lang
    return rec


def segment_record(talk_id: str, seg: Segment) -> dict[str, Any]:
    rec: dict[str, Any] = {"talk_id": talk_id, "start_s": seg.start_s, "end_s": seg.end_s}
    if seg.text is not None:
        rec["text"] = seg.text
    return rec


def sentence_record(talk_id: str, sent: SentenceRecord) -> dict[str, Any]:
    rec: dict[str, Any] = {"talk_id": talk_id, "index": sent.index, "src": sent.src}
    for name in ("mt", "ape", "ref"):
        v = getattr(sent, name)
        if v is not None:
            rec[name] = v
    return rec


def corpus_records(talks: Iterable[Talk]) -> Iterator[dict[str, Any]]:
    """Canonical record order: per talk (sorted), header, segments, sentences."""
    for talk in sorted(talks, key=lambda t: t.talk_id):
        yield talk_header(talk)
        for seg in talk.segments:
            yield segment_record(talk.talk_id, seg)
        for sent in talk.sentences:
            yield sentence_record(talk.talk_id, sent)


def save_corpus(talks: Sequence[Talk], path: str | Path) -> Path:
    """Write talks as one JSONL file, or as a corpus directory if ``path`` has no suffix."""
    path = Path(path)
    if path.suffix:
        return write_jsonl(path, corpus_records(talks))
    path.mkdir(parents=True, exist_ok=True)
    ordered = sorted(talks, key=lambda t: t.talk_id)
    write_jsonl(path / "talks.jsonl", (talk_header(t) for t in ordered))
    write_jsonl(path / "segments.jsonl",
                (segment_record(t.talk_id, s) for t in ordered for s in t.segments))
    write_jsonl(path / "sentences.jsonl",
                (sentence_record(t.talk_id, s) for t in ordered for s in t.sentences))
    return path


# ---------------------------------------------------------------- N-best files

def nbest_record(nb: NBestList) -> dict[str, Any]:
    rec: dict[str, Any] = {"utterance_id": nb.utterance_id}
    if nb.talk_id is not None:
        rec["talk_id"] = nb.talk_id
    if nb.start_s is not None:
        rec["start_s"] = nb.start_s
        rec["end_s"] = nb.end_s
    rec["hypotheses"] = [{"text": t, "score": s} for t, s in nb.hypotheses]
    if nb.ref is not None:
        rec["ref"] = nb.ref
    return rec


def parse_nbest(obj: Mapping[str, Any], path: str = "<memory>", line: int = 0) -> NBestList:
    f = _Fields(obj, path, line)
    uid = f.text("utterance_id")
    hyps = obj.get("hypotheses")
    if not isinstance(hyps, list) or not hyps:
        f.fail("hypotheses", "expected a non-empty list")
    pairs = []
    for i, h in enumerate(hyps):
        hf = _Fields(h if isinstance(h, dict) else {}, path, line)
        if not isinstance(h, dict):
            f.fail(f"hypotheses[{i}]", "expected an object")
        text = hf.text("text")
        score = hf.number("score")
        pairs.append((text, score))
    scores = [s for _, s in pairs]
    if any(b > a for a, b in zip(scores, scores[1:])):
        f.fail("hypotheses", "scores must be non-increasing in list order")
    ref = f.text("ref", optional=True)
    start = f.number("start_s", optional=True)
    end = f.number("end_s", optional=True)
    return NBestList(uid, tuple(pairs), talk_id=f.text("talk_id", optional=True),
                     start_s=start, end_s=end, ref=ref)


def load_nbest(path: str | Path) -> list[NBestList]:
    return [parse_nbest(obj, str(path), line) for line, obj in read_jsonl(path)]


def save_nbest(path: str | Path, nbests: Iterable[NBestList]) -> Path:
    return write_jsonl(path, (nbest_record(nb) for nb in nbests))
