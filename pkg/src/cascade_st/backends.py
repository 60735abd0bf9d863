"""Inference service clients.

Every model sits behind a small JSON-over-HTTP contract:

=========  =========================================================  =====================================
kind       request                                                    response
=========  =========================================================  =====================================
asr        ``{"audio", "start_s", "end_s", "n_best"}``                ``{"hypotheses": [{"text", "score"}]}``
mt         ``{"sentences": [...]}``                                   ``{"translations": [...]}``
llm        ``{"prompt", "beam", "max_new_tokens"}``                   ``{"text"}``
scorer     ``{"sources", "hypotheses", "references"}``                ``{"score"}``
punct      ``{"text"}``                                               ``{"text"}``
=========  =========================================================  =====================================

The mock classes implement the same methods as the HTTP clients and are
pure functions of their input and seed; :class:`MockServer` exposes any of
them over HTTP for integration tests.
"""
from __future__ import annotations

import bisect
import json
import logging
import random
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import requests

from .core import DataError, NBestList, PipelineConfig, ProtocolError, Talk, TransportError

log = logging.getLogger(__name__)

KINDS = ("asr", "mt", "llm", "scorer", "punct")


@dataclass(frozen=True)
class BackendProfile:
    kind: str
    endpoint: str
    timeout_s: float = 60.0
    max_retries: int = 3
    parallelism: int = 4
    beam: int = 1
    max_new_tokens: int = 512
    backoff_s: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown backend kind {self.kind!r}")
        if self.timeout_s <= 0 or self.max_retries < 0 or self.beam < 1 or self.parallelism < 1:
            raise DataError(f"invalid {self.kind} backend profile: {self}")


class ASRClient(Protocol):
    def transcribe(self, audio: str, start_s: float, end_s: float, n_best: int) -> NBestList: ...


class MTClient(Protocol):
    def translate(self, sentences: Sequence[str]) -> list[str]: ...


class LLMClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class ScorerClient(Protocol):
    def score(self, sources: Sequence[str], hypotheses: Sequence[str], references: Sequence[str]) -> float: ...


class PunctuatorClient(Protocol):
    def punctuate(self, text: str) -> str: ...


# ---------------------------------------------------------------- HTTP clients

_RETRY_STATUS = {429, 500, 502, 503, 504}


class HttpClient:
    """POSTs JSON to one endpoint with bounded parallelism and retries."""

    def __init__(self, profile: BackendProfile, sleep: Callable[[float], None] = time.sleep):
        self.profile = profile
        self._slots = threading.BoundedSemaphore(profile.parallelism)
        self._sleep = sleep

    def post(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        p = self.profile
        last: Exception | None = None
        for attempt in range(p.max_retries + 1):
            if attempt:
                self._sleep(p.backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = requests.post(p.endpoint, json=payload, timeout=p.timeout_s)
            except requests.RequestException as exc:
                last = exc
                log.debug("%s request failed (attempt %d): %s", p.kind, attempt + 1, exc)
                continue
            if resp.status_code in _RETRY_STATUS:
                last = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"{p.kind} backend {p.endpoint}: HTTP {resp.status_code}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{p.kind} backend returned invalid JSON") from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"{p.kind} backend returned {type(body).__name__}, expected an object")
            return body
        raise TransportError(f"{p.kind} backend {p.endpoint}: giving up after "
                             f"{p.max_retries + 1} attempts: {last}")


def _field(body: Mapping[str, Any], name: str, kind: type, who: str):
    value = body.get(name)
    if not isinstance(value, kind):
        raise ProtocolError(f"{who} response: field {name!r} missing or not {kind.__name__}")
    return value


class HttpASRClient(HttpClient):
    def transcribe(self, audio: str, start_s: float, end_s: float, n_best: int) -> NBestList:
        if n_best > self.profile.beam:
            raise DataError(f"n_best={n_best} exceeds ASR beam size {self.profile.beam}")
        body = self.post({"audio": audio, "start_s": start_s, "end_s": end_s, "n_best": n_best})
        hyps = _field(body, "hypotheses", list, "asr")
        try:
            pairs = tuple((h["text"], float(h["score"])) for h in hyps)
            if not all(isinstance(t, str) for t, _ in pairs):
                raise TypeError("text must be a string")
            return NBestList(f"{audio}@{start_s:.3f}-{end_s:.3f}", pairs)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"asr response: malformed hypotheses: {exc}") from exc


class HttpMTClient(HttpClient):
    def translate(self, sentences: Sequence[str]) -> list[str]:
        if not sentences:
            raise DataError("nothing to translate")
        out = _field(self.post({"sentences": list(sentences)}), "translations", list, "mt")
        if len(out) != len(sentences) or not all(isinstance(t, str) for t in out):
            raise ProtocolError(f"mt response: expected {len(sentences)} strings, got {len(out)} items")
        return out


class HttpLLMClient(HttpClient):
    def complete(self, prompt: str) -> str:
        if not prompt:
            raise DataError("empty prompt")
        payload = {"prompt": prompt, "beam": self.profile.beam, "max_new_tokens": self.profile.max_new_tokens}
        return _field(self.post(payload), "text", str, "llm")


class HttpScorerClient(HttpClient):
    def score(self, sources, hypotheses, references) -> float:
        body = self.post({"sources": list(sources), "hypotheses": list(hypotheses),
                          "references": list(references)})
        value = body.get("score")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError("scorer response: field 'score' missing or not a number")
        return float(value)


class HttpPunctuatorClient(HttpClient):
    def punctuate(self, text: str) -> str:
        return _field(self.post({"text": text}), "text", str, "punct")


# ---------------------------------------------------------------- noise

def corrupt(text: str, rate: float, seed: int | str) -> str:
    """Replace each whitespace token with probability ``rate``; deterministic in (text, seed)."""
    if rate <= 0:
        return text
    rng = random.Random(f"{seed}|{text}")
    out = []
    for tok in text.split():
        if rng.random() < rate:
            tok = f"zz{rng.randrange(10 ** 6)}"
        out.append(tok)
    return " ".join(out)


# ---------------------------------------------------------------- mock ASR

class TableASR:
    """Answers from a table keyed on (audio, start_s, end_s)."""

    def __init__(self, table: Mapping[tuple[str, float, float], Sequence[tuple[str, float]] | str],
                 beam: int = 5):
        self.table = dict(table)
        self.beam = beam

    def transcribe(self, audio: str, start_s: float, end_s: float, n_best: int) -> NBestList:
        if n_best > self.beam:
            raise DataError(f"n_best={n_best} exceeds ASR beam size {self.beam}")
        key = (audio, float(start_s), float(end_s))
        if key not in self.table:
            raise TransportError(f"mock asr: no entry for {key}")
        entry = self.table[key]
        hyps = [(entry, 0.0)] if isinstance(entry, str) else list(entry)
        return NBestList(f"{audio}@{start_s:.3f}-{end_s:.3f}", tuple(hyps[:n_best]))


class TimelineASR:
    """Returns the words whose timestamps fall inside the requested span.

    ``words`` maps each audio path to a list of (time_s, word). An optional
    per-span corruption rate makes the output noisy, deterministically in
    (seed, span).
    """

    def __init__(self, words: Mapping[str, Sequence[tuple[float, str]]], noise: float = 0.0,
                 seed: int = 0, beam: int = 5):
        self.words = {k: sorted(v) for k, v in words.items()}
        self._times = {k: [t for t, _ in v] for k, v in self.words.items()}
        self.noise, self.seed, self.beam = noise, seed, beam

    def transcribe(self, audio, start_s, end_s, n_best):
        if n_best > self.beam:
            raise DataError(f"n_best={n_best} exceeds ASR beam size {self.beam}")
        times = self._times[audio]
        lo, hi = bisect.bisect_left(times, start_s), bisect.bisect_left(times, end_s)
        toks = [w for _, w in self.words[audio][lo:hi]]
        rng = random.Random(f"{self.seed}|{audio}|{start_s}|{end_s}")
        hyps = []
        for k in range(n_best):
            out = [f"zz{rng.randrange(10 ** 6)}" if rng.random() < self.noise else w for w in toks]
            hyps.append((" ".join(out), -float(k)))
        return NBestList(f"{audio}@{start_s:.3f}-{end_s:.3f}", tuple(hyps))


class NoisyOracleASR:
    """Gold segment text, corrupted per hypothesis rank; rank 0 uses ``seed``."""

    def __init__(self, gold: Mapping[tuple[str, float, float], str], noise: float = 0.0,
                 seed: int = 0, beam: int = 5):
        self.gold, self.noise, self.seed, self.beam = dict(gold), noise, seed, beam

    def transcribe(self, audio, start_s, end_s, n_best):
        if n_best > self.beam:
            raise DataError(f"n_best={n_best} exceeds ASR beam size {self.beam}")
        key = (audio, float(start_s), float(end_s))
        if key not in self.gold:
            raise TransportError(f"oracle asr: unknown span {key}")
        text = self.gold[key]
        hyps = tuple((corrupt(text, self.noise, f"{self.seed}/{k}"), -float(k)) for k in range(n_best))
        return NBestList(f"{audio}@{start_s:.3f}-{end_s:.3f}", hyps)


# ---------------------------------------------------------------- mock MT

class IdentityMT:
    def translate(self, sentences):
        if not sentences:
            raise DataError("nothing to translate")
        return list(sentences)


class DictionaryMT:
    """Word-by-word lookup; unknown words pass through."""

    def __init__(self, lexicon: Mapping[str, str]):
        self.lexicon = dict(lexicon)

    def translate(self, sentences):
        if not sentences:
            raise DataError("nothing to translate")
        return [" ".join(self.lexicon.get(w, w) for w in s.split()) for s in sentences]


class TableMT:
    """Sentence lookup table with optional corruption of the looked-up output."""

    def __init__(self, table: Mapping[str, str], noise: float = 0.0, seed: int = 0, strict: bool = False):
        self.table, self.noise, self.seed, self.strict = dict(table), noise, seed, strict

    def translate(self, sentences):
        if not sentences:
            raise DataError("nothing to translate")
        out = []
        for s in sentences:
            if s not in self.table and self.strict:
                raise TransportError(f"table mt: no translation for {s!r}")
            out.append(corrupt(self.table.get(s, s), self.noise, self.seed))
        return out


# ---------------------------------------------------------------- mock LLM

ASR_HEADER = "Punctuate and Post-edit the hypothesis\nbased on the predictions:\n"
APE_TARGET_HEADER = "German Translations:\n"
APE_ANSWER_HEADER = "Post-Edited German Translations:\n"


def _between(text: str, start: str, end: str) -> str:
    i = text.index(start) + len(start)
    j = text.index(end, i)
    return text[i:j]


class EchoLLM:
    """Identity post-editor: the rank-1 hypothesis or the prompt's MT section."""

    def complete(self, prompt: str) -> str:
        if prompt.startswith(ASR_HEADER):
            return _between(prompt, ASR_HEADER, "\n").split(" <SS> ")[0]
        if APE_TARGET_HEADER in prompt:
            return _between(prompt, APE_TARGET_HEADER, "\n")
        raise TransportError("echo llm: unrecognised prompt")


class MapLLM(EchoLLM):
    """Like :class:`EchoLLM` but rewrites each echoed sentence through a table."""

    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    def complete(self, prompt: str) -> str:
        echoed = super().complete(prompt)
        return " <SS> ".join(self.table.get(s, s) for s in echoed.split(" <SS> "))


class ScriptedLLM:
    def __init__(self, script: Mapping[str, str], default: str | None = None):
        self.script, self.default = dict(script), default

    def complete(self, prompt: str) -> str:
        if prompt in self.script:
            return self.script[prompt]
        if self.default is None:
            raise TransportError("scripted llm: prompt not in script")
        return self.default


class FunctionLLM:
    def __init__(self, fn: Callable[[str], str]):
        self.fn = fn

    def complete(self, prompt: str) -> str:
        return self.fn(prompt)


class RepetitionLLM:
    """Degenerate decoder: loops a fixed 4-token phrase."""

    def __init__(self, phrase: str = "and so on then", times: int = 10):
        self.phrase, self.times = phrase, times

    def complete(self, prompt: str) -> str:
        return " ".join([self.phrase] * self.times)


# ---------------------------------------------------------------- other mocks

class FixedScorer:
    def __init__(self, value: float = 0.0):
        self.value = value

    def score(self, sources, hypotheses, references) -> float:
        if not len(sources) == len(hypotheses) == len(references):
            raise ProtocolError("scorer: length mismatch")
        return self.value


class TablePunctuator:
    def __init__(self, table: Mapping[str, str] | None = None):
        self.table = dict(table or {})

    def punctuate(self, text: str) -> str:
        return self.table.get(text, text)


# ---------------------------------------------------------------- mock server

def _asr_app(client) -> Callable[[dict], dict]:
    def app(req):
        nb = client.transcribe(req["audio"], req["start_s"], req["end_s"], req["n_best"])
        return {"hypotheses": [{"text": t, "score": s} for t, s in nb.hypotheses]}
    return app


def _mt_app(client):
    return lambda req: {"translations": client.translate(req["sentences"])}


def _llm_app(client):
    return lambda req: {"text": client.complete(req["prompt"])}


def _scorer_app(client):
    return lambda req: {"score": client.score(req["sources"], req["hypotheses"], req["references"])}


def _punct_app(client):
    return lambda req: {"text": client.punctuate(req["text"])}


APPS = {"asr": _asr_app, "mt": _mt_app, "llm": _llm_app, "scorer": _scorer_app, "punct": _punct_app}


class _Handler(BaseHTTPRequestHandler):
    server: "MockServer"

    def log_message(self, fmt, *args):  # keep test output quiet
        log.debug("mock server: " + fmt, *args)

    def _send(self, status: int, body: Any):
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        srv = self.server
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        with srv.lock:
            srv.requests.append(json.loads(raw or b"{}"))
            n = len(srv.requests)
            srv.in_flight += 1
            srv.max_in_flight = max(srv.max_in_flight, srv.in_flight)
        try:
            if srv.delay_s:
                time.sleep(srv.delay_s)
            if n <= srv.fail_first:
                self._send(srv.fail_status, {"error": "injected failure"})
                return
            try:
                body = srv.app(srv.requests[n - 1])
            except Exception as exc:  # surfaced to the client as a server error
                self._send(500, {"error": str(exc)})
                return
            self._send(200, body)
        finally:
            with srv.lock:
                srv.in_flight -= 1


class MockServer(ThreadingHTTPServer):
    """In-process HTTP front for a mock client, with failure injection.

    ``fail_first`` answers the first N requests with ``fail_status``;
    ``delay_s`` holds each request open so concurrency can be observed.
    """

    daemon_threads = True

    def __init__(self, kind: str, client, port: int = 0, host: str = "127.0.0.1",
                 fail_first: int = 0, fail_status: int = 503, delay_s: float = 0.0,
                 app: Callable[[dict], dict] | None = None):
        super().__init__((host, port), _Handler)
        self.kind = kind
        self.app = app or APPS[kind](client)
        self.fail_first, self.fail_status, self.delay_s = fail_first, fail_status, delay_s
        self.lock = threading.Lock()
        self.requests: list[dict] = []
        self.in_flight = self.max_in_flight = 0
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# ---------------------------------------------------------------- wiring

@dataclass
class Backends:
    asr: Any = None
    mt: Any = None
    llm: Any = None
    scorer: Any = None
    punct: Any = None


def gold_spans(talks: Iterable[Talk]) -> dict[tuple[str, float, float], str]:
    """Segment text keyed the way ASR requests arrive."""
    out = {}
    for t in talks:
        for seg in t.segments:
            if t.audio is not None and seg.text is not None:
                out[(t.audio, seg.start_s, seg.end_s)] = seg.text
    return out


def reference_table(talks: Iterable[Talk], noise: float = 0.0, seed: int = 0) -> dict[str, str]:
    """Source sentence -> reference translation over a corpus."""
    return {s.src: corrupt(s.ref, noise, seed) for t in talks for s in t.sentences if s.ref is not None}


def _mock(kind: str, name: str, talks: Sequence[Talk], cfg: PipelineConfig):
    if kind == "asr" and name == "oracle":
        return NoisyOracleASR(gold_spans(talks), beam=cfg.asr_beam)
    if kind == "mt" and name == "oracle":
        return TableMT(reference_table(talks))
    if kind == "mt" and name == "identity":
        return IdentityMT()
    if kind == "llm" and name in ("echo", "oracle"):
        if name == "oracle":
            refs = {s.mt: s.ref for t in talks for s in t.sentences if s.mt is not None and s.ref is not None}
            return MapLLM(refs)
        return EchoLLM()
    if kind == "llm" and name == "repeat":
        return RepetitionLLM()
    if kind == "scorer" and name.startswith("fixed"):
        return FixedScorer(float(name.partition("=")[2] or 0.0))
    if kind == "punct" and name == "identity":
        return TablePunctuator()
    raise DataError(f"unknown mock backend {kind}:{name}")


_HTTP = {"asr": HttpASRClient, "mt": HttpMTClient, "llm": HttpLLMClient,
         "scorer": HttpScorerClient, "punct": HttpPunctuatorClient}


def make_client(kind: str, endpoint: str | None, cfg: PipelineConfig, talks: Sequence[Talk] = ()):
    """Build a client from an endpoint string.

    ``http(s)://...`` gives an HTTP client; ``mock:<name>`` one of the
    built-in mocks (``mock:oracle`` answers from the corpus' gold data).
    """
    if endpoint is None:
        return None
    if endpoint.startswith("mock:"):
        return _mock(kind, endpoint[5:], talks, cfg)
    beam = {"asr": cfg.asr_beam, "mt": cfg.mt_beam, "llm": cfg.llm_beam}.get(kind, 1)
    profile = BackendProfile(kind, endpoint, cfg.timeout_s, cfg.max_retries, cfg.parallelism,
                             beam, cfg.llm_max_new_tokens, cfg.backoff_s)
    return _HTTP[kind](profile)


def make_backends(cfg: PipelineConfig, talks: Sequence[Talk] = ()) -> Backends:
    return Backends(**{k: make_client(k, getattr(cfg, f"{k}_endpoint"), cfg, talks) for k in KINDS})
