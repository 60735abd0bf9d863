"""File-to-file pipeline stages and the end-to-end runner.

Each stage reads and writes JSONL, so running the stage commands one after
another produces exactly the files of a monolithic run.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Any

from .backends import Backends, make_backends
from .core import (DELIMITER, DataError, NBestList, PipelineConfig, SentenceRecord, Talk, load_corpus,
                   load_nbest, read_jsonl, save_nbest, sentence_record, write_jsonl)
from .docape import ApeReport, postedit_document
from .longform import transcribe_longform
from .metrics import evaluate
from .refine import RefinementResult, batch_refine
from .sentseg import load_rules, restore_punctuation, split_sentences

log = logging.getLogger(__name__)

STAGE_FILES = {
    "transcribe": "asr.jsonl",
    "refine": "refined.jsonl",
    "segment": "sentences.jsonl",
    "translate": "translated.jsonl",
    "doc-ape": "final.jsonl",
    "eval": "report.json",
}


def _require(client, kind: str):
    if client is None:
        raise DataError(f"no {kind} backend configured (set {kind}_endpoint)")
    return client


# ---------------------------------------------------------------- stages

def transcribe_stage(talks: list[Talk], out_path: Path, cfg: PipelineConfig, asr,
                     trace_path: Path | None = None) -> Path:
    """Segment-wise N-best decoding, or stitched long-form decoding where routed."""
    _require(asr, "asr")
    nbests: list[NBestList] = []
    traces: list[dict] = []
    for talk in talks:
        if cfg.uses_long_form(talk.talk_id):
            res = transcribe_longform(talk, asr, cfg)
            nbests.append(NBestList(f"{talk.talk_id}/long", ((res.text, 0.0),), talk.talk_id,
                                    0.0, talk.duration_s))
            traces.extend({"talk_id": talk.talk_id, **t.to_dict()} for t in res.traces)
            continue
        if not talk.segments:
            raise DataError(f"talk {talk.talk_id}: no segments (enable long-form decoding)")
        if talk.audio is None:
            raise DataError(f"talk {talk.talk_id}: no audio reference")

        def one(seg, talk=talk):
            return asr.transcribe(talk.audio, seg.start_s, seg.end_s, cfg.nbest_k)

        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(one, talk.segments))
        for i, (seg, nb) in enumerate(zip(talk.segments, results)):
            nbests.append(NBestList(f"{talk.talk_id}/{i:04d}", nb.hypotheses[:cfg.nbest_k], talk.talk_id,
                                    seg.start_s, seg.end_s))
    save_nbest(out_path, nbests)
    if trace_path is not None:
        write_jsonl(trace_path, traces)
    return out_path


def refine_stage(nbest_path: Path, out_path: Path, cfg: PipelineConfig, llm) -> dict[str, Any]:
    """Refine routed utterances; others (and long-form transcripts) pass rank 1 through."""
    nbests = load_nbest(nbest_path)
    todo = [nb for nb in nbests
            if nb.talk_id is None or (cfg.uses_llm(nb.talk_id) and not cfg.uses_long_form(nb.talk_id))]
    refined: dict[str, RefinementResult] = {}
    summary = {"refined": 0, "fallback": 0, "failed": 0, "skipped": len(nbests) - len(todo)}
    status = "ok"
    if todo:
        batch = batch_refine(todo, _require(llm, "llm"), cfg)
        summary.update(batch.summary)
        status = batch.status
        for nb, res in zip(todo, batch.results):
            refined[nb.utterance_id] = res or RefinementResult(
                nb.utterance_id, nb.texts[0], True, f"failed: {batch.failures[nb.utterance_id]}")
    records = []
    for nb in nbests:
        res = refined.get(nb.utterance_id) or RefinementResult(nb.utterance_id, nb.texts[0], False, "not routed")
        rec = res.to_dict()
        if nb.talk_id is not None:
            rec["talk_id"] = nb.talk_id
        records.append(rec)
    write_jsonl(out_path, records)
    summary["status"] = status
    return summary


def _utterance_texts(path: Path) -> list[tuple[str, str]]:
    out = []
    for line, obj in read_jsonl(path):
        talk_id = obj.get("talk_id")
        if not isinstance(talk_id, str):
            raise DataError(f"{path}:{line}: record has no talk_id")
        if "refined" in obj:
            text = obj["refined"]
        elif isinstance(obj.get("hypotheses"), list) and obj["hypotheses"]:
            text = obj["hypotheses"][0].get("text") if isinstance(obj["hypotheses"][0], dict) else None
        else:
            text = None
        if not isinstance(text, str):
            raise DataError(f"{path}:{line}: record has neither 'refined' nor 'hypotheses'")
        out.append((talk_id, text))
    return out


def segment_stage(in_path: Path, out_path: Path, cfg: PipelineConfig, punct=None) -> Path:
    """Join each talk's utterances, restore punctuation, split into sentences."""
    rules = load_rules(cfg.rules_path)
    records = []
    utts = sorted(_utterance_texts(in_path), key=lambda r: r[0])  # stable: keeps utterance order per talk
    for talk_id, group in groupby(utts, key=lambda r: r[0]):
        text = " ".join(t.replace(DELIMITER, " ").strip() for _, t in group if t.strip())
        if not text.strip():
            log.warning("talk %s: empty transcript, no sentences", talk_id)
            continue
        text = restore_punctuation(text, punct)
        for i, sent in enumerate(split_sentences(text, rules)):
            records.append(sentence_record(talk_id, SentenceRecord(i, sent)))
    write_jsonl(out_path, records)
    return out_path


def _sentence_talks(path: Path) -> list[Talk]:
    return load_corpus(path)


def _write_sentences(path: Path, talks: list[Talk]) -> Path:
    return write_jsonl(path, (sentence_record(t.talk_id, s) for t in talks for s in t.sentences))


def translate_stage(in_path: Path, out_path: Path, cfg: PipelineConfig, mt) -> Path:
    _require(mt, "mt")
    talks = _sentence_talks(in_path)

    def one(talk: Talk) -> Talk:
        if not talk.sentences:
            return talk
        outs = mt.translate([s.src for s in talk.sentences])
        if len(outs) != len(talk.sentences):
            raise DataError(f"talk {talk.talk_id}: MT returned {len(outs)} of {len(talk.sentences)} sentences")
        return talk.with_sentences(SentenceRecord(s.index, s.src, o.replace(DELIMITER, " "), s.ape, s.ref)
                                   for s, o in zip(talk.sentences, outs))

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        done = list(pool.map(one, talks))
    return _write_sentences(out_path, done)


def ape_stage(in_path: Path, out_path: Path, cfg: PipelineConfig, llm,
              report_path: Path | None = None) -> dict[str, int]:
    talks = _sentence_talks(in_path)
    routed = {t.talk_id for t in talks if cfg.uses_llm(t.talk_id)}
    if routed:
        _require(llm, "llm")

    def one(talk: Talk):
        if talk.talk_id in routed:
            return postedit_document(talk, llm, cfg)
        return talk, ApeReport()

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        results = list(pool.map(one, talks))
    total = ApeReport()
    for _, rep in results:
        total.add(rep)
    _write_sentences(out_path, [t for t, _ in results])
    if report_path is not None:
        Path(report_path).write_text(json.dumps(total.to_dict(), indent=2) + "\n", encoding="utf-8")
    return total.to_dict()


def eval_stage(hyp_path: Path, ref_path: Path, report_path: Path, cfg: PipelineConfig,
               resegment: bool = False, scorer=None) -> dict[str, Any]:
    refs = [t for t in load_corpus(ref_path) if t.sentences]
    if not refs or any(s.ref is None for t in refs for s in t.sentences):
        raise DataError(f"{ref_path}: no reference translations to evaluate against")
    hyps = load_corpus(hyp_path)
    hyp_ids = {t.talk_id for t in hyps}
    # talks the pipeline produced nothing for still count against the references
    hyps += [Talk(t.talk_id) for t in refs if t.talk_id not in hyp_ids]
    report = evaluate(hyps, refs, resegment=resegment, lowercase=cfg.wer_lowercase,
                      strip_punct=cfg.wer_strip_punct, scorer=scorer).to_dict()
    Path(report_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


# ---------------------------------------------------------------- runner

def file_hash(path: Path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for p in files:
        if path.is_dir():
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    config: dict[str, Any]
    backends: dict[str, str | None]
    corpus: dict[str, str]
    stages: list[dict[str, Any]] = field(default_factory=list)
    status: str = "running"
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"run_id": self.run_id, "status": self.status, "error": self.error, "config": self.config,
                "backends": self.backends, "corpus": self.corpus, "stages": self.stages}

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path


def run_pipeline(cfg: PipelineConfig, corpus_path: str | Path, out_dir: str | Path,
                 backends: Backends | None = None) -> RunManifest:
    """ASR -> refinement -> segmentation -> MT -> document APE -> evaluation.

    Intermediate files land in ``out_dir`` together with ``manifest.json``
    (inputs/outputs hashed per stage) and ``timings.json``. The manifest
    carries no wall-clock data, so identical runs give identical manifests.
    """
    corpus_path, out = Path(corpus_path), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    talks = load_corpus(corpus_path)
    backends = backends or make_backends(cfg, talks)
    corpus_sha = file_hash(corpus_path)
    cfg_dict = cfg.to_dict()
    run_id = hashlib.sha256(json.dumps([cfg_dict, corpus_sha], sort_keys=True).encode()).hexdigest()[:16]
    manifest = RunManifest(run_id, cfg_dict,
                           {k: getattr(cfg, f"{k}_endpoint") for k in ("asr", "mt", "llm", "scorer", "punct")},
                           {"name": corpus_path.name, "sha256": corpus_sha})
    timings: dict[str, float] = {}
    paths = {name: out / fname for name, fname in STAGE_FILES.items()}
    trace = out / "stitch_trace.jsonl"
    has_refs = any(t.sentences for t in talks) and all(s.ref is not None for t in talks for s in t.sentences)

    plan = [
        ("transcribe", {"corpus": corpus_path}, {"asr": paths["transcribe"], "trace": trace},
         lambda: transcribe_stage(talks, paths["transcribe"], cfg, backends.asr, trace)),
        ("refine", {"asr": paths["transcribe"]}, {"refined": paths["refine"]},
         lambda: refine_stage(paths["transcribe"], paths["refine"], cfg, backends.llm)),
        ("segment", {"refined": paths["refine"]}, {"sentences": paths["segment"]},
         lambda: segment_stage(paths["refine"], paths["segment"], cfg, backends.punct)),
        ("translate", {"sentences": paths["segment"]}, {"translated": paths["translate"]},
         lambda: translate_stage(paths["segment"], paths["translate"], cfg, backends.mt)),
        ("doc-ape", {"translated": paths["translate"]}, {"final": paths["doc-ape"], "ape_report": out / "ape_report.json"},
         lambda: ape_stage(paths["translate"], paths["doc-ape"], cfg, backends.llm, out / "ape_report.json")),
    ]
    if has_refs:
        plan.append(("eval", {"final": paths["doc-ape"], "corpus": corpus_path}, {"report": paths["eval"]},
                     lambda: eval_stage(paths["doc-ape"], corpus_path, paths["eval"], cfg, resegment=True,
                                        scorer=backends.scorer)))

    try:
        for name, inputs, outputs, fn in plan:
            entry: dict[str, Any] = {"name": name, "inputs": {k: file_hash(p) for k, p in inputs.items()}}
            manifest.stages.append(entry)
            t0 = time.perf_counter()
            result = fn()
            timings[name] = time.perf_counter() - t0
            entry["outputs"] = {k: {"file": p.name, "sha256": file_hash(p)} for k, p in outputs.items()
                                if p.exists()}
            if isinstance(result, dict):
                entry["summary"] = result
        manifest.status = "completed"
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest.write(out / "manifest.json")
        (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return manifest
