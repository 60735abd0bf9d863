"""``cascade-st`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .backends import MockServer, make_backends, make_client
from .core import BackendError, DataError, load_config, load_corpus, load_nbest, validate_config, write_jsonl
from .docape import count_tokens
from .longform import plan_chunks
from .synth import cross_infer, make_ape_sft, make_asr_sft, noise_oracles, split_halves

log = logging.getLogger("cascade_st")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args, **overrides):
    cfg = load_config(args.config)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return validate_config(cfg, **overrides) if overrides else cfg


def _gold(args):
    return load_corpus(args.corpus) if getattr(args, "corpus", None) else []


def cmd_plan_chunks(args) -> int:
    for start, end in plan_chunks(args.duration, args.chunk, args.overlap):
        print(f"{start:g} {end:g}")
    return EXIT_OK


def cmd_transcribe(args) -> int:
    cfg = _config(args, long_form=True if args.long_form else None, chunk_s=args.chunk_s,
                  overlap_s=args.overlap_s, nbest_k=args.k)
    talks = load_corpus(args.corpus)
    trace = Path(args.trace) if args.trace else None
    if trace is None and cfg.long_form:
        trace = Path(args.out).with_suffix(".trace.jsonl")
    pipeline.transcribe_stage(talks, Path(args.out), cfg, make_client("asr", cfg.asr_endpoint, cfg, talks), trace)
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = _config(args, nbest_k=args.k, llm_refine=False if args.no_llm_refine else None)
    llm = make_client("llm", cfg.llm_endpoint, cfg, _gold(args))
    summary = pipeline.refine_stage(Path(args.nbest), Path(args.out), cfg, llm)
    print(json.dumps(summary))
    return EXIT_OK if summary["status"] == "ok" else EXIT_BACKEND


def cmd_segment(args) -> int:
    cfg = _config(args, rules_path=args.rules)
    punct = make_client("punct", cfg.punct_endpoint, cfg, _gold(args))
    pipeline.segment_stage(Path(args.inp), Path(args.out), cfg, punct)
    return EXIT_OK


def cmd_translate(args) -> int:
    cfg = _config(args)
    pipeline.translate_stage(Path(args.inp), Path(args.out), cfg,
                             make_client("mt", cfg.mt_endpoint, cfg, _gold(args)))
    return EXIT_OK


def cmd_doc_ape(args) -> int:
    cfg = _config(args, token_budget=args.budget, payload_sentences=args.payload,
                  llm_refine=False if args.no_llm_refine else None)
    llm = make_client("llm", cfg.llm_endpoint, cfg, _gold(args))
    report = pipeline.ape_stage(Path(args.inp), Path(args.out), cfg, llm,
                                Path(args.report) if args.report else None)
    print(json.dumps(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    scorer = make_client("scorer", cfg.scorer_endpoint, cfg)
    report = pipeline.eval_stage(Path(args.hyp), Path(args.ref), Path(args.report), cfg,
                                 resegment=args.resegment, scorer=scorer)
    print(json.dumps({k: report[k] for k in ("wer", "bleu", "chrf2", "comet")}))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.task == "asr":
        records, skipped = make_asr_sft(load_nbest(args.inp), args.k)
        log.warning("N-best lists decoded by a model trained on the same utterances look cleaner "
                    "than test-time output; prefer a held-out decoder")
        write_jsonl(args.out, (r.to_dict() for r in records))
        print(json.dumps({"records": len(records), "skipped": skipped}))
        return EXIT_OK
    talks = load_corpus(args.inp)
    if args.cross_fit:
        asr, mt = noise_oracles(talks, args.noise, args.seed)
        items = cross_infer(split_halves(talks), asr, mt)
    else:
        items = talks
    records = make_ape_sft(items, args.budget, count_tokens)
    write_jsonl(args.out, (r.to_dict() for r in records))
    print(json.dumps({"records": len(records)}))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args, llm_refine=False if args.no_llm_refine else None,
                  long_form=True if args.long_form else None, seed=args.seed)
    manifest = pipeline.run_pipeline(cfg, args.corpus, args.out_dir)
    print(json.dumps({"run_id": manifest.run_id, "status": manifest.status}))
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    cfg = _config(args)
    client = make_client(args.kind, f"mock:{args.mock}", cfg, _gold(args))
    server = MockServer(args.kind, client, port=args.port, host=args.host)
    print(server.url, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cascade-st", description="Cascaded speech translation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def stage(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat JSON config file")
        sp.set_defaults(fn=fn)
        return sp

    sp = stage("plan-chunks", cmd_plan_chunks, "print long-form chunk spans")
    sp.add_argument("--duration", type=float, required=True)
    sp.add_argument("--chunk", type=float, default=30.0)
    sp.add_argument("--overlap", type=float, default=10.0)

    sp = stage("transcribe", cmd_transcribe, "ASR over gold/ingested segments or long-form chunks")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--long-form", action="store_true")
    sp.add_argument("--chunk-s", type=float)
    sp.add_argument("--overlap-s", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--trace", help="stitch trace JSONL (long-form only)")

    sp = stage("refine-asr", cmd_refine, "LLM refinement of N-best lists")
    sp.add_argument("--nbest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--no-llm-refine", action="store_true")
    sp.add_argument("--corpus", help="gold corpus for oracle mocks")

    sp = stage("segment", cmd_segment, "punctuation restoration and sentence splitting")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--rules", help="extra abbreviations, one per line")
    sp.add_argument("--corpus", help="gold corpus for oracle mocks")

    sp = stage("translate", cmd_translate, "sentence-level MT")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--corpus", help="gold corpus for oracle mocks")

    sp = stage("doc-ape", cmd_doc_ape, "document-level post-editing")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--payload", type=int)
    sp.add_argument("--report")
    sp.add_argument("--no-llm-refine", action="store_true")
    sp.add_argument("--corpus", help="gold corpus for oracle mocks")

    sp = stage("synth-data", cmd_synth, "fine-tuning datasets")
    sp.add_argument("task", choices=["asr", "ape"])
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--budget", type=int, default=256)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.1, help="noise-oracle corruption rate")
    sp.add_argument("--cross-fit", action="store_true", help="two-halves cross inference with noise oracles")

    sp = stage("eval", cmd_eval, "WER, BLEU, chrF2 (and external COMET)")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--resegment", action="store_true")

    sp = stage("run", cmd_run, "end-to-end pipeline")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--no-llm-refine", action="store_true")
    sp.add_argument("--long-form", action="store_true")
    sp.add_argument("--seed", type=int)

    sp = stage("serve-mock", cmd_serve_mock, "serve a mock backend over HTTP")
    sp.add_argument("--kind", required=True, choices=["asr", "mt", "llm", "scorer", "punct"])
    sp.add_argument("--mock", default="echo")
    sp.add_argument("--corpus")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
