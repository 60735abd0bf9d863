"""Cascaded speech translation toolkit: long-form ASR stitching, LLM refinement
of N-best lists and documents, and the evaluation harness around them."""
from .core import (DELIMITER, BackendError, CorpusError, DataError, DocChunk, NBestList, PipelineConfig,
                   PipelineError, ProtocolError, SentenceRecord, Segment, Talk, TransportError, load_corpus,
                   save_corpus, validate_config)

__all__ = [
    "DELIMITER", "BackendError", "CorpusError", "DataError", "DocChunk", "NBestList", "PipelineConfig",
    "PipelineError", "ProtocolError", "SentenceRecord", "Segment", "Talk", "TransportError", "load_corpus",
    "save_corpus", "validate_config",
]
