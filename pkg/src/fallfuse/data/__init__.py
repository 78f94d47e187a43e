"""Corpus ingestion, alignment, splitting, synthetic generation and caching."""
from .examples import DATA_MAGIC, FusedDataset, FusedExample, read_cache, write_cache
from .ingest import (CorpusLayout, FrameRef, align, index_frames, ingest_sensor_csv, load_corpus, load_frame,
                     parse_timestamp)
from .split import SplitSpec, split, split_indices
from .synth import SynthConfig, synth_dataset, synth_generate

__all__ = [
    "DATA_MAGIC", "FusedDataset", "FusedExample", "read_cache", "write_cache",
    "CorpusLayout", "FrameRef", "align", "index_frames", "ingest_sensor_csv", "load_corpus", "load_frame",
    "parse_timestamp", "SplitSpec", "split", "split_indices", "SynthConfig", "synth_dataset", "synth_generate",
]
