"""actweave: learn hierarchical action concepts and an image-text
alignment scorer from weakly labelled image-description corpora."""

__version__ = "0.1.0"

from .corpus_io import (EmbeddingTable, FeatureTable, ImagedDescription,
                        PipelineConfig, load_act, load_checkpoint,
                        load_corpus, load_embeddings, load_features,
                        save_act, save_checkpoint)
from .vo_extract import Lexicon, VOPair, extract_vo, has_human_subject, lemmatize

__all__ = [
    "EmbeddingTable", "FeatureTable", "ImagedDescription", "PipelineConfig",
    "Lexicon", "VOPair", "extract_vo", "has_human_subject", "lemmatize",
    "load_act", "load_checkpoint", "load_corpus", "load_embeddings",
    "load_features", "save_act", "save_checkpoint",
]
