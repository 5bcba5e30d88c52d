"""vidcap: desk-scale video captioning with multi-feature caption generators
and evaluator-based candidate pool reranking."""

__version__ = "0.1.0"
