"""Pointer-generator summarization lab: autodiff, model, training, decoding and metrics."""

from .estimator import PointerGeneratorSummarizer

__version__ = "0.1.0"
__all__ = ["PointerGeneratorSummarizer", "__version__"]
