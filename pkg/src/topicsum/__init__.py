"""Saliency-aware neural topic modeling with a topic-augmented two-stage
dialogue summarizer, built on a minimal autodiff numeric core."""

__version__ = "0.1.0"

from . import autodiff, attention, corpus, metrics, optim, summarizer, synthetic, topic, training  # noqa: F401
