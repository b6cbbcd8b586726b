"""Listening-data track embeddings and multi-label mood classification toolkit.

The package covers the full experiment loop: ingesting play-count triplets
and mood annotations, factorizing the interaction matrix into track
embeddings, training an MLP tag classifier on any precomputed embedding,
ranking-based evaluation, and tag-level analytics.
"""

__version__ = "0.1.0"

from .errors import DataError, MoodstackError

__all__ = ["DataError", "MoodstackError", "__version__"]
