"""
Scoring module: error rates for mixed-script transcripts and corpus BLEU.
"""

from .bleu import corpus_bleu
from .metrics import (
    NORMALIZATION_VERSION,
    aggregate,
    classify,
    edit_stats,
    mixed_tokenize,
    normalize,
    score_corpus,
    score_utterance,
)

__all__ = [
    'NORMALIZATION_VERSION',
    'aggregate',
    'classify',
    'corpus_bleu',
    'edit_stats',
    'mixed_tokenize',
    'normalize',
    'score_corpus',
    'score_utterance',
]
