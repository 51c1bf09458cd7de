"""
Corpus-level BLEU-4 with a single reference per segment.
"""

import math
from collections import Counter
from typing import List, Sequence, Tuple

TOKENIZATIONS = ("word", "char")


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    counts: Counter = Counter()
    for i in range(len(tokens) - n + 1):
        counts[tuple(tokens[i:i + n])] += 1
    return counts


def tokenize(text: str, tokenization: str) -> List[str]:
    """`word` splits on whitespace; `char` keeps every non-space character."""
    if tokenization == "word":
        return text.split()
    if tokenization == "char":
        return [char for char in text if not char.isspace()]
    raise ValueError(f"unknown BLEU tokenization {tokenization!r}")


def segment_stats(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> Counter:
    """Clipped n-gram matches and guesses of one segment, plus lengths."""
    stats: Counter = Counter()
    for n in range(1, max_n + 1):
        guesses = ngrams(hyp, n)
        stats["guess", n] += sum(guesses.values())
        stats["match", n] += sum((guesses & ngrams(ref, n)).values())
    stats["hyp_len"] += len(hyp)
    stats["ref_len"] += len(ref)
    return stats


def bleu_from_stats(stats: Counter, max_n: int = 4, smooth: bool = False) -> float:
    """BLEU in [0, 100] from summed segment statistics.

    Without smoothing a zero (or undefined) precision at any order gives 0.
    `smooth` adds one to matches and guesses of orders above 1.
    """
    if stats["guess", 1] == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, max_n + 1):
        match, guess = stats["match", n], stats["guess", n]
        if smooth and n > 1:
            match, guess = match + 1, guess + 1
        if match == 0 or guess == 0:
            return 0.0
        log_precision += math.log(match / guess)
    score = math.exp(log_precision / max_n)
    hyp_len, ref_len = stats["hyp_len"], stats["ref_len"]
    if hyp_len < ref_len:
        score *= math.exp(1 - ref_len / hyp_len)
    return 100.0 * score


def corpus_bleu(pairs: Sequence[Tuple[str, str]], tokenization: str = "word",
                max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU over (reference, hypothesis) pairs."""
    if not pairs:
        raise ValueError("cannot compute BLEU of an empty corpus")
    stats: Counter = Counter()
    for ref, hyp in pairs:
        stats += segment_stats(tokenize(hyp, tokenization), tokenize(ref, tokenization), max_n)
    return bleu_from_stats(stats, max_n, smooth)
