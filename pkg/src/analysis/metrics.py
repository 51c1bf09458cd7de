"""
Scoring: text normalization, script-aware mixed tokenization, Levenshtein
accounting, per-class error rates and corpus BLEU.
"""

import re
import unicodedata
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..core.decode_constraints import CJK
from ..core.models import EditStats, EvalReport, ManifestTask, RecordFailure, UtteranceClass, UtteranceScore
from .bleu import corpus_bleu

NORMALIZATION_VERSION = "v1"
PROFILES = ("english", "mandarin", "mixed")

_APOSTROPHES = {"'", "’"}
_WHITESPACE = re.compile(r"\s+")


def is_cjk(char: str) -> bool:
    return CJK.contains(char)


def _strip_punctuation(text: str) -> str:
    out: List[str] = []
    for i, char in enumerate(text):
        if char in _APOSTROPHES:
            before = text[i - 1] if i > 0 else ""
            after = text[i + 1] if i + 1 < len(text) else ""
            if before.isalnum() and after.isalnum():
                out.append("'")
                continue
        if unicodedata.category(char).startswith("P"):
            out.append(" ")
        else:
            out.append(char)
    return "".join(out)


def _join_cjk(text: str) -> str:
    chars = list(text)
    kept: List[str] = []
    for i, char in enumerate(chars):
        if char == " " and kept and is_cjk(kept[-1]) and i + 1 < len(chars) and is_cjk(chars[i + 1]):
            continue
        kept.append(char)
    return "".join(kept)


def normalize(text: str, profile: str = "mixed") -> str:
    """Lowercase, drop punctuation (intra-word apostrophes survive) and collapse whitespace.

    The mandarin and mixed profiles also remove spaces between CJK characters.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown normalization profile {profile!r}")
    text = unicodedata.normalize("NFKC", text).lower()
    text = _strip_punctuation(text)
    text = _WHITESPACE.sub(" ", text).strip()
    if profile != "english":
        text = _join_cjk(text)
    return text


@dataclass(frozen=True)
class MixedToken:
    surface: str
    kind: str  # "cjk_char" or "word"


@dataclass(frozen=True)
class MixedTokenization:
    tokens: Tuple[MixedToken, ...]

    @property
    def surfaces(self) -> List[str]:
        return [token.surface for token in self.tokens]

    @property
    def has_cjk(self) -> bool:
        return any(token.kind == "cjk_char" for token in self.tokens)

    @property
    def has_words(self) -> bool:
        return any(token.kind == "word" for token in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def mixed_tokenize(text: str) -> MixedTokenization:
    """Each CJK code point is a token; non-CJK runs split on whitespace into words."""
    tokens: List[MixedToken] = []
    word: List[str] = []

    def flush():
        if word:
            tokens.append(MixedToken("".join(word), "word"))
            word.clear()

    for char in text:
        if is_cjk(char):
            flush()
            tokens.append(MixedToken(char, "cjk_char"))
        elif char.isspace():
            flush()
        else:
            word.append(char)
    flush()
    return MixedTokenization(tuple(tokens))


def char_tokens(text: str) -> List[str]:
    return [char for char in text if not char.isspace()]


def edit_stats(ref: Sequence, hyp: Sequence) -> EditStats:
    """Unit-cost Levenshtein alignment.

    The backtrace prefers substitution (or match), then insertion, then deletion.
    """
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            dist[i][j] = min(dist[i - 1][j - 1] + cost, dist[i][j - 1] + 1, dist[i - 1][j] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return EditStats(substitutions=subs, deletions=dels, insertions=ins, ref_len=n)


def classify(tokens: MixedTokenization) -> Optional[UtteranceClass]:
    """Class of a reference: mandarin, english, code-switched, or None when empty."""
    if tokens.has_cjk and tokens.has_words:
        return UtteranceClass.CODE_SWITCHED
    if tokens.has_cjk:
        return UtteranceClass.MANDARIN
    if tokens.has_words:
        return UtteranceClass.ENGLISH
    return None


def score_utterance(utt_id: str, reference: str, hypothesis: str, prompt: Optional[str] = None) -> UtteranceScore:
    """Score one pair in the unit of its class: CJK characters, words or mixed tokens."""
    ref_norm = normalize(reference, "mixed")
    hyp_norm = normalize(hypothesis, "mixed")
    ref_mixed, hyp_mixed = mixed_tokenize(ref_norm), mixed_tokenize(hyp_norm)
    utt_class = classify(ref_mixed)
    mixed = edit_stats(ref_mixed.surfaces, hyp_mixed.surfaces)

    if utt_class == UtteranceClass.MANDARIN:
        stats = edit_stats(char_tokens(ref_norm), char_tokens(hyp_norm))
    elif utt_class == UtteranceClass.ENGLISH:
        stats = edit_stats(normalize(reference, "english").split(), normalize(hypothesis, "english").split())
    else:
        stats = mixed
    return UtteranceScore(id=utt_id, utterance_class=utt_class, reference=reference,
                          hypothesis=hypothesis, prompt=prompt, stats=stats, mixed=mixed)


def _rate(stats: EditStats) -> Optional[float]:
    rate = stats.error_rate
    return None if rate is None else 100.0 * rate


def bleu_tokenization_for(references: Iterable[str]) -> str:
    """Character BLEU when any reference holds CJK text, word BLEU otherwise."""
    return "char" if any(is_cjk(char) for ref in references for char in ref) else "word"


def aggregate(utterances: Sequence[UtteranceScore], task: ManifestTask,
              failures: Sequence[RecordFailure] = ()) -> EvalReport:
    """Pool per-utterance statistics into a report.

    Every rate is summed errors over summed reference length, never a mean
    of per-utterance rates; a class rate is absent when the class is empty.
    """
    task = ManifestTask(task)
    pooled: Dict[UtteranceClass, EditStats] = {}
    total = EditStats()
    for utt in utterances:
        total = total + utt.mixed
        if utt.utterance_class is not None:
            pooled[utt.utterance_class] = pooled.get(utt.utterance_class, EditStats()) + utt.stats

    def class_rate(utt_class: UtteranceClass) -> Optional[float]:
        return _rate(pooled[utt_class]) if utt_class in pooled else None

    report = EvalReport(
        task=task,
        zh_cer=class_rate(UtteranceClass.MANDARIN),
        en_wer=class_rate(UtteranceClass.ENGLISH),
        cs_mer=class_rate(UtteranceClass.CODE_SWITCHED),
        total_mer=_rate(total),
        normalization=NORMALIZATION_VERSION,
        utterances=sorted(utterances, key=lambda utt: utt.id),
        failures=sorted(failures, key=lambda failure: failure.id),
    )
    if task == ManifestTask.ST and utterances:
        tokenization = bleu_tokenization_for(utt.reference for utt in utterances)
        report.corpus_bleu = corpus_bleu([(utt.reference, utt.hypothesis) for utt in utterances], tokenization)
        report.bleu_tokenization = tokenization
    return report


def score_corpus(pairs: Sequence[Tuple[str, str]], task: ManifestTask = ManifestTask.CS_ASR,
                 ids: Optional[Sequence[str]] = None) -> EvalReport:
    """Score (reference, hypothesis) pairs; ids default to zero-padded positions."""
    if not pairs:
        raise ValueError("cannot score an empty corpus")
    if ids is None:
        width = len(str(len(pairs)))
        ids = [str(i).zfill(width) for i in range(len(pairs))]
    elif len(ids) != len(pairs):
        raise ValueError(f"{len(ids)} ids for {len(pairs)} pairs")
    utterances = [score_utterance(utt_id, ref, hyp) for utt_id, (ref, hyp) in zip(ids, pairs)]
    return aggregate(utterances, task)
