"""
Core data models for the Whisper Prompt Toolkit.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Task(str, Enum):
    """Task token placed in the decoder prompt."""
    ASR = "asr"
    ST = "st"


class ManifestTask(str, Enum):
    """Evaluation task of a manifest record."""
    ASR = "asr"
    CS_ASR = "cs_asr"
    ST = "st"


class DecodeStrategy(str, Enum):
    """Search strategy of the decode loop."""
    GREEDY = "greedy"
    BEAM = "beam"


class UtteranceClass(str, Enum):
    """Category of a reference transcript for per-class error rates."""
    MANDARIN = "mandarin"
    ENGLISH = "english"
    CODE_SWITCHED = "code_switched"


class LanguageCode(BaseModel):
    """A registered language and the id of its special token."""
    model_config = ConfigDict(frozen=True)

    code: str
    token: int = Field(ge=0)


class SpecialTokens(BaseModel):
    """Ids of the special tokens the prompt grammar is built from."""
    model_config = ConfigDict(frozen=True)

    sop: int = Field(ge=0)
    sot: int = Field(ge=0)
    eot: int = Field(ge=0)
    asr: int = Field(ge=0)
    st: int = Field(ge=0)
    no_timestamps: int = Field(ge=0)
    languages: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_distinct(self) -> "SpecialTokens":
        ids = [self.sop, self.sot, self.eot, self.asr, self.st, self.no_timestamps]
        ids.extend(self.languages.values())
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate id among special tokens")
        return self

    @property
    def all_ids(self) -> frozenset:
        return frozenset(
            [self.sop, self.sot, self.eot, self.asr, self.st, self.no_timestamps]
            + list(self.languages.values())
        )

    @property
    def language_by_id(self) -> Dict[int, str]:
        return {token: code for code, token in self.languages.items()}

    def task_token(self, task: Task) -> int:
        return self.asr if task == Task.ASR else self.st

    def names(self) -> Dict[int, str]:
        """Display names used when rendering token sequences."""
        names = {
            self.sop: "sop",
            self.sot: "sot",
            self.eot: "eot",
            self.asr: "asr",
            self.st: "st",
            self.no_timestamps: "notimestamps",
        }
        names.update({token: code for code, token in self.languages.items()})
        return names


class PromptSequence(BaseModel):
    """Decoder prompt: optional previous text, one or two languages, task and flags."""
    model_config = ConfigDict(frozen=True)

    previous_text: Tuple[int, ...] = ()
    languages: Tuple[str, ...]
    task: Task = Task.ASR
    no_timestamps: bool = True

    @field_validator("languages")
    @classmethod
    def _check_languages(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if not 1 <= len(value) <= 2:
            raise ValueError(f"prompt needs 1 or 2 language tokens, got {len(value)}")
        if len(set(value)) != len(value):
            raise ValueError(f"duplicate language in prompt: {list(value)}")
        return value

    @field_validator("previous_text")
    @classmethod
    def _check_previous_text(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(token < 0 for token in value):
            raise ValueError("previous_text holds a negative token id")
        return value


class ConcatConfig(BaseModel):
    """Settings of `concat` prompting for code-switched speech."""
    model_config = ConfigDict(frozen=True)

    languages: Tuple[str, str] = ("zh", "en")
    # confidence at or above which the single detected language is used
    lid_threshold: float = Field(default=1.0, ge=0.0, le=1.0)

    @field_validator("languages")
    @classmethod
    def _check_pair(cls, value: Tuple[str, str]) -> Tuple[str, str]:
        if value[0] == value[1]:
            raise ValueError("concat prompting needs two distinct languages")
        return value


class VisualPromptConfig(BaseModel):
    """How retrieved object labels fill the previous-text slot."""
    model_config = ConfigDict(frozen=True)

    top_k: int = Field(default=50, ge=1)
    separator: str = ", "


class LidResult(BaseModel):
    """Language identification restricted to an allowed set."""
    model_config = ConfigDict(frozen=True)

    probs: Dict[str, float]
    argmax: str
    confidence: float = Field(ge=0.0, le=1.0)


class FrequencyMaskConfig(BaseModel):
    """Keep the top `percent` % most frequent token types of a corpus."""
    model_config = ConfigDict(frozen=True)

    percent: float = Field(gt=0.0, le=100.0)
    corpus: str

    @field_validator("corpus")
    @classmethod
    def _check_corpus(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("frequency corpus is empty")
        return value


class ScriptSpec(BaseModel):
    """A writing system as a sorted list of inclusive code-point intervals."""
    model_config = ConfigDict(frozen=True)

    name: str
    ranges: Tuple[Tuple[int, int], ...] = ()

    @field_validator("ranges")
    @classmethod
    def _check_ranges(cls, value: Tuple[Tuple[int, int], ...]) -> Tuple[Tuple[int, int], ...]:
        previous_hi = -1
        for lo, hi in value:
            if lo > hi:
                raise ValueError(f"range U+{lo:04X}-U+{hi:04X} is reversed")
            if lo <= previous_hi:
                raise ValueError("script ranges must be sorted and non-overlapping")
            previous_hi = hi
        return value

    def contains(self, char: str) -> bool:
        point = ord(char)
        return any(lo <= point <= hi for lo, hi in self.ranges)


@dataclass(frozen=True, eq=False)
class VocabMask:
    """Allow-set over the token vocabulary; the bit array is read-only.

    When `eot` is given its bit is forced on.
    """
    allowed: np.ndarray
    description: str = ""
    eot: Optional[int] = None

    def __post_init__(self):
        array = np.array(self.allowed, dtype=bool, copy=True)
        if array.ndim != 1:
            raise ValueError("mask must be one-dimensional")
        if self.eot is not None:
            if not 0 <= self.eot < array.shape[0]:
                raise ValueError(f"eot id {self.eot} outside mask of size {array.shape[0]}")
            array[self.eot] = True
        array.setflags(write=False)
        object.__setattr__(self, "allowed", array)

    @property
    def vocab_size(self) -> int:
        return int(self.allowed.shape[0])

    @property
    def allowed_count(self) -> int:
        return int(self.allowed.sum())

    def is_allowed(self, token: int) -> bool:
        return bool(self.allowed[token])

    def allowed_ids(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.allowed)]


class DecodeConfig(BaseModel):
    """Settings of the autoregressive decode loop."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    max_new_tokens: int = Field(default=224, ge=0)
    strategy: DecodeStrategy = DecodeStrategy.GREEDY
    beam_width: int = Field(default=1, ge=1)
    mask: Optional[VocabMask] = None


class Transcription(BaseModel):
    """Output of one decode run."""
    model_config = ConfigDict(frozen=True)

    text: str
    tokens: Tuple[int, ...] = ()
    prompt: Optional[PromptSequence] = None
    lid: Optional[LidResult] = None


class EditStats(BaseModel):
    """Levenshtein accounting behind WER, CER and MER."""
    model_config = ConfigDict(frozen=True)

    substitutions: int = Field(default=0, ge=0)
    deletions: int = Field(default=0, ge=0)
    insertions: int = Field(default=0, ge=0)
    ref_len: int = Field(default=0, ge=0)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def error_rate(self) -> Optional[float]:
        if self.ref_len == 0:
            return None
        return self.errors / self.ref_len

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            substitutions=self.substitutions + other.substitutions,
            deletions=self.deletions + other.deletions,
            insertions=self.insertions + other.insertions,
            ref_len=self.ref_len + other.ref_len,
        )


class UtteranceScore(BaseModel):
    """Per-utterance record of a report.

    `stats` is measured in the unit of the utterance class (characters,
    words or mixed tokens); `mixed` always uses mixed tokens and feeds Total MER.
    """
    id: str
    utterance_class: Optional[UtteranceClass] = None
    reference: str
    hypothesis: str
    prompt: Optional[str] = None
    stats: EditStats = Field(default_factory=EditStats)
    mixed: EditStats = Field(default_factory=EditStats)


class RecordFailure(BaseModel):
    """A record that could not be decoded or scored."""
    id: str
    error: str
    partial_text: Optional[str] = None      # output generated before a decode failure


class EvalReport(BaseModel):
    """Per-category error rates (percent) and corpus metrics of a run."""
    report_version: int = 1
    task: ManifestTask
    zh_cer: Optional[float] = None
    en_wer: Optional[float] = None
    cs_mer: Optional[float] = None
    total_mer: Optional[float] = None
    corpus_bleu: Optional[float] = None
    bleu_tokenization: Optional[str] = None
    normalization: str = "v1"
    utterances: List[UtteranceScore] = Field(default_factory=list)
    failures: List[RecordFailure] = Field(default_factory=list)

    @property
    def has_failures(self) -> bool:
        return bool(self.failures)

    def headline(self) -> Optional[float]:
        """The summarizing number of the run: Total MER, or BLEU for translation."""
        if self.task == ManifestTask.ST:
            return self.corpus_bleu
        return self.total_mer


class ManifestRecord(BaseModel):
    """One utterance of a dataset manifest."""
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    audio: str = Field(min_length=1)
    reference: str
    task: ManifestTask
    languages: Tuple[str, ...]
    frames: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def _check_task_fields(self) -> "ManifestRecord":
        if self.task == ManifestTask.CS_ASR and len(self.languages) != 2:
            raise ValueError(f"record {self.id}: cs_asr needs exactly 2 languages")
        if self.task == ManifestTask.ST and len(self.languages) != 1:
            raise ValueError(f"record {self.id}: st needs exactly 1 target language")
        if self.task == ManifestTask.ASR and len(self.languages) < 1:
            raise ValueError(f"record {self.id}: asr needs a language")
        return self
