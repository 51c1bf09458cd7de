"""
Task-specific decoder prompt policies.

- default: <|sot|><|lang|><|task|>
- visual:  <|sop|>object, object, ...<|sot|><|en|><|asr|>
- concat:  <|sot|><|zh|><|en|><|asr|> unless LID is confident enough
- st:      <|sot|><|target|><|asr|> for En->X translation
"""

from typing import Sequence

from .errors import RetrievalError
from .models import ConcatConfig, LidResult, PromptSequence, Task, VisualPromptConfig
from .token_model import Vocabulary


def build_default_prompt(vocab: Vocabulary, lang: str, task: Task = Task.ASR) -> PromptSequence:
    """Single-language prompt with no previous text."""
    vocab.registry.get(lang)
    return PromptSequence(languages=(lang,), task=Task(task))


def build_fixed_prompt(vocab: Vocabulary, lang: str) -> PromptSequence:
    """Transcription prompt pinned to one language, regardless of LID."""
    return build_default_prompt(vocab, lang, Task.ASR)


def build_visual_prompt(vocab: Vocabulary, objects: Sequence[str], cfg: VisualPromptConfig,
                        lang: str = "en") -> PromptSequence:
    """Put the top-K object labels, joined by the separator, in the previous-text slot.

    Previous text is cut from the left when the prompt would exceed the budget.
    """
    if not objects:
        raise RetrievalError("empty object list")
    vocab.registry.get(lang)
    text = cfg.separator.join(objects[:cfg.top_k])
    previous = vocab.tokenizer.encode(text)

    # sop + sot + language + task + notimestamps
    room = vocab.prompt_budget - 5
    if len(previous) > room:
        previous = previous[len(previous) - room:] if room > 0 else []
    return PromptSequence(previous_text=tuple(previous), languages=(lang,), task=Task.ASR)


def build_cs_prompt(vocab: Vocabulary, lid: LidResult, cfg: ConcatConfig) -> PromptSequence:
    """Code-switched prompt.

    A confident LID (confidence >= threshold, ties included) keeps the single
    detected language; otherwise both languages go in, in config order.
    A threshold of 1.0 always concatenates, even for a fully certain LID.
    """
    vocab.registry.require(cfg.languages)
    if cfg.lid_threshold < 1.0 and lid.confidence >= cfg.lid_threshold:
        vocab.registry.get(lid.argmax)
        return PromptSequence(languages=(lid.argmax,), task=Task.ASR)
    return PromptSequence(languages=tuple(cfg.languages), task=Task.ASR)


def build_st_prompt(vocab: Vocabulary, target: str) -> PromptSequence:
    """En->X translation through the transcribe task token and the target's language token."""
    vocab.registry.get(target)
    return PromptSequence(languages=(target,), task=Task.ASR)
