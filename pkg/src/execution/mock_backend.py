"""
Scripted backend driven by a YAML file. Used by every test and by the demo
corpus; no model is involved.

Script keys (all optional):

    languages: [en, zh]          # supported languages, default: the whole registry
    n_ctx: 448
    noise_seed: 7                # add seeded gaussian noise to every logit vector
    noise_scale: 1.0
    lid:                         # language logits at the LID step
      clip.wav: {zh: 3.0, en: 0.0}
    outputs:                     # first entry whose `when` matches is the target
      clip.wav:
        - when: {languages: [zh, en]}
          text: 也不需要做research
        - text: 也不需要做研究
    preferences:                 # extra logit per token text or id
      clip.wav: {привет: 4.0}
    failures:                    # raise once this many tokens were generated
      broken.wav: 0

The key "*" applies to any audio not listed. The next target token gets
+10; once the output diverged from the target, eot gets +5.
"""

import hashlib
import json
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..core.errors import BackendError, ConfigError
from ..core.models import Task
from ..core.token_model import DEFAULT_N_CTX, Vocabulary
from .backend import Backend, BackendInfo, split_context

TARGET_LOGIT = 10.0
DIVERGED_EOT_LOGIT = 5.0
WILDCARD = "*"


class MockCondition(BaseModel):
    languages: Optional[List[str]] = None
    task: Optional[Task] = None
    prompt_contains: Optional[str] = None


class MockOutput(BaseModel):
    when: MockCondition = Field(default_factory=MockCondition)
    text: Optional[str] = None
    tokens: Optional[List[int]] = None

    @model_validator(mode="after")
    def _one_target(self) -> "MockOutput":
        if (self.text is None) == (self.tokens is None):
            raise ValueError("an output needs exactly one of 'text' or 'tokens'")
        return self


class MockScript(BaseModel):
    languages: Optional[List[str]] = None
    n_ctx: int = Field(default=DEFAULT_N_CTX, gt=0)
    concurrent_safe: bool = True
    noise_seed: Optional[int] = None
    noise_scale: float = Field(default=1.0, ge=0.0)
    lid: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    outputs: Dict[str, List[MockOutput]] = Field(default_factory=dict)
    preferences: Dict[str, Dict[Union[int, str], float]] = Field(default_factory=dict)
    failures: Dict[str, int] = Field(default_factory=dict)


def _canonical(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _canonical(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(item) for item in value]
    return value


class MockBackend(Backend):
    """Backend whose logits come from a script instead of a model."""

    def __init__(self, vocab: Vocabulary, script: Union[MockScript, Dict[str, Any], None] = None):
        if script is None:
            script = MockScript()
        elif isinstance(script, dict):
            try:
                script = MockScript.model_validate(script)
            except ValidationError as e:
                raise ConfigError(f"invalid mock script: {e}") from e
        self.vocab = vocab
        self.script = script
        self.step_calls = 0
        self._lock = threading.Lock()
        self._targets: Dict[int, List[int]] = {}
        self._preferences: Dict[str, Dict[int, float]] = {
            audio: self._resolve_preferences(prefs) for audio, prefs in script.preferences.items()
        }
        languages = script.languages if script.languages is not None else vocab.registry.codes
        vocab.registry.require(languages)
        self._info = BackendInfo(vocab_size=vocab.vocab_size, languages=list(languages),
                                 n_ctx=script.n_ctx, concurrent_safe=script.concurrent_safe)
        self._digest = hashlib.sha256(
            json.dumps(_canonical(script.model_dump(mode="json")), sort_keys=True).encode("utf-8")
        ).hexdigest()

    @classmethod
    def from_file(cls, vocab: Vocabulary, path: Union[str, Path]) -> "MockBackend":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot load mock script {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: mock script must be a mapping")
        return cls(vocab, data)

    def _resolve_preferences(self, prefs: Dict[Union[int, str], float]) -> Dict[int, float]:
        resolved: Dict[int, float] = {}
        for key, value in prefs.items():
            if isinstance(key, int):
                token = key
            else:
                try:
                    pieces = self.vocab.tokenizer.encode(key)
                except ValueError as e:
                    raise ConfigError(f"mock preference {key!r}: {e}") from e
                if len(pieces) != 1:
                    raise ConfigError(f"mock preference {key!r} is not a single token")
                token = pieces[0]
            if not 0 <= token < self.vocab.vocab_size:
                raise ConfigError(f"mock preference id {token} outside the vocabulary")
            resolved[token] = resolved.get(token, 0.0) + float(value)
        return resolved

    def info(self) -> BackendInfo:
        return self._info

    def digest(self) -> str:
        return self._digest

    def _lookup(self, table: Dict[str, Any], audio: str):
        if audio in table:
            return table[audio]
        return table.get(WILDCARD)

    def _target(self, audio: str, languages, task, previous) -> Optional[List[int]]:
        entries = self._lookup(self.script.outputs, audio) or []
        specials = self.vocab.specials
        for entry in entries:
            cond = entry.when
            if cond.languages is not None and tuple(cond.languages) != tuple(languages):
                continue
            if cond.task is not None and specials.task_token(cond.task) != task:
                continue
            if cond.prompt_contains is not None and cond.prompt_contains not in self.vocab.tokenizer.decode(previous):
                continue
            if entry.tokens is not None:
                return list(entry.tokens)
            key = id(entry)
            if key not in self._targets:
                try:
                    self._targets[key] = self.vocab.tokenizer.encode(entry.text)
                except ValueError as e:
                    raise BackendError(f"mock output for {audio}: {e}") from e
            return self._targets[key]
        return None

    def _noise(self, audio: str, context: Sequence[int]) -> np.ndarray:
        seed_material = json.dumps([self.script.noise_seed, audio, list(context)]).encode("utf-8")
        seed = int.from_bytes(hashlib.sha256(seed_material).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return (rng.standard_normal(self.vocab.vocab_size) * self.script.noise_scale).astype(np.float32)

    def step(self, audio: str, context: Sequence[int]) -> np.ndarray:
        with self._lock:
            self.step_calls += 1
        specials = self.vocab.specials
        logits = np.zeros(self.vocab.vocab_size, dtype=np.float32)
        if self.script.noise_seed is not None:
            logits += self._noise(audio, context)

        split = split_context(context, specials)
        generated_count = 0 if split is None else len(split[3])
        fail_after = self._lookup(self.script.failures, audio)
        if fail_after is not None and generated_count >= fail_after:
            raise BackendError(f"scripted failure for {audio} after {generated_count} tokens")

        if split is None:
            for code, value in (self._lookup(self.script.lid, audio) or {}).items():
                if code in specials.languages:
                    logits[specials.languages[code]] += value
            return logits

        previous, languages, task, generated = split
        for token, value in (self._lookup(self._preferences, audio) or {}).items():
            logits[token] += value
        target = self._target(audio, languages, task, previous)
        if target is not None and generated == target[:len(generated)]:
            following = target[len(generated)] if len(generated) < len(target) else specials.eot
            logits[following] += TARGET_LOGIT
        else:
            logits[specials.eot] += DIVERGED_EOT_LOGIT
        return logits
