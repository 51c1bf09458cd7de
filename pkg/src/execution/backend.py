"""
Backend contract: anything that maps (audio, decoder context) to next-token logits.
"""

import threading
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import BackendError
from ..core.models import SpecialTokens
from ..core.token_model import DEFAULT_N_CTX


class BackendInfo(BaseModel):
    """What a backend reports about itself."""
    vocab_size: int = Field(gt=0)
    languages: List[str] = Field(default_factory=list)
    n_ctx: int = Field(default=DEFAULT_N_CTX, gt=0)
    concurrent_safe: bool = False


class Backend(ABC):
    """A model engine seen through the step-logits contract."""

    @abstractmethod
    def info(self) -> BackendInfo:
        """Vocabulary size, supported languages and context length."""

    @abstractmethod
    def step(self, audio: str, context: Sequence[int]) -> np.ndarray:
        """Logits (float32, vocab size) for the token following `context`."""

    def digest(self) -> str:
        """Identity of the model behind the backend, folded into cache keys."""
        return type(self).__name__

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class SerializedBackend(Backend):
    """Lets only one `step` run at a time on a backend that forbids concurrent calls."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self._lock = threading.Lock()

    def info(self) -> BackendInfo:
        with self._lock:
            info = self.inner.info()
        return info.model_copy(update={"concurrent_safe": True})

    def step(self, audio: str, context: Sequence[int]) -> np.ndarray:
        with self._lock:
            return self.inner.step(audio, context)

    def digest(self) -> str:
        return self.inner.digest()

    def close(self) -> None:
        self.inner.close()


def ensure_concurrent_safe(backend: Backend) -> Backend:
    """Wrap the backend in a SerializedBackend unless it allows concurrent steps."""
    if isinstance(backend, SerializedBackend) or backend.info().concurrent_safe:
        return backend
    return SerializedBackend(backend)


def check_logits(logits, vocab_size: int) -> np.ndarray:
    """Coerce a backend answer to a float32 vector of the vocabulary size."""
    try:
        array = np.asarray(logits, dtype=np.float32)
    except (TypeError, ValueError) as e:
        raise BackendError(f"logits are not numeric: {e}") from e
    if array.shape != (vocab_size,):
        raise BackendError(f"logits have shape {array.shape}, expected ({vocab_size},)")
    if np.isnan(array).any():
        raise BackendError("logits contain NaN")
    return array


def split_context(context: Sequence[int],
                  specials: SpecialTokens) -> Optional[Tuple[Tuple[int, ...], Tuple[str, ...], Optional[int], List[int]]]:
    """Split a decoder context into (previous text, languages, task token, generated).

    Returns None for the LID step, i.e. a context that stops right after <|sot|>.
    """
    tokens = list(context)
    try:
        sot = tokens.index(specials.sot)
    except ValueError:
        raise BackendError("context has no <|sot|> token") from None
    previous = tuple(tokens[1:sot]) if sot > 0 and tokens[0] == specials.sop else ()
    pos = sot + 1
    if pos == len(tokens):
        return None

    language_ids = specials.language_by_id
    languages: List[str] = []
    while pos < len(tokens) and tokens[pos] in language_ids:
        languages.append(language_ids[tokens[pos]])
        pos += 1
    task = None
    if pos < len(tokens) and tokens[pos] in (specials.asr, specials.st):
        task = tokens[pos]
        pos += 1
    if pos < len(tokens) and tokens[pos] == specials.no_timestamps:
        pos += 1
    return previous, tuple(languages), task, tokens[pos:]
