"""
Exception hierarchy shared by the toolkit.
"""

from typing import List, Optional, Sequence


class ToolkitError(Exception):
    """Base class for every error raised by the toolkit."""
    pass


class VocabManifestError(ToolkitError):
    """The vocabulary manifest is malformed or inconsistent."""
    pass


class UnknownLanguageError(ToolkitError):
    """A language code is not in the loaded registry."""

    def __init__(self, code: str):
        super().__init__(f"unknown language: {code!r}")
        self.code = code


class PromptGrammarError(ToolkitError):
    """A token sequence does not follow the decoder prompt grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at index {position})")
        self.position = position


class PromptBudgetError(ToolkitError):
    """The serialized prompt cannot fit in the prompt budget."""
    pass


class RetrievalError(ToolkitError):
    """Object retrieval or embedding index failure."""
    pass


class MaskError(ToolkitError):
    """Vocabulary mask construction or combination failure."""
    pass


class BackendError(ToolkitError):
    """The model backend failed or returned something unusable."""
    pass


class DecodeError(ToolkitError):
    """Decoding stopped early; carries whatever was generated before the failure."""

    def __init__(self, message: str, partial_tokens: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.partial_tokens: List[int] = list(partial_tokens or [])


class ConfigError(ToolkitError):
    """A run configuration or sweep specification is invalid."""
    pass


class ManifestError(ToolkitError):
    """A dataset manifest is invalid."""
    pass
