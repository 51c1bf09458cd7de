"""
Backend factory: turns a backend spec string into a ready backend.

    mock:<script.yaml>     scripted MockBackend
    exec:<command line>    ExternalBackend over the command's stdio
    tcp:<host>:<port>      ExternalBackend over TCP
"""

from pathlib import Path
from typing import Dict, Optional

from ..core.errors import ConfigError
from ..core.token_model import Vocabulary
from ..core.visual_retrieval import FileEmbeddingProvider
from .backend import Backend, ensure_concurrent_safe
from .external_backend import DEFAULT_TIMEOUT, CommandEmbeddingProvider, ExternalBackend
from .mock_backend import MockBackend

BACKEND_KINDS = ("mock", "exec", "tcp")


def parse_backend_spec(spec: str):
    kind, sep, rest = spec.partition(":")
    if not sep or kind not in BACKEND_KINDS or not rest.strip():
        raise ConfigError(f"invalid backend spec {spec!r}; expected one of mock:<script>, exec:<cmd>, tcp:<host>:<port>")
    return kind, rest.strip()


class BackendFactory:
    """Creates backends for one vocabulary and caches them by spec."""

    def __init__(self, vocab: Vocabulary, base_dir: Optional[Path] = None, timeout: float = DEFAULT_TIMEOUT):
        self.vocab = vocab
        self.base_dir = base_dir
        self.timeout = timeout
        self._backend_cache: Dict[str, Backend] = {}

    def create_backend(self, spec: str, serialized: bool = True) -> Backend:
        """Create (or reuse) the backend for `spec`.

        With `serialized`, backends that forbid concurrent steps come back
        wrapped so record workers can share them.
        """
        cache_key = f"{spec}|{serialized}"
        if cache_key in self._backend_cache:
            return self._backend_cache[cache_key]

        kind, rest = parse_backend_spec(spec)
        if kind == "mock":
            path = Path(rest)
            if self.base_dir is not None and not path.is_absolute():
                path = self.base_dir / path
            backend: Backend = MockBackend.from_file(self.vocab, path)
        else:
            backend = ExternalBackend(f"{kind}:{rest}", timeout=self.timeout)

        if serialized:
            backend = ensure_concurrent_safe(backend)
        self._backend_cache[cache_key] = backend
        return backend

    def close(self) -> None:
        for backend in self._backend_cache.values():
            backend.close()
        self._backend_cache.clear()


def create_embedding_provider(spec: str, base_dir: Optional[Path] = None, timeout: float = DEFAULT_TIMEOUT):
    """`file:<vectors.emb>` for precomputed vectors, otherwise an engine target."""
    kind, sep, rest = spec.partition(":")
    if kind == "file" and sep and rest.strip():
        path = Path(rest.strip())
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return FileEmbeddingProvider(path)
    kind, rest = parse_backend_spec(spec)
    if kind == "mock":
        raise ConfigError("mock backends cannot embed; use file:<vectors.emb> or an engine target")
    return CommandEmbeddingProvider(f"{kind}:{rest}", timeout)
