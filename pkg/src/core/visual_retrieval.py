"""
Visual retrieval: turns sampled video frames into a ranked list of object labels
by cosine similarity against a precomputed text-embedding index.
"""

import base64
import binascii
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import RetrievalError

PHOTO_TEMPLATE = "This is a photo of a {}"
AGGREGATIONS = ("max", "mean")


class EmbeddingProvider(Protocol):
    """Anything that turns texts (and optionally images) into vectors of one dimension."""

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...

    def embed_images(self, refs: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class ObjectIndex:
    """Labels and their unit-norm embeddings, in build order."""
    dim: int
    labels: Tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.embeddings, dtype=np.float32, copy=True)
        if matrix.ndim != 2 or matrix.shape != (len(self.labels), self.dim):
            raise RetrievalError(
                f"index matrix shape {matrix.shape} does not match {len(self.labels)} labels of dim {self.dim}"
            )
        if len(set(self.labels)) != len(self.labels):
            raise RetrievalError("duplicate label")
        matrix.setflags(write=False)
        object.__setattr__(self, "embeddings", matrix)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class FramePlan:
    frame_count: int
    indices: Tuple[int, ...]


class RetrievalResult(BaseModel):
    """Labels ranked by similarity, best first."""
    model_config = ConfigDict(frozen=True)

    ranked: Tuple[Tuple[str, float], ...] = ()

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.ranked]


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """L2-normalize each row; zero rows cannot be normalized."""
    matrix = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise RetrievalError("cannot normalize a zero embedding vector")
    return (matrix / norms).astype(np.float32)


def build_index(labels: Sequence[str], provider: EmbeddingProvider,
                template: str = PHOTO_TEMPLATE) -> ObjectIndex:
    """Embed every label through the photo template sentence and normalize."""
    labels = list(labels)
    if not labels:
        raise RetrievalError("label list is empty")
    if len(set(labels)) != len(labels):
        raise RetrievalError("duplicate label")
    for label in labels:
        if "\t" in label or "\n" in label:
            raise RetrievalError(f"label {label!r} contains a tab or newline")

    sentences = [template.format(label) for label in labels]
    try:
        vectors = np.asarray(provider.embed_texts(sentences), dtype=np.float64)
    except RetrievalError:
        raise
    except Exception as e:
        raise RetrievalError(f"embedding provider failed: {e}") from e
    if vectors.ndim != 2 or vectors.shape[0] != len(labels):
        raise RetrievalError(
            f"provider returned shape {vectors.shape} for {len(labels)} sentences (dimension mismatch)"
        )
    return ObjectIndex(dim=int(vectors.shape[1]), labels=tuple(labels), embeddings=normalize_rows(vectors))


def plan_frames(video_length: int, frame_count: int = 3) -> FramePlan:
    """Equally spaced frames with both endpoints included; one frame means the middle one."""
    if video_length < 1 or frame_count < 1:
        raise ValueError("video_length and frame_count must be positive")
    if frame_count == 1:
        indices = [(video_length - 1) // 2]
    else:
        step = (video_length - 1) / (frame_count - 1)
        indices = sorted({int(round(i * step)) for i in range(frame_count)})
    return FramePlan(frame_count=frame_count, indices=tuple(indices))


def retrieve(frame_embeddings: Union[np.ndarray, Sequence[Sequence[float]]], index: ObjectIndex,
             top_k: int, aggregation: str = "max") -> RetrievalResult:
    """Rank index labels by frame similarity.

    Each label scores the max (or mean) cosine similarity over frames. Ties keep
    index order and top_k is clipped to the index size.
    """
    if top_k < 1:
        raise RetrievalError("top_k must be positive")
    if aggregation not in AGGREGATIONS:
        raise RetrievalError(f"unknown aggregation {aggregation!r}")
    frames = np.atleast_2d(np.asarray(frame_embeddings, dtype=np.float64))
    if frames.size == 0:
        raise RetrievalError("no frame embeddings")
    if frames.shape[1] != index.dim:
        raise RetrievalError(f"dimension mismatch: frames have {frames.shape[1]}, index has {index.dim}")

    frames = normalize_rows(frames).astype(np.float64)
    similarity = frames @ index.embeddings.astype(np.float64).T
    scores = similarity.max(axis=0) if aggregation == "max" else similarity.mean(axis=0)
    scores = np.clip(scores, -1.0, 1.0)

    order = np.argsort(-scores, kind="stable")[:min(top_k, len(index))]
    return RetrievalResult(ranked=tuple((index.labels[i], float(scores[i])) for i in order))


def _encode_vector(vector: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vector, dtype="<f4").tobytes()).decode("ascii")


def write_embedding_file(path: Union[str, Path], labels: Sequence[str], vectors: np.ndarray) -> Path:
    """Write `dim D count C` then one `label<TAB>base64(float32 LE)` line per vector."""
    matrix = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    if matrix.shape[0] != len(labels):
        raise RetrievalError(f"{len(labels)} labels for {matrix.shape[0]} vectors")
    lines = [f"dim {matrix.shape[1]} count {matrix.shape[0]}"]
    for label, vector in zip(labels, matrix):
        if "\t" in label or "\n" in label:
            raise RetrievalError(f"label {label!r} contains a tab or newline")
        lines.append(f"{label}\t{_encode_vector(vector)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_embedding_file(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """Read and validate an embedding file."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise RetrievalError(f"cannot read embedding file {path}: {e}") from e
    if not lines:
        raise RetrievalError(f"{path}: empty embedding file")

    header = lines[0].split()
    if len(header) != 4 or header[0] != "dim" or header[2] != "count":
        raise RetrievalError(f"{path}: expected header 'dim D count C'")
    try:
        dim, count = int(header[1]), int(header[3])
    except ValueError as e:
        raise RetrievalError(f"{path}: bad header: {e}") from e
    if dim <= 0 or count < 0:
        raise RetrievalError(f"{path}: dim must be positive and count non-negative")

    records = [line for line in lines[1:] if line.strip()]
    if len(records) != count:
        raise RetrievalError(f"{path}: header declares {count} records, found {len(records)}")

    labels: List[str] = []
    matrix = np.zeros((count, dim), dtype=np.float32)
    for row, line in enumerate(records):
        label, sep, payload = line.partition("\t")
        if not sep:
            raise RetrievalError(f"{path}: record {row + 1} has no tab separator")
        try:
            raw = base64.b64decode(payload.strip(), validate=True)
        except binascii.Error as e:
            raise RetrievalError(f"{path}: record {row + 1}: bad base64: {e}") from e
        if len(raw) != 4 * dim:
            raise RetrievalError(f"{path}: record {row + 1} holds {len(raw)} bytes, expected {4 * dim}")
        matrix[row] = np.frombuffer(raw, dtype="<f4")
        labels.append(label)
    return labels, matrix


def save_index(index: ObjectIndex, path: Union[str, Path]) -> Path:
    return write_embedding_file(path, index.labels, index.embeddings)


def load_index(path: Union[str, Path]) -> ObjectIndex:
    """Load an index file, re-checking normalization and label uniqueness."""
    labels, matrix = read_embedding_file(path)
    if not labels:
        raise RetrievalError(f"{path}: index is empty")
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if not np.allclose(norms, 1.0, atol=1e-4):
        raise RetrievalError(f"{path}: index embeddings are not L2-normalized")
    return ObjectIndex(dim=matrix.shape[1], labels=tuple(labels), embeddings=matrix)


class FileEmbeddingProvider:
    """Precomputed vectors looked up by text.

    A photo-template sentence missing from the file falls back to its bare label.
    """

    def __init__(self, path: Union[str, Path], template: str = PHOTO_TEMPLATE):
        labels, matrix = read_embedding_file(path)
        self.path = Path(path)
        self.template = template
        self._vectors: Dict[str, np.ndarray] = dict(zip(labels, matrix))
        self.requests: List[str] = []

    def _lookup(self, text: str) -> np.ndarray:
        self.requests.append(text)
        if text in self._vectors:
            return self._vectors[text]
        prefix, _, suffix = self.template.partition("{}")
        if text.startswith(prefix) and text.endswith(suffix):
            bare = text[len(prefix):len(text) - len(suffix)] if suffix else text[len(prefix):]
            if bare in self._vectors:
                return self._vectors[bare]
        raise RetrievalError(f"{self.path}: no vector for {text!r}")

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._lookup(text) for text in texts])

    def embed_images(self, refs: Sequence[str]) -> np.ndarray:
        return np.stack([self._lookup(ref) for ref in refs])


def resolve_frame_embeddings(refs: Sequence[str], provider: Optional[EmbeddingProvider] = None,
                             base_dir: Optional[Path] = None) -> np.ndarray:
    """Frame references: `file.emb` (every vector), `file.emb#label` (one vector) or an
    image path handed to the provider."""
    rows: List[np.ndarray] = []
    for ref in refs:
        path_part, _, label = ref.partition("#")
        path = Path(path_part)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if path.suffix == ".emb":
            labels, matrix = read_embedding_file(path)
            if label:
                if label not in labels:
                    raise RetrievalError(f"{path}: no frame {label!r}")
                rows.append(matrix[labels.index(label)][None, :])
            else:
                rows.append(matrix)
        else:
            if provider is None:
                raise RetrievalError(f"frame {ref!r} needs an embedding provider")
            rows.append(np.atleast_2d(np.asarray(provider.embed_images([str(path)]), dtype=np.float32)))
    if not rows:
        raise RetrievalError("no frame embeddings")
    return np.concatenate(rows, axis=0)
