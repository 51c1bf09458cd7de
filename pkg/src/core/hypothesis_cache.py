import hashlib
import json
import os
import tempfile
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional, Union

NAMESPACES = ("hyp", "lid")


def cache_key(payload: Dict[str, Any]) -> str:
    """sha256 over the canonical JSON (sorted keys, no whitespace) of `payload`."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class HypothesisCache:
    """Disk-backed cache of decode results and LID results with an in-memory LRU front.

    Entries live at <root>/<namespace>/<key[:2]>/<key>.json and never expire;
    a key already covers everything that influences the value.
    """

    def __init__(self, root: Optional[Union[str, Path]] = None, max_size: int = 2048):
        self.root = Path(root) if root else None
        self.cache: "OrderedDict[str, Dict[str, Any]]" = OrderedDict()
        self.max_size = max_size
        self.hits = 0
        self.misses = 0
        self.writes = 0
        self._lock = threading.Lock()

    def _path(self, namespace: str, key: str) -> Path:
        return self.root / namespace / key[:2] / f"{key}.json"

    def _remember(self, slot: str, value: Dict[str, Any]) -> None:
        if slot in self.cache:
            self.cache.pop(slot)
        elif len(self.cache) >= self.max_size:
            self.cache.popitem(last=False)  # remove oldest
        self.cache[slot] = value

    def get(self, namespace: str, key: str) -> Optional[Dict[str, Any]]:
        if namespace not in NAMESPACES:
            raise ValueError(f"unknown cache namespace {namespace!r}")
        slot = f"{namespace}/{key}"
        with self._lock:
            if slot in self.cache:
                value = self.cache.pop(slot)
                # re-insert to mark as most recently used
                self.cache[slot] = value
                self.hits += 1
                return value
        value = None
        if self.root is not None:
            path = self._path(namespace, key)
            try:
                value = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                value = None
        with self._lock:
            if value is None:
                self.misses += 1
                return None
            self._remember(slot, value)
            self.hits += 1
            return value

    def set(self, namespace: str, key: str, value: Dict[str, Any]) -> None:
        if namespace not in NAMESPACES:
            raise ValueError(f"unknown cache namespace {namespace!r}")
        with self._lock:
            self._remember(f"{namespace}/{key}", value)
            self.writes += 1
        if self.root is None:
            return
        path = self._path(namespace, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(value, f, sort_keys=True, ensure_ascii=False)
        os.replace(tmp, path)

    def disk_entries(self, namespace: str = "hyp") -> int:
        if self.root is None:
            return 0
        return sum(1 for _ in (self.root / namespace).glob("*/*.json"))
