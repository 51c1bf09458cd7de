"""
Out-of-process backend speaking protocol v1: newline-delimited UTF-8 JSON over a
subprocess's stdio or a TCP connection, one request in flight per connection.

Requests:  {"v":1,"op":"info"}
           {"v":1,"op":"step","audio":"<path>","context":[ids]}
           {"v":1,"op":"embed","texts":[...]}  or  {"v":1,"op":"embed","images":[...]}
Responses: {"v":1,"vocab_size":N,"languages":[...],"n_ctx":448,"concurrent_safe":false}
           {"v":1,"logits":[floats]}
           {"v":1,"embeddings":[[floats], ...]}
           {"v":1,"error":"..."}
"""

import json
import shlex
import socket
import subprocess
import threading
import time
from collections import deque
from queue import Empty, Queue
from typing import Any, Deque, Dict, Optional, Sequence

import numpy as np
import psutil
from pydantic import ValidationError

from ..core.errors import BackendError
from .backend import Backend, BackendInfo, check_logits

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 60.0


class StdioTransport:
    """Line transport over a child process's stdin/stdout."""

    def __init__(self, command: str):
        self.command = command
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise BackendError(f"cannot start engine {command!r}: {e}") from e
        self._lines: Queue = Queue()
        self._stderr: Deque[str] = deque(maxlen=20)
        threading.Thread(target=self._read_stdout, daemon=True).start()
        threading.Thread(target=self._read_stderr, daemon=True).start()

    def _read_stdout(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read_stderr(self) -> None:
        for line in self._proc.stderr:
            if line.strip():
                self._stderr.append(line.strip())

    def _describe_exit(self) -> str:
        code = self._proc.poll()
        stderr = " | ".join(self._stderr) or "<no stderr>"
        return f"engine exited ({code}); stderr: {stderr}"

    def send(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise BackendError(self._describe_exit())
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BackendError(f"cannot write to engine: {e}; {self._describe_exit()}") from e

    def receive(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except Empty:
            raise BackendError(f"engine did not answer within {timeout:g}s") from None
        if line is None:
            raise BackendError(f"engine closed its output; {self._describe_exit()}")
        return line

    def close(self) -> None:
        if self._proc.poll() is not None:
            return
        try:
            parent = psutil.Process(self._proc.pid)
            procs = parent.children(recursive=True) + [parent]
        except psutil.NoSuchProcess:
            return
        for proc in procs:
            try:
                proc.terminate()
            except psutil.NoSuchProcess:
                pass
        _, alive = psutil.wait_procs(procs, timeout=3)
        for proc in alive:
            try:
                proc.kill()
            except psutil.NoSuchProcess:
                pass


class TcpTransport:
    """Line transport over a TCP connection to a running engine."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise BackendError(f"cannot connect to engine at {host}:{port}: {e}") from e
        self.timeout = timeout
        self._buffer = b""

    def send(self, line: str) -> None:
        self._sock.settimeout(self.timeout)
        try:
            self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as e:
            raise BackendError(f"cannot write to engine: {e}") from e

    def receive(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendError(f"engine did not answer within {timeout:g}s")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise BackendError(f"engine did not answer within {timeout:g}s") from None
            except OSError as e:
                raise BackendError(f"cannot read from engine: {e}") from e
            if not chunk:
                raise BackendError("engine closed the connection")
            self._buffer += chunk
        line, _, self._buffer = self._buffer.partition(b"\n")
        return line.decode("utf-8", errors="replace")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class WireClient:
    """Request/response client for protocol v1.

    Replies carry no request id, so once a send or receive fails (a timeout
    included) a late reply could be read as the answer to the next request.
    The connection is closed instead and every later request fails.
    """

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT):
        self.transport = transport
        self.timeout = timeout
        self.broken: Optional[str] = None
        self._lock = threading.Lock()

    def _exchange(self, line: str) -> str:
        if self.broken is not None:
            raise BackendError(f"engine connection closed after an earlier failure: {self.broken}")
        try:
            self.transport.send(line)
            return self.transport.receive(self.timeout)
        except BackendError as e:
            self.broken = str(e)
            self.transport.close()
            raise

    def request(self, op: str, **fields: Any) -> Dict[str, Any]:
        message = {"v": PROTOCOL_VERSION, "op": op, **fields}
        with self._lock:
            line = self._exchange(json.dumps(message, ensure_ascii=False))
        try:
            response = json.loads(line)
        except json.JSONDecodeError as e:
            raise BackendError(f"engine sent invalid JSON for {op!r}: {e}") from e
        if not isinstance(response, dict):
            raise BackendError(f"engine sent a non-object response for {op!r}")
        if response.get("v") != PROTOCOL_VERSION:
            raise BackendError(f"engine speaks protocol {response.get('v')!r}, expected {PROTOCOL_VERSION}")
        if "error" in response:
            raise BackendError(f"engine error on {op!r}: {response['error']}")
        return response

    def close(self) -> None:
        self.transport.close()


def open_transport(target: str, timeout: float = DEFAULT_TIMEOUT):
    """`exec:<command>` starts a subprocess, `tcp:<host>:<port>` connects to one."""
    kind, _, rest = target.partition(":")
    if kind == "exec" and rest.strip():
        return StdioTransport(rest.strip())
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        try:
            return TcpTransport(host or "127.0.0.1", int(port), timeout)
        except ValueError:
            raise BackendError(f"bad tcp address {rest!r}, expected host:port") from None
    raise BackendError(f"unknown engine target {target!r}")


class ExternalBackend(Backend):
    """Backend that forwards every step to an engine process."""

    def __init__(self, target: str, timeout: float = DEFAULT_TIMEOUT, client: Optional[WireClient] = None):
        self.target = target
        self.client = client or WireClient(open_transport(target, timeout), timeout)
        self._info: Optional[BackendInfo] = None

    def info(self) -> BackendInfo:
        if self._info is None:
            response = self.client.request("info")
            response.pop("v", None)
            try:
                self._info = BackendInfo.model_validate(response)
            except ValidationError as e:
                raise BackendError(f"engine sent an invalid info response: {e}") from e
        return self._info

    def step(self, audio: str, context: Sequence[int]) -> np.ndarray:
        response = self.client.request("step", audio=audio, context=[int(token) for token in context])
        if "logits" not in response:
            raise BackendError("engine step response has no logits")
        return check_logits(response["logits"], self.info().vocab_size)

    def embed(self, kind: str, items: Sequence[str]) -> np.ndarray:
        response = self.client.request("embed", **{kind: list(items)})
        try:
            vectors = np.asarray(response["embeddings"], dtype=np.float32)
        except (KeyError, TypeError, ValueError) as e:
            raise BackendError(f"engine sent an invalid embed response: {e}") from e
        if vectors.ndim != 2 or vectors.shape[0] != len(items):
            raise BackendError(f"engine returned {vectors.shape} embeddings for {len(items)} inputs")
        return vectors

    def digest(self) -> str:
        return f"external:{self.target}"

    def close(self) -> None:
        self.client.close()


class CommandEmbeddingProvider:
    """Embedding provider backed by an engine's `embed` op."""

    def __init__(self, target: str, timeout: float = DEFAULT_TIMEOUT):
        self.backend = ExternalBackend(target, timeout)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self.backend.embed("texts", texts)

    def embed_images(self, refs: Sequence[str]) -> np.ndarray:
        return self.backend.embed("images", refs)

    def close(self) -> None:
        self.backend.close()
