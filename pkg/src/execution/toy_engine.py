"""
Toy echo engine speaking protocol v1, for wiring checks without a model.

    python -m src.execution.toy_engine --vocab data/vocab/toy_vocab.txt
    python -m src.execution.toy_engine --vocab data/vocab/toy_vocab.txt --tcp 127.0.0.1:8765

`step` echoes the audio file's stem token by token and then emits eot; the
LID step is uniform. `embed` returns deterministic hash vectors. Malformed
requests get {"v":1,"error":...} and the engine keeps serving.
"""

import argparse
import hashlib
import json
import socketserver
import sys
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from ..core.errors import ToolkitError
from ..core.token_model import DEFAULT_N_CTX, Vocabulary, load_vocabulary
from .backend import split_context

PROTOCOL_VERSION = 1


class ToyEngine:
    """Request handling, independent of the transport."""

    def __init__(self, vocab: Vocabulary, dim: int = 16, n_ctx: int = DEFAULT_N_CTX):
        self.vocab = vocab
        self.dim = dim
        self.n_ctx = n_ctx
        self.stopped = False

    def _error(self, message: str) -> Dict[str, Any]:
        return {"v": PROTOCOL_VERSION, "error": message}

    def handle_line(self, line: str) -> Dict[str, Any]:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as e:
            return self._error(f"invalid JSON: {e.msg}")
        if not isinstance(request, dict):
            return self._error("request must be a JSON object")
        if request.get("v") != PROTOCOL_VERSION:
            return self._error(f"unsupported protocol version {request.get('v')!r}")
        op = request.get("op")
        try:
            if op == "info":
                return self._info()
            if op == "step":
                return self._step(request)
            if op == "embed":
                return self._embed(request)
            if op == "shutdown":
                self.stopped = True
                return {"v": PROTOCOL_VERSION, "ok": True}
        except (ToolkitError, ValueError, TypeError) as e:
            return self._error(str(e))
        return self._error(f"unknown op {op!r}")

    def _info(self) -> Dict[str, Any]:
        return {
            "v": PROTOCOL_VERSION,
            "vocab_size": self.vocab.vocab_size,
            "languages": self.vocab.registry.codes,
            "n_ctx": self.n_ctx,
            "concurrent_safe": False,
        }

    def _step(self, request: Dict[str, Any]) -> Dict[str, Any]:
        audio = request.get("audio")
        context = request.get("context")
        if not isinstance(audio, str) or not audio:
            return self._error("step needs a non-empty 'audio' string")
        if not isinstance(context, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in context):
            return self._error("step needs 'context' as a list of token ids")
        if any(not 0 <= token < self.vocab.vocab_size for token in context):
            return self._error("context holds a token id outside the vocabulary")

        logits = np.zeros(self.vocab.vocab_size, dtype=np.float32)
        split = split_context(context, self.vocab.specials)
        if split is not None:
            generated = split[3]
            try:
                target = self.vocab.tokenizer.encode(Path(audio).stem)
            except ValueError:
                target = []
            if generated == target[:len(generated)] and len(generated) < len(target):
                logits[target[len(generated)]] = 1.0
            else:
                logits[self.vocab.specials.eot] = 1.0
        return {"v": PROTOCOL_VERSION, "logits": [float(x) for x in logits]}

    def _hash_vector(self, text: str) -> List[float]:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        return [float(x) for x in np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)]

    def _embed(self, request: Dict[str, Any]) -> Dict[str, Any]:
        items = request.get("texts", request.get("images"))
        if not isinstance(items, list) or not all(isinstance(item, str) for item in items):
            return self._error("embed needs 'texts' or 'images' as a list of strings")
        return {"v": PROTOCOL_VERSION, "embeddings": [self._hash_vector(item) for item in items]}


def serve_stdio(engine: ToyEngine) -> int:
    for line in sys.stdin:
        if not line.strip():
            continue
        sys.stdout.write(json.dumps(engine.handle_line(line), ensure_ascii=False) + "\n")
        sys.stdout.flush()
        if engine.stopped:
            break
    return 0


class _EngineServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def make_tcp_server(engine: ToyEngine, host: str, port: int) -> socketserver.ThreadingTCPServer:
    """A threaded server whose `shutdown` request stops `serve_forever`."""
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                response = engine.handle_line(line)
                self.wfile.write((json.dumps(response, ensure_ascii=False) + "\n").encode("utf-8"))
                self.wfile.flush()
                if engine.stopped:
                    # handler threads are never the serving thread
                    self.server.shutdown()
                    break

    return _EngineServer((host, port), Handler)


def serve_tcp(engine: ToyEngine, host: str, port: int) -> int:
    with make_tcp_server(engine, host, port) as server:
        sys.stderr.write(f"toy engine listening on {host}:{server.server_address[1]}\n")
        sys.stderr.flush()
        server.serve_forever()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Toy echo engine for protocol v1")
    parser.add_argument("--vocab", default="data/vocab/toy_vocab.txt", help="Vocabulary manifest")
    parser.add_argument("--dim", type=int, default=16, help="Embedding dimension")
    parser.add_argument("--n-ctx", type=int, default=DEFAULT_N_CTX, help="Reported context length")
    parser.add_argument("--tcp", metavar="HOST:PORT", help="Serve TCP instead of stdio")
    args = parser.parse_args(argv)

    try:
        vocab = load_vocabulary(args.vocab, args.n_ctx)
    except ToolkitError as e:
        sys.stderr.write(f"toy engine: {e}\n")
        return 2
    engine = ToyEngine(vocab, dim=args.dim, n_ctx=args.n_ctx)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        return serve_tcp(engine, host or "127.0.0.1", int(port))
    return serve_stdio(engine)


if __name__ == "__main__":
    sys.exit(main())
