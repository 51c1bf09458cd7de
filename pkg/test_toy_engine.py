"""
Protocol v1 conformance of the toy engine, in process and over a subprocess.
"""

import json
import shlex
import socket
import sys
import threading
import time

import numpy as np
import pytest

from src.core.decoder import Decoder
from src.core.errors import BackendError
from src.core.models import DecodeConfig, PromptSequence
from src.core.token_model import serialize_prompt
from src.execution.external_backend import ExternalBackend, WireClient, open_transport
from src.execution.toy_engine import PROTOCOL_VERSION, ToyEngine, main, make_tcp_server

from conftest import ROOT, TOY_VOCAB

EN = PromptSequence(languages=("en",))


class LoopbackTransport:
    """Hands each request line straight to an in-process engine."""

    def __init__(self, engine):
        self.engine = engine
        self.pending = []
        self.closed = False

    def send(self, line):
        self.pending.append(json.dumps(self.engine.handle_line(line)))

    def receive(self, timeout):
        return self.pending.pop(0)

    def close(self):
        self.closed = True


@pytest.fixture
def engine(vocab):
    return ToyEngine(vocab, dim=8)


@pytest.fixture
def loopback(engine):
    return ExternalBackend("loopback", client=WireClient(LoopbackTransport(engine)))


def request(engine, **fields):
    return engine.handle_line(json.dumps({"v": PROTOCOL_VERSION, **fields}))


def test_info(engine, vocab):
    response = request(engine, op="info")
    assert response == {
        "v": 1,
        "vocab_size": vocab.vocab_size,
        "languages": vocab.registry.codes,
        "n_ctx": 448,
        "concurrent_safe": False,
    }


def test_step_echoes_audio_stem(engine, vocab):
    context = serialize_prompt(EN, vocab.specials)
    target = vocab.tokenizer.encode("hello")
    logits = np.array(request(engine, op="step", audio="clips/hello.wav", context=context)["logits"])
    assert logits.shape == (vocab.vocab_size,)
    assert int(np.argmax(logits)) == target[0]

    done = request(engine, op="step", audio="clips/hello.wav", context=context + target)["logits"]
    assert int(np.argmax(done)) == vocab.specials.eot


def test_lid_step_is_uniform(engine, vocab):
    logits = request(engine, op="step", audio="a.wav", context=[vocab.specials.sot])["logits"]
    assert not any(logits)


def test_embed_is_deterministic(engine):
    first = request(engine, op="embed", texts=["This is a photo of a dog", "cat"])["embeddings"]
    second = request(engine, op="embed", images=["This is a photo of a dog"])["embeddings"]
    assert len(first) == 2 and len(first[0]) == 8
    assert first[0] == second[0]
    assert first[0] != first[1]


@pytest.mark.parametrize("line", [
    "not json",
    "[1, 2]",
    '{"v": 2, "op": "info"}',
    '{"op": "info"}',
    '{"v": 1, "op": "dance"}',
    '{"v": 1, "op": "step", "context": [1]}',
    '{"v": 1, "op": "step", "audio": "a.wav", "context": "1 2"}',
    '{"v": 1, "op": "step", "audio": "a.wav", "context": [true]}',
    '{"v": 1, "op": "step", "audio": "a.wav", "context": [99999]}',
    '{"v": 1, "op": "embed", "texts": "dog"}',
    '{"v": 1, "op": "embed"}',
])
def test_malformed_requests_get_error_responses(engine, line):
    response = engine.handle_line(line)
    assert response["v"] == 1
    assert "error" in response
    # the engine keeps serving
    assert "vocab_size" in request(engine, op="info")


def test_shutdown(engine):
    assert request(engine, op="shutdown") == {"v": 1, "ok": True}
    assert engine.stopped


def test_decode_through_wire_client(loopback, vocab):
    decoder = Decoder(loopback, vocab)
    result = decoder.decode("audio/hello.wav", EN, DecodeConfig(max_new_tokens=20))
    assert result.text.strip() == "hello"
    lid = decoder.run_lid("audio/hello.wav", ["en", "zh"])
    assert lid.probs == pytest.approx({"en": 0.5, "zh": 0.5})


def test_external_backend_embed(loopback):
    vectors = loopback.embed("texts", ["dog", "cat", "bird"])
    assert vectors.shape == (3, 8)
    assert vectors.dtype == np.float32


def test_engine_errors_become_backend_errors(loopback):
    with pytest.raises(BackendError, match="engine error"):
        loopback.client.request("dance")
    with pytest.raises(BackendError):
        loopback.step("", [1])


def test_client_rejects_wrong_protocol_version():
    class OldEngine:
        def handle_line(self, line):
            return {"v": 0, "logits": []}

    client = WireClient(LoopbackTransport(OldEngine()))
    with pytest.raises(BackendError, match="protocol"):
        client.request("info")


@pytest.mark.parametrize("target", ["ftp:host", "exec:", "tcp:localhost:port"])
def test_open_transport_rejects_bad_targets(target):
    with pytest.raises(BackendError):
        open_transport(target)


def test_engine_main_rejects_missing_vocab(tmp_path):
    assert main(["--vocab", str(tmp_path / "absent.txt")]) == 2


def test_subprocess_engine(monkeypatch, vocab):
    monkeypatch.chdir(ROOT)
    command = " ".join(shlex.quote(part) for part in
                       [sys.executable, "-m", "src.execution.toy_engine", "--vocab", str(TOY_VOCAB)])
    backend = ExternalBackend(f"exec:{command}", timeout=30)
    try:
        info = backend.info()
        assert info.vocab_size == vocab.vocab_size
        assert not info.concurrent_safe
        result = Decoder(backend, vocab).decode("audio/hello.wav", EN, DecodeConfig(max_new_tokens=20))
        assert result.text.strip() == "hello"
        backend.client.request("shutdown")
        with pytest.raises(BackendError):
            backend.step("audio/hello.wav", [vocab.specials.sot])
    finally:
        backend.close()


class StallingTransport(LoopbackTransport):
    """Times out on the first receive while the engine's reply stays queued."""

    def __init__(self, engine):
        super().__init__(engine)
        self.stalled = False

    def receive(self, timeout):
        if not self.stalled:
            self.stalled = True
            raise BackendError(f"engine did not answer within {timeout:g}s")
        return super().receive(timeout)


def test_wire_client_retires_connection_after_timeout(engine):
    transport = StallingTransport(engine)
    client = WireClient(transport, timeout=1)
    with pytest.raises(BackendError, match="within"):
        client.request("info")
    assert transport.closed
    assert transport.pending
    # the queued reply to the first request must never answer the second
    with pytest.raises(BackendError, match="earlier failure"):
        client.request("info")


SLOW_ENGINE = """\
import json
import sys
import time

for number, line in enumerate(sys.stdin):
    if number == 0:
        time.sleep(1.5)
    request = json.loads(line)
    sys.stdout.write(json.dumps({"v": 1, "logits": [float(request["context"][0])]}) + "\\n")
    sys.stdout.flush()
"""


def test_late_reply_is_not_read_by_the_next_request(tmp_path):
    script = tmp_path / "slow_engine.py"
    script.write_text(SLOW_ENGINE, encoding="utf-8")
    command = " ".join(shlex.quote(part) for part in [sys.executable, str(script)])
    backend = ExternalBackend(f"exec:{command}", timeout=0.5)
    try:
        with pytest.raises(BackendError, match="within"):
            backend.client.request("step", audio="a.wav", context=[1])
        time.sleep(1.5)
        with pytest.raises(BackendError, match="earlier failure"):
            backend.client.request("step", audio="a.wav", context=[2])
    finally:
        backend.close()


@pytest.fixture
def tcp_server(engine):
    server = make_tcp_server(engine, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, thread
    if thread.is_alive():
        server.shutdown()
    server.server_close()


def test_tcp_engine_conformance(tcp_server, vocab):
    server, thread = tcp_server
    port = server.server_address[1]
    backend = ExternalBackend(f"tcp:127.0.0.1:{port}", timeout=10)
    try:
        assert backend.info().vocab_size == vocab.vocab_size
        result = Decoder(backend, vocab).decode("audio/hello.wav", EN, DecodeConfig(max_new_tokens=20))
        assert result.text.strip() == "hello"

        with socket.create_connection(("127.0.0.1", port), timeout=10) as raw:
            raw.sendall(b"not json\n")
            reply = json.loads(raw.makefile("r", encoding="utf-8").readline())
        assert reply["v"] == 1 and "error" in reply

        with pytest.raises(BackendError, match="engine error"):
            backend.client.request("dance")
        # an error response leaves the connection usable
        assert backend.client.request("info")["vocab_size"] == vocab.vocab_size

        assert backend.client.request("shutdown") == {"v": 1, "ok": True}
        thread.join(timeout=5)
        assert not thread.is_alive()
    finally:
        backend.close()
