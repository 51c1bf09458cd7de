"""
Shared pytest fixtures: the toy vocabulary, scripted backends and demo paths.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).parent
sys.path.insert(0, str(ROOT))

from src.core.token_model import load_vocabulary  # noqa: E402
from src.core.ui import ui  # noqa: E402
from src.execution.mock_backend import MockBackend  # noqa: E402

TOY_VOCAB = ROOT / "data" / "vocab" / "toy_vocab.txt"
DEMO_DIR = ROOT / "data" / "demo"


@pytest.fixture(scope="session")
def vocab():
    return load_vocabulary(TOY_VOCAB)


@pytest.fixture
def make_mock(vocab):
    """Factory for MockBackend instances from a script dict."""
    def factory(script=None):
        return MockBackend(vocab, script)
    return factory


@pytest.fixture
def demo_dir():
    return DEMO_DIR


@pytest.fixture(autouse=True)
def quiet_ui():
    ui.quiet = True
    yield
    ui.quiet = False
