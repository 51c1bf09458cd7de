"""
Command-line entry point for the Whisper Prompt Toolkit.

    python -m src.cli.main <subcommand> [options]

Exit codes: 0 success, 1 run errors present, 2 invalid config, manifest or arguments.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from rich.console import Console

from ..core.errors import ConfigError, ManifestError, ToolkitError, UnknownLanguageError, VocabManifestError
from ..core.token_model import Vocabulary, load_vocabulary
from ..core.ui import ui
from ..execution.backend import Backend
from ..execution.backend_factory import BackendFactory
from .commands import ArgumentError, CommandError, CommandRegistry

EXIT_OK = 0
EXIT_RUN_ERRORS = 1
EXIT_INVALID = 2

INVALID_INPUT_ERRORS = (ConfigError, ManifestError, VocabManifestError, UnknownLanguageError, ArgumentError, OSError)


class ToolkitCLI:
    """Holds environment defaults and the shared vocabulary and backends for one invocation."""

    def __init__(self, defaults: Optional[Dict[str, object]] = None, console: Optional[Console] = None):
        self.console = console or ui.console
        self.defaults = {key: value for key, value in (defaults or {}).items() if value is not None}
        self._vocabularies: Dict[str, Vocabulary] = {}
        self._factories: Dict[str, BackendFactory] = {}
        self.command_registry = CommandRegistry(self, self.console)

    def load_vocab(self, path: Optional[str] = None) -> Vocabulary:
        path = path or self.defaults.get("vocab")
        if not path:
            raise ArgumentError("no vocabulary manifest: pass --vocab or set WPT_VOCAB")
        key = str(Path(path).resolve())
        if key not in self._vocabularies:
            self._vocabularies[key] = load_vocabulary(key)
        return self._vocabularies[key]

    def create_backend(self, spec: str, vocab: Vocabulary, serialized: bool = True) -> Backend:
        key = vocab.digest()
        factory = self._factories.get(key)
        if factory is None:
            factory = self._factories[key] = BackendFactory(vocab, base_dir=Path.cwd())
        return factory.create_backend(spec, serialized=serialized)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="wpt", description="Whisper Prompt Toolkit")
        parser.add_argument("--quiet", action="store_true", help="Only print results and errors")
        subparsers = parser.add_subparsers(dest="command", metavar="<command>")
        for command in self.command_registry.list_commands():
            sub = subparsers.add_parser(command.name, help=command.description, description=command.get_help())
            command.configure(sub)
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        parser = self.build_parser()
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return EXIT_INVALID
        ui.quiet = args.quiet
        command = self.command_registry.get_command(args.command)
        try:
            return command.execute(args)
        except INVALID_INPUT_ERRORS as e:
            ui.show_clean_error(e, f"wpt {args.command}")
            return EXIT_INVALID
        except (CommandError, ToolkitError) as e:
            ui.show_clean_error(e, f"wpt {args.command}")
            return EXIT_RUN_ERRORS
        finally:
            self.close()

    def close(self) -> None:
        for factory in self._factories.values():
            factory.close()
        self._factories.clear()


def env_defaults() -> Dict[str, object]:
    workers = os.getenv("WPT_WORKERS")
    return {
        "vocab": os.getenv("WPT_VOCAB"),
        "backend": os.getenv("WPT_BACKEND"),
        "workers": int(workers) if workers and workers.isdigit() else None,
        "output_dir": os.getenv("WPT_OUTPUT_DIR"),
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    from dotenv import load_dotenv

    # Load environment variables from .env file
    load_dotenv()
    return ToolkitCLI(env_defaults()).run(argv)


if __name__ == "__main__":
    sys.exit(main())
