import argparse
from abc import abstractmethod
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console

from ...core.errors import ConfigError
from ...core.run_config import RunConfig, RunConfigManager
from ...core.token_model import Vocabulary


class CommandError(Exception):
    """Base exception for command execution errors."""
    pass


class ArgumentError(CommandError):
    """Exception raised when command arguments are invalid."""
    pass


class BaseCommand:
    def __init__(self, cli, console: Console):
        self.cli = cli
        self.console = console

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @property
    @abstractmethod
    def description(self) -> str:
        pass

    @property
    def usage(self) -> str:
        return f"wpt {self.name} [options]"

    def configure(self, parser: argparse.ArgumentParser) -> None:
        """Add the command's options to its subparser."""
        pass

    @abstractmethod
    def execute(self, args: argparse.Namespace) -> int:
        """
        Execute the command with parsed arguments.

        Args:
            args: Parsed command-line namespace

        Returns:
            int: Exit code (0 success, 1 run errors present)

        Raises:
            CommandError: If command execution fails
            ArgumentError: If arguments are invalid
        """
        pass

    def get_help(self) -> str:
        return self.description

    def validate_args(self, args: Sequence[Any], expected_count: Optional[int] = None,
                      min_count: Optional[int] = None, max_count: Optional[int] = None,
                      option: str = "arguments") -> None:
        """
        Validate the number of values given to a list option.

        Raises:
            ArgumentError: If validation fails
        """
        arg_count = len(args)

        if expected_count is not None and arg_count != expected_count:
            raise ArgumentError(
                f"Command '{self.name}' expects {expected_count} value(s) for {option}, "
                f"but {arg_count} were provided.\nUsage: {self.usage}"
            )

        if min_count is not None and arg_count < min_count:
            raise ArgumentError(
                f"Command '{self.name}' expects at least {min_count} value(s) for {option}, "
                f"but {arg_count} were provided.\nUsage: {self.usage}"
            )

        if max_count is not None and arg_count > max_count:
            raise ArgumentError(
                f"Command '{self.name}' expects at most {max_count} value(s) for {option}, "
                f"but {arg_count} were provided.\nUsage: {self.usage}"
            )

    # shared option groups

    @staticmethod
    def add_vocab_option(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--vocab", help="Vocabulary manifest (default: $WPT_VOCAB)")

    @staticmethod
    def add_backend_option(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--backend", help="mock:<script.yaml> | exec:<command> | tcp:<host>:<port> "
                                              "(default: $WPT_BACKEND)")

    @staticmethod
    def add_decode_options(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--strategy", choices=["greedy", "beam"], help="Decoding strategy")
        parser.add_argument("--beam-width", type=int, help="Beam width for beam search")
        parser.add_argument("--max-new-tokens", type=int, help="Generation limit")

    def vocab(self, args: argparse.Namespace) -> Vocabulary:
        return self.cli.load_vocab(getattr(args, "vocab", None))

    def backend_spec(self, args: argparse.Namespace) -> str:
        spec = getattr(args, "backend", None) or self.cli.defaults.get("backend")
        if not spec:
            raise ArgumentError(f"Command '{self.name}' needs --backend (or WPT_BACKEND)")
        return spec

    def load_run_config(self, args: argparse.Namespace) -> RunConfig:
        """Config file, then CLI flags on top; environment defaults only fill a missing file."""
        manager = RunConfigManager(args.config)
        overrides: Dict[str, Any] = {
            "backend": args.backend,
            "vocab": args.vocab,
            "policy": args.policy,
            "language": args.language,
            "workers": args.workers,
            "output_dir": args.output_dir,
            "cache_dir": args.cache_dir,
        }
        if manager.config is None:
            for key, value in self.cli.defaults.items():
                if overrides.get(key) is None:
                    overrides[key] = value
        elif manager.config.vocab is None and overrides["vocab"] is None:
            overrides["vocab"] = self.cli.defaults.get("vocab")

        decode = {
            "strategy": getattr(args, "strategy", None),
            "beam_width": getattr(args, "beam_width", None),
            "max_new_tokens": getattr(args, "max_new_tokens", None),
        }
        if any(value is not None for value in decode.values()):
            current = manager.config.decode.model_dump() if manager.config else {}
            current.update({key: value for key, value in decode.items() if value is not None})
            overrides["decode"] = current

        cfg = manager.update_config(**overrides)
        if cfg.vocab is None:
            raise ConfigError("run config has no vocab; set it in the config, pass --vocab or set WPT_VOCAB")
        return cfg

    @staticmethod
    def add_run_options(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--manifest", required=True, help="Dataset manifest (JSON lines)")
        parser.add_argument("--config", help="Run config (YAML)")
        BaseCommand.add_vocab_option(parser)
        BaseCommand.add_backend_option(parser)
        parser.add_argument("--policy", help="Prompt policy override")
        parser.add_argument("--language", help="Language for the 'fixed' policy")
        parser.add_argument("--workers", type=int, help="Record workers (default: $WPT_WORKERS)")
        parser.add_argument("--output-dir", help="Report directory (default: $WPT_OUTPUT_DIR)")
        parser.add_argument("--cache-dir", help="Hypothesis cache directory (default: <output-dir>/cache)")
        parser.add_argument("--no-cache", action="store_true", help="Keep the hypothesis cache in memory only")
        BaseCommand.add_decode_options(parser)

    @staticmethod
    def split_list(values: Optional[List[str]]) -> List[str]:
        """Accept both `--lang zh en` and `--lang zh,en`."""
        items: List[str] = []
        for value in values or []:
            items.extend(part.strip() for part in value.split(",") if part.strip())
        return items
