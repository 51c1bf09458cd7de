from pathlib import Path
from typing import Any, Dict

from ...core.harness import EvalHarness, write_report
from ...core.hypothesis_cache import HypothesisCache
from ...core.run_config import RunConfig, load_manifest
from ...core.ui import ui
from ...execution.backend_factory import create_embedding_provider
from .base import BaseCommand

# fields that cannot change a report's content
RUN_INFO_EXCLUDE = {"workers", "output_dir", "cache_dir"}


class EvaluateCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "evaluate"

    @property
    def description(self) -> str:
        return "Runs a manifest through prompting, decoding and scoring and writes report.json / report.md."

    @property
    def usage(self) -> str:
        return "wpt evaluate --manifest data.jsonl --config run.yaml [--workers 4] [--output-dir runs/x]"

    def get_help(self) -> str:
        return (f"{self.description}\n\nExit code 1 means at least one record failed; "
                "the failures are listed in the report.")

    def configure(self, parser):
        self.add_run_options(parser)

    def prepare(self, args):
        """Config, manifest, harness and the run description shared by evaluate and sweep."""
        cfg = self.load_run_config(args)
        manifest_path = Path(args.manifest).resolve()
        records = load_manifest(manifest_path)
        vocab = self.cli.load_vocab(cfg.vocab)
        backend = self.cli.create_backend(cfg.backend, vocab, serialized=False)

        cache_root = None if args.no_cache else Path(cfg.cache_dir or Path(cfg.output_dir) / "cache")
        provider = create_embedding_provider(cfg.retrieval.embedder) if cfg.retrieval.embedder else None
        harness = EvalHarness(vocab, cfg, backend, HypothesisCache(cache_root), manifest_dir=manifest_path.parent,
                              embedding_provider=provider, show_progress=not ui.quiet)
        return cfg, records, harness, self.run_info(cfg, manifest_path, harness)

    @staticmethod
    def run_info(cfg: RunConfig, manifest_path: Path, harness: EvalHarness) -> Dict[str, Any]:
        return {
            "manifest": str(manifest_path),
            "config": cfg.model_dump(mode="json", exclude=RUN_INFO_EXCLUDE),
            "backend": harness.backend.digest(),
            "vocab": harness.vocab.digest(),
        }

    @staticmethod
    def close_provider(harness: EvalHarness) -> None:
        if harness.embedding_provider is not None and hasattr(harness.embedding_provider, "close"):
            harness.embedding_provider.close()

    def execute(self, args) -> int:
        cfg, records, harness, run_info = self.prepare(args)
        try:
            report = harness.run_eval(records)
        finally:
            self.close_provider(harness)

        json_path, md_path = write_report(report, cfg.output_dir, run_info)
        ui.show_report(report)
        ui.info(f"cache: {harness.cache.hits} hits, {harness.cache.writes} writes")
        ui.success(f"Wrote {json_path} and {md_path}")
        return 1 if report.has_failures else 0
