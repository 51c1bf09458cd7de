from pathlib import Path

from ...core.ui import ui
from ...core.visual_retrieval import PHOTO_TEMPLATE, build_index, load_index, save_index
from ...execution.backend_factory import create_embedding_provider
from .base import ArgumentError, BaseCommand


class EmbedIndexCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "embed-index"

    @property
    def description(self) -> str:
        return "Embeds an object label list into a normalized index file, or validates an existing one."

    @property
    def usage(self) -> str:
        return "wpt embed-index --labels labels.txt --embedder exec:<engine> --output index.emb | --check index.emb"

    def configure(self, parser):
        parser.add_argument("--labels", help="Object labels, one per line")
        parser.add_argument("--embedder", help="file:<vectors.emb> | exec:<command> | tcp:<host>:<port>")
        parser.add_argument("--template", default=PHOTO_TEMPLATE, help="Sentence template for each label")
        parser.add_argument("--output", help="Index file to write")
        parser.add_argument("--check", help="Validate an existing index file instead")

    def execute(self, args) -> int:
        if args.check:
            index = load_index(args.check)
            ui.success(f"{args.check}: {len(index)} labels, dim {index.dim}, normalized")
            return 0
        if not (args.labels and args.embedder and args.output):
            raise ArgumentError(f"--labels, --embedder and --output are required\nUsage: {self.usage}")
        if "{}" not in args.template:
            raise ArgumentError("--template must contain '{}'")

        labels = [line.strip() for line in Path(args.labels).read_text(encoding="utf-8").splitlines()]
        labels = [label for label in labels if label]
        provider = create_embedding_provider(args.embedder)
        try:
            index = build_index(labels, provider, args.template)
        finally:
            if hasattr(provider, "close"):
                provider.close()
        path = save_index(index, args.output)
        load_index(path)
        ui.success(f"Wrote {path}: {len(index)} labels, dim {index.dim}")
        return 0
