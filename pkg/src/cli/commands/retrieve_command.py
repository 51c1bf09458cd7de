from ...core.models import VisualPromptConfig
from ...core.ui import ui
from ...core.visual_retrieval import AGGREGATIONS, load_index, plan_frames, resolve_frame_embeddings, retrieve
from ...execution.backend_factory import create_embedding_provider
from .base import BaseCommand


class RetrieveCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "retrieve"

    @property
    def description(self) -> str:
        return "Ranks index labels against frame embeddings and prints the visual prompt text."

    @property
    def usage(self) -> str:
        return "wpt retrieve --index objects.emb --frames clip.emb [--top-k 50] [--aggregation max]"

    def configure(self, parser):
        parser.add_argument("--index", required=True, help="Object index file")
        parser.add_argument("--frames", nargs="+", required=True,
                            help="Frame references: file.emb, file.emb#label or image paths")
        parser.add_argument("--embedder", help="Embedder for image frames (file:, exec: or tcp:)")
        parser.add_argument("--top-k", type=int, default=VisualPromptConfig().top_k)
        parser.add_argument("--aggregation", choices=list(AGGREGATIONS), default="max")
        parser.add_argument("--frame-count", type=int, default=3, help="Frames sampled from longer sequences")

    def execute(self, args) -> int:
        index = load_index(args.index)
        provider = create_embedding_provider(args.embedder) if args.embedder else None
        try:
            frames = resolve_frame_embeddings(args.frames, provider)
        finally:
            if provider is not None and hasattr(provider, "close"):
                provider.close()
        if len(frames) > args.frame_count:
            frames = frames[list(plan_frames(len(frames), args.frame_count).indices)]
        result = retrieve(frames, index, args.top_k, args.aggregation)

        if not ui.quiet:
            ui.show_retrieval(result.ranked)
        self.console.print(VisualPromptConfig().separator.join(result.labels), markup=False, highlight=False)
        return 0
