from ...core.models import PromptSequence, Task, VisualPromptConfig
from ...core.prompt_builder import build_default_prompt, build_visual_prompt
from ...core.token_model import format_tokens, serialize_prompt
from ...core.ui import ui
from .base import ArgumentError, BaseCommand


class BuildPromptCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "build-prompt"

    @property
    def description(self) -> str:
        return "Serializes a decoder prompt and shows its tokens."

    @property
    def usage(self) -> str:
        return "wpt build-prompt --lang zh en [--task asr|st] [--previous-text TEXT | --objects a,b,c]"

    def configure(self, parser):
        self.add_vocab_option(parser)
        parser.add_argument("--lang", nargs="+", required=True, help="One or two language codes")
        parser.add_argument("--task", choices=[task.value for task in Task], default=Task.ASR.value)
        parser.add_argument("--previous-text", help="Text for the previous-text slot")
        parser.add_argument("--objects", nargs="+", help="Object labels for a visual prompt")
        parser.add_argument("--top-k", type=int, default=VisualPromptConfig().top_k,
                            help="Objects kept in a visual prompt")
        parser.add_argument("--hide-notimestamps", action="store_true",
                            help="Leave <|notimestamps|> out of the rendered prompt")

    def execute(self, args) -> int:
        vocab = self.vocab(args)
        languages = self.split_list(args.lang)
        self.validate_args(languages, min_count=1, max_count=2, option="--lang")
        objects = self.split_list(args.objects)
        if objects and args.previous_text:
            raise ArgumentError("--objects and --previous-text both fill the previous-text slot; pick one")

        try:
            if objects:
                self.validate_args(languages, expected_count=1, option="--lang")
                prompt = build_visual_prompt(vocab, objects, VisualPromptConfig(top_k=args.top_k), lang=languages[0])
            elif args.previous_text or len(languages) == 2:
                vocab.registry.require(languages)
                previous = vocab.tokenizer.encode(args.previous_text) if args.previous_text else []
                prompt = PromptSequence(previous_text=tuple(previous), languages=tuple(languages), task=Task(args.task))
            else:
                prompt = build_default_prompt(vocab, languages[0], Task(args.task))
        except ValueError as e:
            raise ArgumentError(str(e)) from e

        tokens = serialize_prompt(prompt, vocab.specials, budget=vocab.prompt_budget)
        rendered = format_tokens(tokens, vocab, show_no_timestamps=not args.hide_notimestamps)
        if ui.quiet:
            self.console.print(rendered, markup=False, highlight=False)
        else:
            ui.show_prompt(rendered, tokens)
        return 0
