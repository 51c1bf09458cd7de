from functools import reduce

from ...core.decode_constraints import build_script_mask, get_script, intersect, read_mask
from ...core.decoder import Decoder
from ...core.errors import MaskError
from ...core.models import ConcatConfig, DecodeConfig, DecodeStrategy, PromptSequence, Task
from ...core.token_model import format_tokens, serialize_prompt
from ...core.ui import ui
from .base import ArgumentError, BaseCommand


class TranscribeCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "transcribe"

    @property
    def description(self) -> str:
        return "Decodes one audio handle with a prompt and an optional vocabulary mask."

    @property
    def usage(self) -> str:
        return ("wpt transcribe --audio clip.wav --lang zh en [--lid-threshold 0.9] "
                "[--task asr|st] [--mask mask.txt | --script cyrillic]")

    def configure(self, parser):
        self.add_vocab_option(parser)
        self.add_backend_option(parser)
        parser.add_argument("--audio", required=True, help="Audio handle passed to the backend")
        parser.add_argument("--lang", nargs="+", required=True, help="One or two language codes")
        parser.add_argument("--task", choices=[task.value for task in Task], default=Task.ASR.value)
        parser.add_argument("--previous-text", help="Text for the previous-text slot")
        parser.add_argument("--lid-threshold", type=float,
                            help="With two languages: run LID and keep one language when confidence reaches this")
        parser.add_argument("--mask", help="Mask file from build-mask")
        parser.add_argument("--script", help="Restrict output to a script (cjk, cyrillic, arabic)")
        self.add_decode_options(parser)

    def _decode_config(self, args, vocab) -> DecodeConfig:
        masks = []
        if args.mask:
            masks.append(read_mask(args.mask))
        if args.script:
            try:
                script = get_script(args.script)
            except MaskError as e:
                raise ArgumentError(str(e)) from e
            masks.append(build_script_mask(script, vocab))
        settings = {
            "strategy": DecodeStrategy(args.strategy) if args.strategy else None,
            "beam_width": args.beam_width,
            "max_new_tokens": args.max_new_tokens,
        }
        return DecodeConfig(mask=reduce(intersect, masks) if masks else None,
                            **{key: value for key, value in settings.items() if value is not None})

    def execute(self, args) -> int:
        vocab = self.vocab(args)
        languages = self.split_list(args.lang)
        self.validate_args(languages, min_count=1, max_count=2, option="--lang")
        try:
            decode_cfg = self._decode_config(args, vocab)
            if args.lid_threshold is not None:
                self.validate_args(languages, expected_count=2, option="--lang")
                concat = ConcatConfig(languages=tuple(languages), lid_threshold=args.lid_threshold)
            else:
                vocab.registry.require(languages)
                previous = vocab.tokenizer.encode(args.previous_text) if args.previous_text else []
                prompt = PromptSequence(previous_text=tuple(previous), languages=tuple(languages),
                                        task=Task(args.task))
        except ValueError as e:
            raise ArgumentError(str(e)) from e

        decoder = Decoder(self.cli.create_backend(self.backend_spec(args), vocab), vocab)
        if args.lid_threshold is not None:
            result = decoder.transcribe_cs(args.audio, concat, decode_cfg)
        else:
            result = decoder.decode(args.audio, prompt, decode_cfg)

        if not ui.quiet:
            if result.lid is not None:
                ui.show_lid(result.lid.probs, result.lid.argmax)
            tokens = serialize_prompt(result.prompt, vocab.specials, budget=vocab.prompt_budget)
            ui.show_prompt(format_tokens(tokens, vocab), tokens)
        self.console.print(result.text, markup=False, highlight=False)
        return 0
