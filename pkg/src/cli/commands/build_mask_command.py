from functools import reduce

from ...core.decode_constraints import (
    DEFAULT_FREQUENCY_PERCENT,
    LANGUAGE_SCRIPTS,
    build_frequency_mask,
    build_script_mask,
    get_script,
    intersect,
    load_frequency_corpus,
    load_script_specs,
    mask_digest,
    render_mask,
    write_mask,
)
from ...core.errors import MaskError
from ...core.ui import ui
from .base import ArgumentError, BaseCommand

PREVIEW_TOKENS = 12


class BuildMaskCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "build-mask"

    @property
    def description(self) -> str:
        return "Builds a script and/or corpus-frequency vocabulary mask and writes it as a mask file."

    @property
    def usage(self) -> str:
        return ("wpt build-mask [--script cyrillic | --lang ru --script auto] "
                "[--frequency-corpus de.txt --percent 40] [--output mask.txt]")

    def configure(self, parser):
        self.add_vocab_option(parser)
        parser.add_argument("--script", help="Script name (cjk, cyrillic, arabic, or one from --script-file); "
                                             "'auto' picks the script of --lang")
        parser.add_argument("--script-file", help="Script specs file with extra scripts")
        parser.add_argument("--frequency-corpus", help="Target-language text for the frequency mask")
        parser.add_argument("--percent", type=float, help="Keep the top K%% most frequent token types")
        parser.add_argument("--lang", help="Target language (for --script auto and default percentages)")
        parser.add_argument("--output", help="Mask file to write (prints to stdout when omitted)")

    def _script(self, args):
        name = args.script
        if name == "auto":
            if not args.lang:
                raise ArgumentError("--script auto needs --lang")
            name = LANGUAGE_SCRIPTS.get(args.lang)
            if name is None:
                raise ArgumentError(f"no script registered for language {args.lang!r}")
        if args.script_file:
            scripts = load_script_specs(args.script_file)
            if name in scripts:
                return scripts[name]
        try:
            return get_script(name)
        except MaskError as e:
            raise ArgumentError(str(e)) from e

    def execute(self, args) -> int:
        if not (args.script or args.frequency_corpus):
            raise ArgumentError(f"nothing to build; give --script and/or --frequency-corpus\nUsage: {self.usage}")
        vocab = self.vocab(args)

        parts = []
        if args.script:
            parts.append(build_script_mask(self._script(args), vocab))
        if args.frequency_corpus:
            percent = args.percent or DEFAULT_FREQUENCY_PERCENT.get(args.lang or "")
            if percent is None:
                raise ArgumentError("--frequency-corpus needs --percent (no default for this language)")
            parts.append(build_frequency_mask(load_frequency_corpus(args.frequency_corpus, percent), vocab))
        mask = reduce(intersect, parts)

        if args.output:
            path = write_mask(mask, args.output)
            ui.success(f"Wrote {path}")
        else:
            self.console.print(render_mask(mask), end="", markup=False, highlight=False)

        preview = [vocab.tokenizer.token_bytes(token).decode("utf-8", errors="replace")
                   for token in mask.allowed_ids()[:PREVIEW_TOKENS] if token not in vocab.tokenizer.special_ids]
        if not ui.quiet:
            ui.show_key_values("Mask", [
                ("description", mask.description),
                ("vocab size", mask.vocab_size),
                ("allowed", mask.allowed_count),
                ("digest", mask_digest(mask)[:16]),
                ("first tokens", " ".join(repr(piece) for piece in preview)),
            ])
        return 0
