from ...core.decoder import Decoder
from ...core.ui import ui
from .base import BaseCommand


class LidCommand(BaseCommand):
    @property
    def name(self) -> str:
        return "lid"

    @property
    def description(self) -> str:
        return "Language identification restricted to a set of languages."

    @property
    def usage(self) -> str:
        return "wpt lid --audio clip.wav [--languages zh en]"

    def configure(self, parser):
        self.add_vocab_option(parser)
        self.add_backend_option(parser)
        parser.add_argument("--audio", required=True, help="Audio handle passed to the backend")
        parser.add_argument("--languages", nargs="+",
                            help="Allowed languages (default: every language the backend and vocabulary share)")

    def execute(self, args) -> int:
        vocab = self.vocab(args)
        decoder = Decoder(self.cli.create_backend(self.backend_spec(args), vocab), vocab)
        languages = self.split_list(args.languages)
        if not languages:
            languages = [code for code in decoder.info().languages if code in vocab.registry]
        self.validate_args(languages, min_count=1, option="--languages")

        lid = decoder.run_lid(args.audio, languages)
        if ui.quiet:
            self.console.print(f"{lid.argmax}\t{lid.confidence:.4f}", markup=False, highlight=False)
        else:
            ui.show_lid(lid.probs, lid.argmax)
        return 0
