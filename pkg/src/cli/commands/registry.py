from .build_mask_command import BuildMaskCommand
from .build_prompt_command import BuildPromptCommand
from .embed_index_command import EmbedIndexCommand
from .evaluate_command import EvaluateCommand
from .lid_command import LidCommand
from .retrieve_command import RetrieveCommand
from .sweep_command import SweepCommand
from .transcribe_command import TranscribeCommand


class CommandRegistry:
    def __init__(self, cli, console):
        self.cli = cli
        self.console = console
        self.commands = {
            cmd.name: cmd for cmd in [
                BuildPromptCommand(cli, console), BuildMaskCommand(cli, console), EmbedIndexCommand(cli, console),
                RetrieveCommand(cli, console), LidCommand(cli, console), TranscribeCommand(cli, console),
                EvaluateCommand(cli, console), SweepCommand(cli, console)
            ]
        }

    def get_command(self, name: str):
        command = self.commands.get(name)
        if command is None:
            from .base import ArgumentError
            raise ArgumentError(f"Unknown command: {name}")
        return command

    def list_commands(self):
        return self.commands.values()
