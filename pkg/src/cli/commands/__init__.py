from .base import BaseCommand, CommandError, ArgumentError
from .registry import CommandRegistry
from .build_prompt_command import BuildPromptCommand
from .build_mask_command import BuildMaskCommand
from .embed_index_command import EmbedIndexCommand
from .retrieve_command import RetrieveCommand
from .lid_command import LidCommand
from .transcribe_command import TranscribeCommand
from .evaluate_command import EvaluateCommand
from .sweep_command import SweepCommand

__all__ = [
    'BaseCommand',
    'CommandError',
    'ArgumentError',
    'CommandRegistry',
    'BuildPromptCommand',
    'BuildMaskCommand',
    'EmbedIndexCommand',
    'RetrieveCommand',
    'LidCommand',
    'TranscribeCommand',
    'EvaluateCommand',
    'SweepCommand'
]
