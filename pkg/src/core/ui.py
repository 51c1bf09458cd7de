"""
UI helpers for terminal output with Rich formatting.
Provides color-coded messages, progress bars and the report tables.
"""

from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table
from rich.text import Text


def _rate(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


class UIManager:
    """Centralized UI manager for consistent terminal output."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.quiet = False

    def success(self, message: str):
        """Display success message in green."""
        if not self.quiet:
            self.console.print(f"[green]{message}[/green]")

    def warning(self, message: str):
        """Display warning message in yellow."""
        if not self.quiet:
            self.console.print(f"[yellow]{message}[/yellow]")

    def info(self, message: str):
        if not self.quiet:
            self.console.print(f"[cyan]{message}[/cyan]")

    def show_clean_error(self, error: Exception, context: str = ""):
        """Display an error panel without a stack dump."""
        error_text = Text()
        error_text.append("Error Details:\n", style="bold red")
        if context:
            error_text.append(f"Context: {context}\n", style="red")
        error_text.append(f"Type: {type(error).__name__}\n", style="yellow")
        error_text.append(f"Message: {error}", style="white")
        self.console.print(Panel(error_text, title="Error", border_style="red", expand=False))

    @contextmanager
    def progress(self, description: str, total: int) -> Iterator[Callable[[], None]]:
        """Progress bar context; yields a callable that advances it by one."""
        if self.quiet:
            yield lambda: None
            return
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=self.console,
            transient=True,
        ) as progress:
            task_id = progress.add_task(description, total=total)
            yield lambda: progress.advance(task_id)

    def show_prompt(self, rendered: str, tokens: Sequence[int], title: str = "Decoder prompt"):
        body = Text()
        body.append(rendered + "\n", style="bold #6F00FE")
        body.append(" ".join(str(token) for token in tokens), style="dim")
        self.console.print(Panel(body, title=title, border_style="#6F00FE", expand=False))

    def show_key_values(self, title: str, rows: Sequence[Tuple[str, Any]]):
        table = Table(title=title, box=box.ROUNDED)
        table.add_column("Field", style="cyan", no_wrap=True)
        table.add_column("Value", style="green")
        for key, value in rows:
            table.add_row(key, str(value))
        self.console.print(table)

    def show_lid(self, probs: Dict[str, float], argmax: str):
        table = Table(title="Language identification", box=box.ROUNDED)
        table.add_column("Language", style="cyan")
        table.add_column("Probability", justify="right")
        for code, prob in sorted(probs.items(), key=lambda item: -item[1]):
            style = "bold green" if code == argmax else ""
            table.add_row(code, f"{prob:.4f}", style=style)
        self.console.print(table)

    def show_retrieval(self, ranked: Sequence[Tuple[str, float]]):
        table = Table(title="Retrieved objects", box=box.ROUNDED)
        table.add_column("#", justify="right", style="dim")
        table.add_column("Label", style="cyan")
        table.add_column("Score", justify="right")
        for i, (label, score) in enumerate(ranked, 1):
            table.add_row(str(i), label, f"{score:.4f}")
        self.console.print(table)

    def show_report(self, report, title: str = "Evaluation"):
        """Headline table: per-class error rates and total MER, or BLEU for translation."""
        table = Table(title=title, box=box.ROUNDED)
        if report.task.value == "st":
            table.add_column("BLEU", justify="right", style="green")
            table.add_column("Tokenization")
            table.add_row(_rate(report.corpus_bleu), report.bleu_tokenization or "-")
        else:
            for column in ("Zh CER", "En WER", "CS MER", "Total MER"):
                table.add_column(column, justify="right", style="green")
            table.add_row(_rate(report.zh_cer), _rate(report.en_wer), _rate(report.cs_mer), _rate(report.total_mer))
        self.console.print(table)
        if report.failures:
            self.warning(f"{len(report.failures)} record(s) failed:")
            for failure in report.failures:
                partial = f" (partial output: {failure.partial_text!r})" if failure.partial_text else ""
                self.console.print(f"  [red]{failure.id}[/red]: {failure.error}{partial}")

    def show_sweep(self, result):
        table = Table(title=f"Sweep over {result.parameter}", box=box.ROUNDED)
        table.add_column("Rank", justify="right", style="dim")
        table.add_column(result.parameter, justify="right", style="cyan")
        table.add_column(result.metric, justify="right", style="green")
        table.add_column("Failures", justify="right")
        top = set(result.top)
        for row in result.rows:
            style = "bold" if row.value_label in top else ""
            table.add_row(str(row.rank), row.value_label, _rate(row.score), str(row.failures), style=style)
        self.console.print(table)
        self.info(f"top {len(result.top)}: {', '.join(result.top)} | mean {_rate(result.top_mean)} "
                  f"| pooled {_rate(result.top_pooled)}")

    def show_list(self, title: str, items: List[str]):
        self.console.print(f"[bold cyan]{title}[/bold cyan]")
        for item in items:
            self.console.print(f"  {item}")


ui = UIManager()
