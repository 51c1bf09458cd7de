from ...core.harness import write_sweep
from ...core.run_config import SweepSpec
from ...core.ui import ui
from .evaluate_command import EvaluateCommand


class SweepCommand(EvaluateCommand):
    @property
    def name(self) -> str:
        return "sweep"

    @property
    def description(self) -> str:
        return "Evaluates a manifest once per parameter value and ranks the runs."

    @property
    def usage(self) -> str:
        return "wpt sweep --manifest data.jsonl --config run.yaml --sweep top_k=30,50,90"

    def get_help(self) -> str:
        return (f"{self.description}\n\nParameters: top_k, lid_threshold, frequency_percent. "
                "Runs share the hypothesis cache.")

    def configure(self, parser):
        super().configure(parser)
        parser.add_argument("--sweep", required=True, help="name=v1,v2,... e.g. lid_threshold=0.9,1.0")

    def execute(self, args) -> int:
        sweep = SweepSpec.parse(args.sweep)
        cfg, records, harness, run_info = self.prepare(args)
        try:
            result = harness.run_sweep(records, sweep)
        finally:
            self.close_provider(harness)

        json_path, md_path = write_sweep(result, cfg.output_dir, run_info)
        ui.show_sweep(result)
        ui.success(f"Wrote {json_path} and {md_path}")
        return 1 if any(report.has_failures for _, report in result.reports) else 0
