"""
Evaluation harness: runs a manifest through prompt policy, decode and scoring,
with an on-disk hypothesis cache, bounded record parallelism and sweeps.
"""

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field

from ..analysis.bleu import corpus_bleu
from ..analysis.metrics import aggregate, bleu_tokenization_for, score_utterance
from ..execution.backend import Backend, ensure_concurrent_safe
from .decode_constraints import (
    DEFAULT_FREQUENCY_PERCENT,
    LANGUAGE_SCRIPTS,
    build_frequency_mask,
    build_script_mask,
    get_script,
    intersect,
    load_frequency_corpus,
    load_script_specs,
    mask_digest,
    read_mask,
)
from .decoder import Decoder
from .errors import ConfigError, DecodeError, ManifestError, MaskError, RetrievalError, ToolkitError
from .hypothesis_cache import HypothesisCache, cache_key
from .models import (
    ConcatConfig,
    DecodeConfig,
    EvalReport,
    LidResult,
    ManifestRecord,
    ManifestTask,
    PromptSequence,
    RecordFailure,
    Task,
    UtteranceScore,
    VocabMask,
)
from .prompt_builder import build_cs_prompt, build_default_prompt, build_fixed_prompt, build_st_prompt, build_visual_prompt
from .report_templates import ReportTemplateManager
from .run_config import PromptPolicy, RunConfig, SweepParameter, SweepSpec
from .token_model import Vocabulary, format_tokens, prompt_budget, serialize_prompt
from .ui import ui
from .visual_retrieval import EmbeddingProvider, ObjectIndex, load_index, plan_frames, resolve_frame_embeddings, retrieve

CACHE_VERSION = 1
TOP_RUNS = 3


def manifest_task(records: Sequence[ManifestRecord]) -> ManifestTask:
    """The single task shared by every record."""
    tasks = {record.task for record in records}
    if len(tasks) != 1:
        raise ManifestError(f"manifest mixes tasks: {', '.join(sorted(t.value for t in tasks))}")
    return tasks.pop()


class EvalHarness:
    """Evaluates manifests for one run config against one backend."""

    def __init__(self, vocab: Vocabulary, cfg: RunConfig, backend: Backend,
                 cache: Optional[HypothesisCache] = None, manifest_dir: Optional[Path] = None,
                 embedding_provider: Optional[EmbeddingProvider] = None, show_progress: bool = False):
        self.vocab = vocab
        self.cfg = cfg
        self.backend = ensure_concurrent_safe(backend) if cfg.workers > 1 else backend
        self.decoder = Decoder(self.backend, vocab)
        self.cache = cache if cache is not None else HypothesisCache()
        self.manifest_dir = manifest_dir
        self.embedding_provider = embedding_provider
        self.show_progress = show_progress
        self._vocab_digest = vocab.digest()
        self._masks: Dict[Optional[str], Optional[VocabMask]] = {}
        self._mask_lock = threading.Lock()
        self._index: Optional[ObjectIndex] = None

    def with_config(self, cfg: RunConfig) -> "EvalHarness":
        """A harness for another config sharing backend, cache and vocabulary."""
        return EvalHarness(self.vocab, cfg, self.backend, self.cache, self.manifest_dir,
                           self.embedding_provider, self.show_progress)

    # prompt policies

    def _lid(self, record: ManifestRecord, languages: Sequence[str]) -> LidResult:
        key = cache_key({
            "v": CACHE_VERSION,
            "ns": "lid",
            "record": {"id": record.id, "audio": record.audio},
            "languages": list(languages),
            "backend": self.backend.digest(),
            "vocab": self._vocab_digest,
        })
        cached = self.cache.get("lid", key)
        if cached is not None:
            return LidResult.model_validate(cached)
        lid = self.decoder.run_lid(record.audio, languages)
        self.cache.set("lid", key, lid.model_dump(mode="json"))
        return lid

    def _object_index(self) -> ObjectIndex:
        if self._index is None:
            self._index = load_index(self.cfg.retrieval.index)
        return self._index

    def _visual_objects(self, record: ManifestRecord) -> List[str]:
        if not record.frames:
            raise RetrievalError(f"record {record.id} has no frames for visual prompting")
        frames = resolve_frame_embeddings(record.frames, self.embedding_provider, self.manifest_dir)
        settings = self.cfg.retrieval
        if len(frames) > settings.frame_count:
            plan = plan_frames(len(frames), settings.frame_count)
            frames = frames[list(plan.indices)]
        result = retrieve(frames, self._object_index(), self.cfg.visual.top_k, settings.aggregation)
        return result.labels

    def build_prompt(self, record: ManifestRecord) -> Tuple[PromptSequence, Optional[LidResult]]:
        policy = self.cfg.policy
        target = record.languages[0]
        if policy == PromptPolicy.DEFAULT:
            if record.task == ManifestTask.CS_ASR:
                lid = self._lid(record, record.languages)
                pair = ConcatConfig(languages=tuple(record.languages), lid_threshold=0.0)
                return build_cs_prompt(self.vocab, lid, pair), lid
            return build_default_prompt(self.vocab, target), None
        if policy == PromptPolicy.FIXED:
            return build_fixed_prompt(self.vocab, self.cfg.language), None
        if policy == PromptPolicy.VISUAL:
            return build_visual_prompt(self.vocab, self._visual_objects(record), self.cfg.visual, lang=target), None
        if policy == PromptPolicy.CONCAT:
            lid = self._lid(record, self.cfg.concat.languages)
            return build_cs_prompt(self.vocab, lid, self.cfg.concat), lid
        if policy == PromptPolicy.ST:
            return build_st_prompt(self.vocab, target), None
        return build_default_prompt(self.vocab, target, Task.ST), None

    # masks

    def mask_for(self, record: ManifestRecord) -> Optional[VocabMask]:
        """Intersection of the configured masks for the record's target, memoized."""
        spec = self.cfg.mask
        if spec.is_empty:
            return None
        target = record.languages[0] if len(record.languages) == 1 else None
        per_target = spec.script == "auto" or (spec.frequency_corpus is not None and spec.frequency_percent is None)
        slot = target if per_target else "*"
        with self._mask_lock:
            if slot not in self._masks:
                self._masks[slot] = self._build_mask(target)
            return self._masks[slot]

    def _build_mask(self, target: Optional[str]) -> Optional[VocabMask]:
        spec = self.cfg.mask
        parts: List[VocabMask] = []
        if spec.script:
            name = LANGUAGE_SCRIPTS.get(target) if spec.script == "auto" else spec.script
            if name:
                if spec.script_file:
                    scripts = load_script_specs(spec.script_file)
                    if name not in scripts:
                        raise MaskError(f"script {name!r} not found in {spec.script_file}")
                    script = scripts[name]
                else:
                    script = get_script(name)
                parts.append(build_script_mask(script, self.vocab))
        if spec.frequency_corpus:
            percent = spec.frequency_percent or DEFAULT_FREQUENCY_PERCENT.get(target)
            if percent is None:
                raise MaskError(f"no frequency_percent configured for target {target!r}")
            parts.append(build_frequency_mask(load_frequency_corpus(spec.frequency_corpus, percent), self.vocab))
        if spec.mask_file:
            parts.append(read_mask(spec.mask_file))
        return reduce(intersect, parts) if parts else None

    def load_run_resources(self, records: Sequence[ManifestRecord]) -> None:
        """Build every mask the records need and load the object index up front.

        These come from the run config alone, so a broken one is a config error
        rather than a failure of each record.
        """
        try:
            for record in records:
                self.mask_for(record)
            if self.cfg.policy == PromptPolicy.VISUAL:
                self._object_index()
        except (MaskError, RetrievalError) as e:
            raise ConfigError(f"run config: {e}") from e

    # records

    def _hypothesis(self, record: ManifestRecord) -> Tuple[str, str]:
        prompt, _ = self.build_prompt(record)
        mask = self.mask_for(record)
        info = self.decoder.info()
        context = serialize_prompt(prompt, self.vocab.specials, budget=prompt_budget(info.n_ctx))
        rendered = format_tokens(context, self.vocab, show_no_timestamps=False)
        key = cache_key({
            "v": CACHE_VERSION,
            "ns": "hyp",
            "record": {"id": record.id, "audio": record.audio},
            "prompt": context,
            "decode": self.cfg.decode.model_dump(mode="json"),
            "mask": mask_digest(mask) if mask is not None else None,
            "backend": self.backend.digest(),
            "vocab": self._vocab_digest,
        })
        cached = self.cache.get("hyp", key)
        if cached is not None:
            return cached["text"], rendered

        decode_cfg = DecodeConfig(mask=mask, **self.cfg.decode.model_dump())
        result = self.decoder.decode(record.audio, prompt, decode_cfg)
        self.cache.set("hyp", key, {"text": result.text, "tokens": list(result.tokens)})
        return result.text, rendered

    def process_record(self, record: ManifestRecord) -> Union[UtteranceScore, RecordFailure]:
        """Decode and score one record; any failure stays confined to it."""
        try:
            text, rendered = self._hypothesis(record)
            return score_utterance(record.id, record.reference, text, prompt=rendered)
        except DecodeError as e:
            return RecordFailure(id=record.id, error=f"{type(e).__name__}: {e}",
                                 partial_text=self.vocab.tokenizer.decode(e.partial_tokens) or None)
        except (ToolkitError, ValueError) as e:
            return RecordFailure(id=record.id, error=f"{type(e).__name__}: {e}")

    def run_eval(self, records: Sequence[ManifestRecord]) -> EvalReport:
        """Evaluate every record. Record failures are collected; a broken run config raises ConfigError."""
        task = manifest_task(records)
        self.cfg.check_task(task)
        self.decoder.info()
        self.load_run_resources(records)

        results: Dict[str, Union[UtteranceScore, RecordFailure]] = {}
        with ui.progress("Decoding", len(records)) if self.show_progress else _no_progress() as advance:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                for record, outcome in zip(records, pool.map(self._tracked(advance), records)):
                    results[record.id] = outcome

        scored = [outcome for outcome in results.values() if isinstance(outcome, UtteranceScore)]
        failures = [outcome for outcome in results.values() if isinstance(outcome, RecordFailure)]
        for failure in sorted(failures, key=lambda f: f.id):
            ui.warning(f"record {failure.id} failed: {failure.error}")
        return aggregate(scored, task, failures)

    def _tracked(self, advance):
        def run(record: ManifestRecord):
            outcome = self.process_record(record)
            advance()
            return outcome
        return run

    def run_sweep(self, records: Sequence[ManifestRecord], sweep: SweepSpec) -> "SweepResult":
        """One run per value, sharing the cache; ranked by the headline metric."""
        task = manifest_task(records)
        reports: List[Tuple[float, EvalReport]] = []
        for value in sweep.values:
            harness = self.with_config(sweep.apply(self.cfg, value))
            reports.append((value, harness.run_eval(records)))
        return rank_sweep(sweep.parameter, task, reports)


class _no_progress:
    def __enter__(self):
        return lambda: None

    def __exit__(self, *exc):
        return False


class SweepRow(BaseModel):
    rank: int
    value: float
    value_label: str
    score: Optional[float] = None
    failures: int = 0


class SweepResult(BaseModel):
    """Ranked sweep table; `top_pooled` pools errors (or BLEU statistics) over the top runs."""
    parameter: SweepParameter
    metric: str
    higher_is_better: bool
    rows: List[SweepRow] = Field(default_factory=list)
    reports: List[Tuple[float, EvalReport]] = Field(default_factory=list)
    top: List[str] = Field(default_factory=list)
    top_mean: Optional[float] = None
    top_pooled: Optional[float] = None


def value_label(value: float) -> str:
    return f"{value:g}"


def rank_sweep(parameter: SweepParameter, task: ManifestTask,
               reports: Sequence[Tuple[float, EvalReport]]) -> SweepResult:
    higher = task == ManifestTask.ST
    metric = "corpus_bleu" if higher else "total_mer"

    def sort_key(item):
        position, (_, report) = item
        score = report.headline()
        if score is None:
            return (1, 0.0, position)
        return (0, -score if higher else score, position)

    ranked = sorted(enumerate(reports), key=sort_key)
    rows = [
        SweepRow(rank=rank, value=value, value_label=value_label(value),
                 score=report.headline(), failures=len(report.failures))
        for rank, (_, (value, report)) in enumerate(ranked, 1)
    ]
    top_reports = [report for _, (_, report) in ranked[:TOP_RUNS] if report.headline() is not None]
    result = SweepResult(parameter=parameter, metric=metric, higher_is_better=higher, rows=rows,
                         reports=list(reports), top=[row.value_label for row in rows[:len(top_reports)]])
    if top_reports:
        result.top_mean = sum(report.headline() for report in top_reports) / len(top_reports)
        result.top_pooled = pooled_headline(top_reports, task)
    return result


def pooled_headline(reports: Sequence[EvalReport], task: ManifestTask) -> Optional[float]:
    """Headline metric over the union of the runs' utterances."""
    utterances = [utt for report in reports for utt in report.utterances]
    if not utterances:
        return None
    if task == ManifestTask.ST:
        pairs = [(utt.reference, utt.hypothesis) for utt in utterances]
        return corpus_bleu(pairs, bleu_tokenization_for(ref for ref, _ in pairs))
    errors = sum(utt.mixed.errors for utt in utterances)
    ref_len = sum(utt.mixed.ref_len for utt in utterances)
    return None if ref_len == 0 else 100.0 * errors / ref_len


def report_json(report: EvalReport, run_info: Dict[str, Any]) -> str:
    """Deterministic JSON: sorted keys, no timings."""
    data = report.model_dump(mode="json")
    data["run"] = run_info
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_report_markdown(report: EvalReport, run_info: Dict[str, Any],
                           templates: Optional[ReportTemplateManager] = None) -> str:
    templates = templates or ReportTemplateManager()
    variant = "st" if report.task == ManifestTask.ST else None
    return templates.render("report", {"title": "Evaluation report", "run": run_info, "report": report},
                            variant=variant)


def write_report(report: EvalReport, output_dir: Union[str, Path], run_info: Dict[str, Any],
                 templates: Optional[ReportTemplateManager] = None) -> Tuple[Path, Path]:
    """Write report.json and report.md into `output_dir`."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    templates = templates or ReportTemplateManager()
    json_path = output_dir / "report.json"
    json_path.write_text(report_json(report, run_info), encoding="utf-8")
    md_path = output_dir / "report.md"
    md_path.write_text(render_report_markdown(report, run_info, templates), encoding="utf-8")
    return json_path, md_path


def write_sweep(result: SweepResult, output_dir: Union[str, Path], run_info: Dict[str, Any],
                templates: Optional[ReportTemplateManager] = None) -> Tuple[Path, Path]:
    """Write every run's report under `<parameter>=<value>/` plus sweep.json and sweep.md."""
    output_dir = Path(output_dir)
    templates = templates or ReportTemplateManager()
    for value, report in result.reports:
        run = dict(run_info, **{result.parameter.value: value_label(value)})
        write_report(report, output_dir / f"{result.parameter.value}={value_label(value)}", run, templates)

    data = result.model_dump(mode="json", exclude={"reports"})
    data["run"] = run_info
    json_path = output_dir / "sweep.json"
    json_path.write_text(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    sweep_vars = {
        "parameter": result.parameter.value,
        "metric": result.metric,
        "rows": result.rows,
        "top": result.top,
        "top_mean": result.top_mean,
        "top_pooled": result.top_pooled,
    }
    md_path = output_dir / "sweep.md"
    md_path.write_text(templates.render("sweep", {"title": "Sweep report", "run": run_info, "sweep": sweep_vars}),
                       encoding="utf-8")
    return json_path, md_path


def run_eval(records: Sequence[ManifestRecord], cfg: RunConfig, vocab: Vocabulary, backend: Backend,
             cache: Optional[HypothesisCache] = None, manifest_dir: Optional[Path] = None) -> EvalReport:
    """Evaluate a manifest with a fresh harness."""
    return EvalHarness(vocab, cfg, backend, cache, manifest_dir).run_eval(records)


def run_sweep(records: Sequence[ManifestRecord], cfg: RunConfig, sweep: SweepSpec, vocab: Vocabulary,
              backend: Backend, cache: Optional[HypothesisCache] = None,
              manifest_dir: Optional[Path] = None) -> SweepResult:
    return EvalHarness(vocab, cfg, backend, cache, manifest_dir).run_sweep(records, sweep)
