"""
Tests for the evaluation harness: demo corpora, caching, fault isolation and sweeps.
"""

import json
import re
import shutil

import pytest

from src.core.errors import ConfigError, ManifestError
from src.core.harness import (
    EvalHarness,
    manifest_task,
    pooled_headline,
    rank_sweep,
    render_report_markdown,
    report_json,
    run_eval,
    write_report,
    write_sweep,
)
from src.core.hypothesis_cache import HypothesisCache
from src.core.models import ManifestRecord, ManifestTask
from src.core.run_config import MaskSpec, PromptPolicy, RunConfig, RunConfigManager, SweepSpec, load_manifest
from src.execution.mock_backend import MockBackend

from conftest import DEMO_DIR

VISUAL_DIR = DEMO_DIR / "visual"
RUN_INFO = {"manifest": "demo"}


def demo(config="run.yaml", manifest="manifest.jsonl", base=DEMO_DIR):
    cfg = RunConfigManager(base / config).config
    return cfg, load_manifest(base / manifest)


def mock_for(cfg, vocab):
    return MockBackend.from_file(vocab, cfg.backend[len("mock:"):])


def record(id, reference="hello", task="asr", languages=("en",), **extra):
    return ManifestRecord(id=id, audio=f"audio/{id}.wav", reference=reference, task=task,
                          languages=languages, **extra)


def test_concat_demo_decodes_every_record(vocab):
    cfg, records = demo()
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR).run_eval(records)
    assert not report.has_failures
    assert len(report.utterances) == 20
    assert report.total_mer == 0.0
    assert report.cs_mer == 0.0
    u01 = next(utt for utt in report.utterances if utt.id == "u01")
    assert u01.prompt == "<|sot|><|zh|><|en|><|asr|>"


def test_report_is_identical_across_reruns_and_cache_wipes(vocab, tmp_path):
    cfg, records = demo()
    cache_root = tmp_path / "cache"

    first_backend = mock_for(cfg, vocab)
    first = EvalHarness(vocab, cfg, first_backend, HypothesisCache(cache_root), DEMO_DIR).run_eval(records)
    assert first_backend.step_calls > 0

    rerun_backend = mock_for(cfg, vocab)
    rerun = EvalHarness(vocab, cfg, rerun_backend, HypothesisCache(cache_root), DEMO_DIR).run_eval(records)
    assert rerun_backend.step_calls == 0

    shutil.rmtree(cache_root)
    wiped_backend = mock_for(cfg, vocab)
    wiped = EvalHarness(vocab, cfg, wiped_backend, HypothesisCache(cache_root), DEMO_DIR).run_eval(records)
    assert wiped_backend.step_calls == first_backend.step_calls

    serial_cfg = cfg.model_copy(update={"workers": 1})
    serial = EvalHarness(vocab, serial_cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR).run_eval(records)

    expected = report_json(first, RUN_INFO)
    for report in (rerun, wiped, serial):
        assert report_json(report, RUN_INFO) == expected


def test_confident_lid_drops_to_single_language(vocab):
    cfg, records = demo()
    cfg = cfg.model_copy(update={"concat": cfg.concat.model_copy(update={"lid_threshold": 0.9})})
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR).run_eval(records)
    prompts = {utt.id: utt.prompt for utt in report.utterances}
    # zh logit 3.0 over en gives 0.953; 1.0 gives 0.731
    assert prompts["u01"] == "<|sot|><|zh|><|asr|>"
    assert prompts["u02"] == "<|sot|><|zh|><|en|><|asr|>"
    assert prompts["u04"] == "<|sot|><|en|><|asr|>"
    assert report.cs_mer > 0.0
    assert report.en_wer == 0.0


def test_failures_stay_with_their_record(vocab, make_mock):
    backend = make_mock({
        "outputs": {"*": [{"text": "hello"}]},
        "failures": {"audio/bad.wav": 0},
    })
    records = [record("a"), record("bad"), record("c"), record("odd", languages=("xx",))]
    cfg = RunConfig(backend="mock:inline", workers=2)
    report = EvalHarness(vocab, cfg, backend).run_eval(records)

    assert [utt.id for utt in report.utterances] == ["a", "c"]
    assert report.total_mer == 0.0
    failures = {failure.id: failure.error for failure in report.failures}
    assert set(failures) == {"bad", "odd"}
    assert "scripted failure" in failures["bad"]
    assert failures["odd"].startswith("UnknownLanguageError")


def test_decode_failure_keeps_partial_output(vocab, make_mock):
    backend = make_mock({
        "outputs": {"*": [{"text": "hello world"}]},
        "failures": {"audio/bad.wav": 1},
    })
    cfg = RunConfig(backend="mock:inline")
    report = EvalHarness(vocab, cfg, backend).run_eval([record("a", reference="hello world"), record("bad")])

    [failure] = report.failures
    assert failure.id == "bad"
    assert failure.error.startswith("DecodeError")
    assert failure.partial_text == vocab.tokenizer.decode(vocab.tokenizer.encode("hello world")[:1])
    assert "partial output" in render_report_markdown(report, RUN_INFO)
    assert json.loads(report_json(report, RUN_INFO))["failures"][0]["partial_text"] == failure.partial_text


def test_unreadable_mask_fails_the_run_not_each_record(vocab, make_mock, tmp_path):
    backend = make_mock({"outputs": {"*": [{"text": "hello"}]}})
    cfg = RunConfig(backend="mock:inline", mask=MaskSpec(mask_file=str(tmp_path / "absent.mask")))
    with pytest.raises(ConfigError, match="cannot read mask file"):
        EvalHarness(vocab, cfg, backend).run_eval([record("a"), record("b")])
    assert backend.step_calls == 0


def test_visual_record_without_frames_fails_alone(vocab):
    cfg, records = demo("run.yaml", "manifest.jsonl", VISUAL_DIR)
    records = records + [record("v03", reference="add the onion")]
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=VISUAL_DIR).run_eval(records)
    assert [failure.id for failure in report.failures] == ["v03"]
    assert "RetrievalError" in report.failures[0].error
    assert report.total_mer == 0.0


def test_visual_prompt_carries_retrieved_objects(vocab):
    cfg, records = demo("run.yaml", "manifest.jsonl", VISUAL_DIR)
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=VISUAL_DIR).run_eval(records)
    prompts = {utt.id: utt.prompt for utt in report.utterances}
    assert prompts["v01"] == "<|sop|>spinach, olive oil<|sot|><|en|><|asr|>"
    assert prompts["v02"] == "<|sop|>knife, onion<|sot|><|en|><|asr|>"
    assert report.en_wer == 0.0


def test_visual_demo_without_objects_misrecognizes(vocab):
    cfg, records = demo("run.yaml", "manifest.jsonl", VISUAL_DIR)
    cfg = cfg.model_copy(update={"policy": PromptPolicy.DEFAULT})
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=VISUAL_DIR).run_eval(records)
    assert report.en_wer > 0.0


def test_top_k_sweep_grows_cache_monotonically(vocab, tmp_path):
    cfg, records = demo("run.yaml", "manifest.jsonl", VISUAL_DIR)
    cache = HypothesisCache(tmp_path / "cache")
    harness = EvalHarness(vocab, cfg, mock_for(cfg, vocab), cache, VISUAL_DIR)
    sweep = SweepSpec.parse("top_k=1,2,4")

    sizes = []
    for value in sweep.values:
        harness.with_config(sweep.apply(cfg, value)).run_eval(records)
        sizes.append(cache.disk_entries("hyp"))
    assert sizes == [2, 4, 6]

    result = harness.run_sweep(records, sweep)
    assert cache.disk_entries("hyp") == 6
    assert [row.value_label for row in result.rows] == ["1", "2", "4"]
    assert all(row.score == 0.0 for row in result.rows)


def test_lid_threshold_sweep_ranks_always_concatenate_first(vocab, tmp_path):
    cfg, records = demo()
    harness = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    result = harness.run_sweep(records, SweepSpec.parse("lid_threshold=0.9,1.0"))

    assert result.metric == "total_mer" and not result.higher_is_better
    assert [row.value for row in result.rows] == [1.0, 0.9]
    assert [row.rank for row in result.rows] == [1, 2]
    assert result.rows[0].score == 0.0
    assert result.rows[1].score > 0.0
    assert result.top == ["1", "0.9"]
    assert result.top_mean == pytest.approx(result.rows[1].score / 2)
    reports = [report for _, report in result.reports]
    assert result.top_pooled == pytest.approx(pooled_headline(reports, ManifestTask.CS_ASR))

    json_path, md_path = write_sweep(result, tmp_path / "sweep", RUN_INFO)
    data = json.loads(json_path.read_text(encoding="utf-8"))
    assert data["top"] == ["1", "0.9"]
    assert (tmp_path / "sweep" / "lid_threshold=0.9" / "report.json").exists()
    assert (tmp_path / "sweep" / "lid_threshold=1" / "report.md").exists()
    assert "| 1 | 1 | 0.00 | 0 |" in md_path.read_text(encoding="utf-8")


def test_singleton_sweep(vocab):
    cfg, records = demo()
    harness = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    result = harness.run_sweep(records, SweepSpec.parse("lid_threshold=1.0"))
    assert len(result.rows) == 1
    assert result.top == ["1"]
    assert result.top_mean == result.rows[0].score


def test_rank_sweep_keeps_value_order_on_ties_and_puts_missing_last(vocab):
    good = run_eval([record("a")], RunConfig(backend="mock:inline"), vocab,
                    MockBackend(vocab, {"outputs": {"*": [{"text": "hello"}]}}))
    empty = good.model_copy(update={"utterances": [], "total_mer": None})
    result = rank_sweep(SweepSpec.parse("top_k=5").parameter, ManifestTask.ASR,
                        [(5.0, empty), (10.0, good), (20.0, good)])
    assert [row.value_label for row in result.rows] == ["10", "20", "5"]
    assert result.top == ["10", "20"]


def test_translation_prompt_with_cyrillic_mask(vocab):
    cfg, records = demo("st_run.yaml", "st_manifest.jsonl")
    report = run_eval(records, cfg, vocab, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    assert not report.has_failures
    for utt in report.utterances:
        assert not re.search("[A-Za-z]", utt.hypothesis), utt.hypothesis
        assert utt.prompt.endswith("<|ru|><|asr|>")
    assert report.bleu_tokenization == "word"
    assert report.corpus_bleu == 100.0
    assert report.headline() == 100.0


def test_translation_without_mask_drifts_to_latin(vocab):
    cfg, records = demo("st_run.yaml", "st_manifest.jsonl")
    cfg = cfg.model_copy(update={"mask": MaskSpec()})
    report = run_eval(records, cfg, vocab, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    st01 = next(utt for utt in report.utterances if utt.id == "st01")
    assert "hello" in st01.hypothesis
    assert report.corpus_bleu < 100.0


def test_default_translation_prompt_answers_in_english(vocab):
    cfg, records = demo("st_run.yaml", "st_manifest.jsonl")
    cfg = cfg.model_copy(update={"policy": PromptPolicy.ST_DEFAULT, "mask": MaskSpec()})
    report = run_eval(records, cfg, vocab, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    assert all(utt.prompt.endswith("<|ru|><|st|>") for utt in report.utterances)
    assert report.corpus_bleu == 0.0


def test_policy_must_fit_task(vocab):
    cfg, _ = demo()
    _, st_records = demo("st_run.yaml", "st_manifest.jsonl")
    with pytest.raises(ConfigError):
        EvalHarness(vocab, cfg, mock_for(cfg, vocab)).run_eval(st_records)


def test_manifest_task_rejects_mixed_tasks():
    records = [record("a"), record("b", task="st", languages=("ru",))]
    with pytest.raises(ManifestError, match="mixes tasks"):
        manifest_task(records)
    assert manifest_task(records[:1]) == ManifestTask.ASR


def test_write_report(vocab, tmp_path):
    cfg, records = demo()
    report = EvalHarness(vocab, cfg, mock_for(cfg, vocab), manifest_dir=DEMO_DIR).run_eval(records)
    json_path, md_path = write_report(report, tmp_path / "out", RUN_INFO)
    data = json.loads(json_path.read_text(encoding="utf-8"))
    assert data["run"] == RUN_INFO
    assert data["total_mer"] == 0.0
    assert len(data["utterances"]) == 20
    markdown = md_path.read_text(encoding="utf-8")
    assert "| Zh CER | En WER | CS MER | Total MER |" in markdown
    assert "- manifest: demo" in markdown


def test_translation_report_markdown(vocab):
    cfg, records = demo("st_run.yaml", "st_manifest.jsonl")
    report = run_eval(records, cfg, vocab, mock_for(cfg, vocab), manifest_dir=DEMO_DIR)
    markdown = render_report_markdown(report, RUN_INFO)
    assert "| BLEU | tokenization |" in markdown
    assert "| 100.00 | word |" in markdown
    assert "Total MER" not in markdown
