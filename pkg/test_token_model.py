"""
Tests for the vocabulary manifest, the reference tokenizer and the prompt grammar.
"""

import random

import pytest

from src.core.errors import PromptBudgetError, PromptGrammarError, UnknownLanguageError, VocabManifestError
from src.core.models import ConcatConfig, LidResult, PromptSequence, Task, VisualPromptConfig
from src.core.prompt_builder import build_cs_prompt, build_st_prompt, build_visual_prompt
from src.core.token_model import (
    format_tokens,
    load_vocab_manifest,
    load_vocabulary,
    parse_prompt,
    parse_vocab_manifest,
    render_vocab_manifest,
    serialize_prompt,
    write_vocab_manifest,
)

SMALL_MANIFEST = """\
version 1
vocab_size 12
token 0 YQ==
token 1 Yg==
token 2 YWI=
special endoftext 3
special startoftranscript 4
special startofprev 5
special transcribe 6
special translate 7
special notimestamps 8
special lang:en 9
special lang:zh 10
"""


def rendered(tokens, vocab):
    return format_tokens(tokens, vocab, show_no_timestamps=False)


def test_golden_code_switched_prompt(vocab):
    lid = LidResult(probs={"zh": 0.7, "en": 0.3}, argmax="zh", confidence=0.7)
    prompt = build_cs_prompt(vocab, lid, ConcatConfig(languages=("zh", "en"), lid_threshold=1.0))
    tokens = serialize_prompt(prompt, vocab.specials)
    assert rendered(tokens, vocab) == "<|sot|><|zh|><|en|><|asr|>"
    assert tokens == [vocab.specials.sot, vocab.specials.languages["zh"], vocab.specials.languages["en"],
                      vocab.specials.asr, vocab.specials.no_timestamps]


def test_golden_translation_prompt(vocab):
    tokens = serialize_prompt(build_st_prompt(vocab, "ru"), vocab.specials)
    assert rendered(tokens, vocab) == "<|sot|><|ru|><|asr|>"


def test_golden_visual_prompt(vocab):
    prompt = build_visual_prompt(vocab, ["spinach", "olive oil"], VisualPromptConfig(top_k=50))
    tokens = serialize_prompt(prompt, vocab.specials)
    assert rendered(tokens, vocab) == "<|sop|>spinach, olive oil<|sot|><|en|><|asr|>"
    assert tokens[0] == vocab.specials.sop
    assert vocab.tokenizer.decode(prompt.previous_text) == "spinach, olive oil"


def test_no_timestamps_rendering(vocab):
    tokens = serialize_prompt(PromptSequence(languages=("en",)), vocab.specials)
    assert format_tokens(tokens, vocab) == "<|sot|><|en|><|asr|><|notimestamps|>"


def test_serialize_without_timestamps_flag(vocab):
    prompt = PromptSequence(languages=("de",), task=Task.ST, no_timestamps=False)
    tokens = serialize_prompt(prompt, vocab.specials)
    assert tokens == [vocab.specials.sot, vocab.specials.languages["de"], vocab.specials.st]


def test_round_trip_random_prompts(vocab):
    rng = random.Random(1234)
    codes = vocab.registry.codes
    text_ids = [token for token, _ in vocab.tokenizer.items()]
    for _ in range(10_000):
        languages = tuple(rng.sample(codes, rng.choice([1, 2])))
        previous = tuple(rng.choice(text_ids) for _ in range(rng.choice([0, 0, 1, 5, 20])))
        prompt = PromptSequence(previous_text=previous, languages=languages,
                                task=rng.choice([Task.ASR, Task.ST]), no_timestamps=rng.random() < 0.5)
        assert parse_prompt(serialize_prompt(prompt, vocab.specials), vocab.specials) == prompt


def test_budget_truncates_previous_text_from_the_left(vocab):
    previous = tuple(vocab.tokenizer.encode("abcdefghij"))
    prompt = PromptSequence(previous_text=previous, languages=("en",))
    tokens = serialize_prompt(prompt, vocab.specials, budget=8)
    # sop + 3 kept + sot en asr notimestamps
    assert len(tokens) == 8
    assert vocab.tokenizer.decode(tokens[1:4]) == "hij"


def test_budget_drops_sop_when_nothing_fits(vocab):
    prompt = PromptSequence(previous_text=(100, 101), languages=("en",))
    tokens = serialize_prompt(prompt, vocab.specials, budget=5)
    assert tokens[0] == vocab.specials.sot
    with pytest.raises(PromptBudgetError):
        serialize_prompt(prompt, vocab.specials, budget=3)


def test_unknown_language_is_rejected(vocab):
    with pytest.raises(UnknownLanguageError) as excinfo:
        serialize_prompt(PromptSequence(languages=("xx",)), vocab.specials)
    assert excinfo.value.code == "xx"
    with pytest.raises(UnknownLanguageError):
        vocab.registry.get("ja")


def test_special_token_inside_previous_text(vocab):
    prompt = PromptSequence(previous_text=(100, vocab.specials.eot), languages=("en",))
    with pytest.raises(PromptGrammarError) as excinfo:
        serialize_prompt(prompt, vocab.specials)
    assert excinfo.value.position == 2


@pytest.mark.parametrize("mutate, position", [
    (lambda s, t: t[1:], 0),                                 # missing sot
    (lambda s, t: [s.sot, s.asr], 1),                        # no language
    (lambda s, t: [s.sot, s.languages["en"]], 2),            # no task
    (lambda s, t: t + [s.eot], 4),                           # trailing token
    (lambda s, t: [s.sop, s.sot] + t[1:], 1),                # empty previous text
    (lambda s, t: [s.sot, s.languages["en"], s.languages["en"], s.asr], 2),
])
def test_parse_reports_offending_index(vocab, mutate, position):
    specials = vocab.specials
    base = serialize_prompt(PromptSequence(languages=("en",)), specials)
    with pytest.raises(PromptGrammarError) as excinfo:
        parse_prompt(mutate(specials, base), specials)
    assert excinfo.value.position == position


def test_three_languages_are_rejected(vocab):
    s = vocab.specials
    tokens = [s.sot, s.languages["en"], s.languages["zh"], s.languages["de"], s.asr]
    with pytest.raises(PromptGrammarError) as excinfo:
        parse_prompt(tokens, s)
    assert excinfo.value.position == 3


def test_tokenizer_round_trip(vocab):
    for text in ["也不需要做research", "привет как дела", "add the spinach and olive oil", "مرحبا", "ok\n\t"]:
        assert vocab.tokenizer.decode(vocab.tokenizer.encode(text)) == text


def test_tokenizer_prefers_longest_piece(vocab):
    assert len(vocab.tokenizer.encode("研究")) == 1
    assert len(vocab.tokenizer.encode(" spinach")) == 1


def test_manifest_aliases_and_languages():
    tokenizer, specials, registry = parse_vocab_manifest(SMALL_MANIFEST)
    assert (specials.eot, specials.sot, specials.sop, specials.asr, specials.st) == (3, 4, 5, 6, 7)
    assert registry.codes == ["en", "zh"]
    assert tokenizer.encode("aab") == [0, 2]
    assert tokenizer.vocab_size == 12


def test_manifest_write_is_canonical(tmp_path):
    tokenizer, specials, _ = parse_vocab_manifest(SMALL_MANIFEST)
    path = write_vocab_manifest(tmp_path / "vocab.txt", tokenizer.vocab_size, dict(tokenizer.items()), specials)
    text = path.read_text(encoding="utf-8")
    assert text == render_vocab_manifest(12, dict(tokenizer.items()), specials)
    assert "special sop 5" in text and "special lang:zh 10" in text

    again = tmp_path / "again.txt"
    tokenizer2, specials2, _ = load_vocab_manifest(path)
    write_vocab_manifest(again, tokenizer2.vocab_size, dict(tokenizer2.items()), specials2)
    assert again.read_text(encoding="utf-8") == text


@pytest.mark.parametrize("text, fragment", [
    ("token 0 YQ==\n", "vocab_size header must come first"),
    ("vocab_size 4\ntoken 9 YQ==\n", "outside vocab_size"),
    ("vocab_size 4\ntoken 0 YQ==\ntoken 0 Yg==\n", "duplicate id"),
    ("vocab_size 4\nspecial lang:xx 1\n", "unknown language code"),
    ("vocab_size 4\nspecial bogus 1\n", "unknown special token"),
    ("version 2\nvocab_size 4\n", "unsupported manifest version"),
    ("vocab_size 4\ntoken 0 !!\n", "line 2"),
])
def test_malformed_manifests(text, fragment):
    with pytest.raises(VocabManifestError) as excinfo:
        parse_vocab_manifest(text)
    assert fragment in str(excinfo.value)


def test_missing_special_token():
    text = SMALL_MANIFEST.replace("special translate 7\n", "")
    with pytest.raises(VocabManifestError, match="missing special token 'st'"):
        parse_vocab_manifest(text)


def test_vocabulary_digest_ignores_source(vocab, tmp_path):
    copy = tmp_path / "copy.txt"
    write_vocab_manifest(copy, vocab.vocab_size, dict(vocab.tokenizer.items()), vocab.specials)
    assert load_vocabulary(copy).digest() == vocab.digest()
