"""
Tests for script masks, frequency masks, language restriction and mask files.
"""

import random
from fractions import Fraction

import numpy as np
import pytest

from src.core.decode_constraints import (
    ARABIC,
    CJK,
    CYRILLIC,
    allowed_languages,
    build_frequency_mask,
    build_script_mask,
    get_script,
    intersect,
    load_frequency_corpus,
    load_script_specs,
    mask_digest,
    parse_mask,
    parse_script_specs,
    read_mask,
    render_mask,
    restrict_languages,
    text_generation_mask,
    token_in_script,
    write_mask,
)
from src.core.errors import MaskError, UnknownLanguageError
from src.core.models import FrequencyMaskConfig, LanguageCode, SpecialTokens, VocabMask
from src.core.token_model import ByteTokenizer, LanguageRegistry, Vocabulary

from conftest import ROOT

OTHER_LETTERS = "abcXYZéßΩλ"
NEUTRAL = " 0123456789.,!?-'\t"


def random_piece(rng, spec):
    chunks = []
    for _ in range(rng.randint(1, 4)):
        kind = rng.random()
        if kind < 0.4:
            lo, hi = rng.choice(spec.ranges)
            chunks.append(chr(rng.randint(lo, hi)).encode("utf-8"))
        elif kind < 0.55:
            chunks.append(rng.choice(OTHER_LETTERS).encode("utf-8"))
        elif kind < 0.75:
            chunks.append(rng.choice(NEUTRAL).encode("utf-8"))
        elif kind < 0.9:
            lo, hi = rng.choice(spec.ranges)
            encoded = chr(rng.randint(lo, hi)).encode("utf-8")
            chunks.append(encoded[:rng.randint(1, len(encoded) - 1)] if len(encoded) > 1 else encoded)
        else:
            chunks.append(bytes(rng.randint(0, 255) for _ in range(rng.randint(1, 3))))
    return b"".join(chunks)


def random_vocabulary(rng, spec, size=10_000):
    pieces = {token: random_piece(rng, spec) for token in range(size)}
    pieces[size - 1] = b""
    specials = SpecialTokens(eot=size, sot=size + 1, sop=size + 2, asr=size + 3, st=size + 4,
                             no_timestamps=size + 5, languages={"en": size + 6})
    tokenizer = ByteTokenizer(size + 7, pieces, specials.all_ids)
    registry = LanguageRegistry([LanguageCode(code="en", token=size + 6)])
    return Vocabulary(tokenizer=tokenizer, specials=specials, registry=registry)


def brute_force_in_script(piece, ranges):
    if not piece:
        return False
    try:
        text = piece.decode("utf-8")
    except UnicodeDecodeError:
        return False
    for char in text:
        if not char.isalpha():
            continue
        inside = False
        for lo, hi in ranges:
            if lo <= ord(char) <= hi:
                inside = True
        if not inside:
            return False
    return True


@pytest.mark.parametrize("spec", [CJK, CYRILLIC, ARABIC], ids=lambda spec: spec.name)
def test_script_mask_matches_brute_force(spec):
    rng = random.Random(f"script-{spec.name}")
    vocab = random_vocabulary(rng, spec)
    mask = build_script_mask(spec, vocab)
    for token, piece in vocab.tokenizer.items():
        assert mask.is_allowed(token) == brute_force_in_script(piece, spec.ranges), piece
    for token in vocab.specials.all_ids - {vocab.specials.eot}:
        assert not mask.is_allowed(token)
    assert mask.is_allowed(vocab.specials.eot)


def test_script_mask_on_toy_vocabulary(vocab):
    mask = build_script_mask(get_script("cyrillic"), vocab)
    encode = vocab.tokenizer.encode
    assert mask.is_allowed(encode(" привет")[0])
    assert mask.is_allowed(encode(" ")[0])
    assert not mask.is_allowed(encode(" hello")[0])
    assert not mask.is_allowed(encode("研究")[0])
    # a lone UTF-8 lead byte is not text of any script
    assert not mask.is_allowed(0xD0)


def test_token_in_script_edge_cases():
    assert token_in_script("研究。".encode("utf-8"), CJK)
    assert token_in_script(b"123 ,", CYRILLIC)
    assert not token_in_script("研".encode("utf-8")[:2], CJK)
    assert not token_in_script("мир x".encode("utf-8"), CYRILLIC)


def count_oracle(tokens):
    counts = {}
    for token in tokens:
        counts[token] = counts.get(token, 0) + 1
    return counts


def frequency_oracle(tokens, percent):
    counts = count_oracle(tokens)
    types = list(counts)
    n = len(types)
    keep = next(k for k in range(n + 1) if Fraction(k * 100) >= Fraction(str(percent)) * n)
    allowed = set()
    for t in types:
        rank = sum(1 for u in types if counts[u] > counts[t] or (counts[u] == counts[t] and u < t))
        if rank < keep:
            allowed.add(t)
    return allowed


CORPUS_WORDS = ["der ", "die ", "und ", "Hund ", "x", "研究", "привет ", "a", "b", "ist ", " nicht", "Katze "]
PERCENTS = [1, 5, 10, 12.5, 25, 33, 40, 50, 75, 99.5, 100]


def random_corpus(rng):
    return "".join(rng.choice(CORPUS_WORDS) for _ in range(rng.randint(1, 60)))


def test_frequency_mask_matches_counting_oracle(vocab):
    rng = random.Random(99)
    eot = vocab.specials.eot
    for _ in range(1000):
        corpus = random_corpus(rng)
        percent = rng.choice(PERCENTS)
        mask = build_frequency_mask(FrequencyMaskConfig(percent=percent, corpus=corpus), vocab)
        expected = frequency_oracle(vocab.tokenizer.encode(corpus), percent) | {eot}
        assert set(mask.allowed_ids()) == expected


def test_frequency_mask_is_monotone_in_percent(vocab):
    rng = random.Random(5)
    for _ in range(100):
        corpus = random_corpus(rng)
        masks = [build_frequency_mask(FrequencyMaskConfig(percent=p, corpus=corpus), vocab) for p in PERCENTS]
        for smaller, larger in zip(masks, masks[1:]):
            assert not np.any(smaller.allowed & ~larger.allowed)


def test_frequency_mask_keeps_ceiling_of_types(vocab):
    # 10 distinct types, 25% keeps ceil(2.5) = 3
    corpus = "abcdefghij" + "a" * 5 + "b" * 4 + "c" * 3 + "d" * 2
    mask = build_frequency_mask(FrequencyMaskConfig(percent=25, corpus=corpus), vocab)
    kept = {vocab.tokenizer.decode([t]) for t in mask.allowed_ids() if t != vocab.specials.eot}
    assert kept == {"a", "b", "c"}
    assert mask.description == "frequency top 25% of 10 types"


def test_frequency_corpus_file():
    cfg = load_frequency_corpus(ROOT / "data" / "corpora" / "de.txt", 40)
    assert cfg.percent == 40 and "Hund" in cfg.corpus
    with pytest.raises(MaskError):
        load_frequency_corpus(ROOT / "data" / "corpora" / "missing.txt", 40)


def test_untokenizable_corpus_is_a_mask_error():
    specials = SpecialTokens(eot=2, sot=3, sop=4, asr=5, st=6, no_timestamps=7, languages={"en": 8})
    small = Vocabulary(tokenizer=ByteTokenizer(9, {0: b"a", 1: b"b"}, specials.all_ids), specials=specials,
                       registry=LanguageRegistry([LanguageCode(code="en", token=8)]))
    with pytest.raises(MaskError):
        build_frequency_mask(FrequencyMaskConfig(percent=50, corpus="abc"), small)


def test_restrict_languages(vocab):
    mask = restrict_languages(["zh", "en"], vocab)
    specials = vocab.specials
    assert set(mask.allowed_ids()) == {specials.languages["zh"], specials.languages["en"], specials.eot}
    assert allowed_languages(mask, vocab) == ["en", "zh"]
    with pytest.raises(MaskError):
        restrict_languages([], vocab)
    with pytest.raises(UnknownLanguageError):
        restrict_languages(["xx"], vocab)


def test_every_mask_keeps_eot(vocab):
    rng = np.random.default_rng(3)
    eot = vocab.specials.eot
    masks = [VocabMask(np.ones(vocab.vocab_size, dtype=bool), eot=eot), text_generation_mask(vocab),
             build_script_mask(CJK, vocab),
             restrict_languages(["ru"], vocab)]
    masks.append(VocabMask(np.zeros(vocab.vocab_size, dtype=bool), eot=eot))
    for _ in range(20):
        masks.append(VocabMask(rng.random(vocab.vocab_size) < 0.5, eot=eot))
    for a in masks:
        assert a.is_allowed(eot)
        for b in masks[:5]:
            assert intersect(a, b).is_allowed(eot)


def test_text_generation_mask_denies_specials(vocab):
    mask = text_generation_mask(vocab)
    assert set(range(vocab.vocab_size)) - set(mask.allowed_ids()) == vocab.specials.all_ids - {vocab.specials.eot}


def test_intersect(vocab):
    a = build_script_mask(CJK, vocab)
    b = text_generation_mask(vocab)
    both = intersect(a, b)
    assert np.array_equal(both.allowed, a.allowed & b.allowed | (np.arange(vocab.vocab_size) == vocab.specials.eot))
    assert both.description == "script cjk & text generation"
    with pytest.raises(MaskError):
        intersect(a, VocabMask(np.ones(5, dtype=bool)))
    with pytest.raises(MaskError):
        intersect(VocabMask(np.ones(5, dtype=bool), eot=1), VocabMask(np.ones(5, dtype=bool), eot=2))


def test_mask_bits_are_read_only(vocab):
    mask = build_script_mask(CYRILLIC, vocab)
    with pytest.raises(ValueError):
        mask.allowed[0] = True


def test_mask_file(vocab, tmp_path):
    mask = intersect(build_script_mask(CYRILLIC, vocab), text_generation_mask(vocab))
    path = write_mask(mask, tmp_path / "ru.mask")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == (f"mask v1 vocab_size {vocab.vocab_size} allowed {mask.allowed_count} "
                      f"eot {vocab.specials.eot} description script cyrillic & text generation")
    loaded = read_mask(path)
    assert np.array_equal(loaded.allowed, mask.allowed)
    assert loaded.eot == vocab.specials.eot
    assert mask_digest(loaded) == mask_digest(mask)


@pytest.mark.parametrize("text", [
    "mask v1 vocab_size 8 allowed 1 eot -1 description x\n",
    "mask v2 vocab_size 8 allowed 1 eot -1 description x\nAQ==\n",
    "mask v1 vocab_size 8 allowed 2 eot -1 description x\nAQ==\n",
    "mask v1 vocab_size 16 allowed 1 eot -1 description x\nAQ==\n",
    "mask v1 vocab_size 8 allowed 1 eot -1 description x\n!!\n",
])
def test_malformed_mask_files(text):
    with pytest.raises(MaskError):
        parse_mask(text)


def test_mask_without_eot():
    mask = parse_mask("mask v1 vocab_size 8 allowed 1 eot -1 description \nAQ==\n")
    assert mask.eot is None
    assert mask.allowed_ids() == [0]
    assert render_mask(mask).startswith("mask v1 vocab_size 8 allowed 1 eot -1 description")


def test_script_specs_file():
    scripts = load_script_specs(ROOT / "data" / "scripts.txt")
    assert set(scripts) == {"cjk", "cyrillic", "arabic", "greek"}
    assert scripts["cyrillic"] == CYRILLIC
    assert scripts["greek"].contains("λ")


@pytest.mark.parametrize("text", [
    "range 0400 04FF\n",
    "script a\nrange 0400 04FF\nrange 0450 0500\n",
    "script a\nrange zz 04FF\n",
    "script a\nscript a\n",
    "script a\nbogus\n",
])
def test_malformed_script_specs(text):
    with pytest.raises(MaskError):
        parse_script_specs(text)


def test_unknown_script_name():
    with pytest.raises(MaskError, match="unknown script"):
        get_script("klingon")
