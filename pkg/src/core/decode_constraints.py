"""
Vocabulary masks that restrict generation: Unicode-script masks, corpus-frequency
masks and the language restriction applied at the LID step.

Every mask produced here keeps the eot bit set.
"""

import base64
import binascii
import hashlib
import math
from collections import Counter
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .errors import MaskError
from .models import FrequencyMaskConfig, ScriptSpec, VocabMask
from .token_model import Vocabulary

MASK_FORMAT_VERSION = "v1"

CJK = ScriptSpec(name="cjk", ranges=((0x3000, 0x303F), (0x3400, 0x4DBF), (0x4E00, 0x9FFF)))
CYRILLIC = ScriptSpec(name="cyrillic", ranges=((0x0400, 0x04FF), (0x0500, 0x052F)))
ARABIC = ScriptSpec(name="arabic", ranges=((0x0600, 0x06FF), (0x0750, 0x077F)))

SCRIPTS: Dict[str, ScriptSpec] = {spec.name: spec for spec in (CJK, CYRILLIC, ARABIC)}

# target language -> script used by --script auto
LANGUAGE_SCRIPTS: Dict[str, str] = {"zh": "cjk", "ru": "cyrillic", "ar": "arabic"}

# K used for the frequency mask of each target language when none is given
DEFAULT_FREQUENCY_PERCENT: Dict[str, float] = {"de": 40.0, "fr": 50.0}


def get_script(name: str) -> ScriptSpec:
    try:
        return SCRIPTS[name.lower()]
    except KeyError:
        raise MaskError(f"unknown script {name!r}; known scripts: {', '.join(SCRIPTS)}") from None


def token_in_script(piece: bytes, spec: ScriptSpec) -> bool:
    """Complete UTF-8 whose alphabetic characters all fall in the script's ranges."""
    try:
        text = piece.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return all(spec.contains(char) for char in text if char.isalpha())


def _empty(vocab: Vocabulary) -> np.ndarray:
    return np.zeros(vocab.vocab_size, dtype=bool)


def text_generation_mask(vocab: Vocabulary) -> VocabMask:
    """Every ordinary token plus eot; the other special tokens are never generated."""
    allowed = np.ones(vocab.vocab_size, dtype=bool)
    allowed[sorted(vocab.specials.all_ids)] = False
    return VocabMask(allowed, "text generation", eot=vocab.specials.eot)


def build_script_mask(spec: ScriptSpec, vocab: Vocabulary) -> VocabMask:
    """Allow tokens whose text belongs to the script.

    Tokens of only whitespace, digits or punctuation pass; byte fragments that
    are not complete UTF-8 and ids without bytes do not.
    """
    allowed = _empty(vocab)
    specials = vocab.specials.all_ids
    for token, piece in vocab.tokenizer.items():
        if token in specials or not piece:
            continue
        allowed[token] = token_in_script(piece, spec)
    return VocabMask(allowed, f"script {spec.name}", eot=vocab.specials.eot)


def build_frequency_mask(cfg: FrequencyMaskConfig, vocab: Vocabulary) -> VocabMask:
    """Allow the top K% of observed token types of the corpus.

    Types are ranked by count with ties broken by ascending id, and
    ceil(K% x distinct types) of them are kept.
    """
    try:
        tokens = vocab.tokenizer.encode(cfg.corpus)
    except ValueError as e:
        raise MaskError(f"cannot tokenize frequency corpus: {e}") from e
    counts = Counter(tokens)
    if not counts:
        raise MaskError("frequency corpus produced no tokens")

    ranked = sorted(counts, key=lambda token: (-counts[token], token))
    keep = math.ceil(Fraction(str(cfg.percent)) * len(ranked) / 100)
    allowed = _empty(vocab)
    allowed[ranked[:keep]] = True
    return VocabMask(allowed, f"frequency top {cfg.percent:g}% of {len(ranked)} types", eot=vocab.specials.eot)


def load_frequency_corpus(path: Union[str, Path], percent: float) -> FrequencyMaskConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MaskError(f"cannot read frequency corpus {path}: {e}") from e
    try:
        return FrequencyMaskConfig(percent=percent, corpus=text)
    except ValidationError as e:
        raise MaskError(f"{path}: {e.errors()[0]['msg']}") from e


def restrict_languages(allowed: Iterable[str], vocab: Vocabulary) -> VocabMask:
    """Admit exactly the given language tokens (and eot); used only for LID."""
    codes = list(dict.fromkeys(allowed))
    if not codes:
        raise MaskError("language restriction needs at least one language")
    bits = _empty(vocab)
    for code in codes:
        bits[vocab.registry.get(code).token] = True
    return VocabMask(bits, "languages " + ",".join(codes), eot=vocab.specials.eot)


def allowed_languages(mask: VocabMask, vocab: Vocabulary) -> List[str]:
    """Language codes whose token bit is set, in registry order."""
    return [language.code for language in vocab.registry if mask.is_allowed(language.token)]


def intersect(a: VocabMask, b: VocabMask) -> VocabMask:
    """Bitwise AND of two masks over the same vocabulary, eot kept."""
    if a.vocab_size != b.vocab_size:
        raise MaskError(f"mask size mismatch: {a.vocab_size} vs {b.vocab_size}")
    if a.eot is not None and b.eot is not None and a.eot != b.eot:
        raise MaskError(f"masks disagree on the eot id: {a.eot} vs {b.eot}")
    eot = a.eot if a.eot is not None else b.eot
    description = " & ".join(part for part in (a.description, b.description) if part)
    return VocabMask(a.allowed & b.allowed, description, eot=eot)


def mask_digest(mask: VocabMask) -> str:
    """Stable hash of a mask's bits, used in cache keys."""
    packed = np.packbits(mask.allowed, bitorder="little")
    return hashlib.sha256(f"{mask.vocab_size}:".encode("ascii") + packed.tobytes()).hexdigest()


def render_mask(mask: VocabMask) -> str:
    """Header line then one base64 line of the little-endian bitset."""
    if "\n" in mask.description:
        raise MaskError("mask description must be a single line")
    eot = -1 if mask.eot is None else mask.eot
    header = (f"mask {MASK_FORMAT_VERSION} vocab_size {mask.vocab_size} "
              f"allowed {mask.allowed_count} eot {eot} description {mask.description}")
    payload = base64.b64encode(np.packbits(mask.allowed, bitorder="little").tobytes()).decode("ascii")
    return f"{header}\n{payload}\n"


def write_mask(mask: VocabMask, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_mask(mask), encoding="utf-8")
    return path


def parse_mask(text: str) -> VocabMask:
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != 2:
        raise MaskError("mask file must hold a header line and one bitset line")
    parts = lines[0].split(" ", 9)
    if (len(parts) < 9 or parts[0] != "mask" or parts[2] != "vocab_size"
            or parts[4] != "allowed" or parts[6] != "eot" or parts[8] != "description"):
        raise MaskError("expected header 'mask v1 vocab_size N allowed M eot E description <text>'")
    if parts[1] != MASK_FORMAT_VERSION:
        raise MaskError(f"unsupported mask format {parts[1]!r}")
    try:
        vocab_size, allowed_count, eot = int(parts[3]), int(parts[5]), int(parts[7])
        raw = base64.b64decode(lines[1].strip(), validate=True)
    except (ValueError, binascii.Error) as e:
        raise MaskError(f"malformed mask file: {e}") from e

    if len(raw) != (vocab_size + 7) // 8:
        raise MaskError(f"bitset holds {len(raw)} bytes, expected {(vocab_size + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:vocab_size].astype(bool)
    if int(bits.sum()) != allowed_count:
        raise MaskError(f"header says {allowed_count} allowed tokens, bitset has {int(bits.sum())}")
    try:
        return VocabMask(bits, parts[9] if len(parts) > 9 else "", eot=None if eot < 0 else eot)
    except ValueError as e:
        raise MaskError(str(e)) from e


def read_mask(path: Union[str, Path]) -> VocabMask:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MaskError(f"cannot read mask file {path}: {e}") from e
    return parse_mask(text)


def parse_script_specs(text: str) -> Dict[str, ScriptSpec]:
    """Parse `script <name>` blocks followed by `range <lo-hex> <hi-hex>` lines."""
    blocks: Dict[str, List[Tuple[int, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "script" and len(parts) == 2:
            current = parts[1].lower()
            if current in blocks:
                raise MaskError(f"line {lineno}: script {current!r} declared twice")
            blocks[current] = []
        elif parts[0] == "range" and len(parts) == 3:
            if current is None:
                raise MaskError(f"line {lineno}: range before any script line")
            try:
                blocks[current].append((int(parts[1], 16), int(parts[2], 16)))
            except ValueError as e:
                raise MaskError(f"line {lineno}: {e}") from e
        else:
            raise MaskError(f"line {lineno}: expected 'script <name>' or 'range <lo-hex> <hi-hex>'")

    specs: Dict[str, ScriptSpec] = {}
    for name, ranges in blocks.items():
        try:
            specs[name] = ScriptSpec(name=name, ranges=tuple(sorted(ranges)))
        except ValidationError as e:
            raise MaskError(f"script {name!r}: {e.errors()[0]['msg']}") from e
    return specs


def load_script_specs(path: Union[str, Path]) -> Dict[str, ScriptSpec]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MaskError(f"cannot read script specs {path}: {e}") from e
    return parse_script_specs(text)
