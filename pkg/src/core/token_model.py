"""
Token model: vocabulary manifest, reference tokenizer, language registry
and the decoder prompt grammar.

Prompt grammar (the no-timestamps flag is always emitted by this toolkit):

    [<|sop|> previous-text...] <|sot|> <|lang|> [<|lang|>] <|task|> [<|notimestamps|>]
"""

import base64
import binascii
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from pydantic import ValidationError

from .errors import PromptBudgetError, PromptGrammarError, UnknownLanguageError, VocabManifestError
from .models import LanguageCode, PromptSequence, SpecialTokens, Task

MANIFEST_VERSION = 1
DEFAULT_N_CTX = 448

# Whisper's multilingual language set, in special-token order.
WHISPER_LANGUAGES: Dict[str, str] = {
    "en": "english", "zh": "chinese", "de": "german", "es": "spanish", "ru": "russian",
    "ko": "korean", "fr": "french", "ja": "japanese", "pt": "portuguese", "tr": "turkish",
    "pl": "polish", "ca": "catalan", "nl": "dutch", "ar": "arabic", "sv": "swedish",
    "it": "italian", "id": "indonesian", "hi": "hindi", "fi": "finnish", "vi": "vietnamese",
    "he": "hebrew", "uk": "ukrainian", "el": "greek", "ms": "malay", "cs": "czech",
    "ro": "romanian", "da": "danish", "hu": "hungarian", "ta": "tamil", "no": "norwegian",
    "th": "thai", "ur": "urdu", "hr": "croatian", "bg": "bulgarian", "lt": "lithuanian",
    "la": "latin", "mi": "maori", "ml": "malayalam", "cy": "welsh", "sk": "slovak",
    "te": "telugu", "fa": "persian", "lv": "latvian", "bn": "bengali", "sr": "serbian",
    "az": "azerbaijani", "sl": "slovenian", "kn": "kannada", "et": "estonian", "mk": "macedonian",
    "br": "breton", "eu": "basque", "is": "icelandic", "hy": "armenian", "ne": "nepali",
    "mn": "mongolian", "bs": "bosnian", "kk": "kazakh", "sq": "albanian", "sw": "swahili",
    "gl": "galician", "mr": "marathi", "pa": "punjabi", "si": "sinhala", "km": "khmer",
    "sn": "shona", "yo": "yoruba", "so": "somali", "af": "afrikaans", "oc": "occitan",
    "ka": "georgian", "be": "belarusian", "tg": "tajik", "sd": "sindhi", "gu": "gujarati",
    "am": "amharic", "yi": "yiddish", "lo": "lao", "uz": "uzbek", "fo": "faroese",
    "ht": "haitian creole", "ps": "pashto", "tk": "turkmen", "nn": "nynorsk", "mt": "maltese",
    "sa": "sanskrit", "lb": "luxembourgish", "my": "myanmar", "bo": "tibetan", "tl": "tagalog",
    "mg": "malagasy", "as": "assamese", "tt": "tatar", "haw": "hawaiian", "ln": "lingala",
    "ha": "hausa", "ba": "bashkir", "jw": "javanese", "su": "sundanese",
}

REQUIRED_SPECIALS: Tuple[str, ...] = ("sop", "sot", "eot", "asr", "st", "no_timestamps")

SPECIAL_ALIASES: Dict[str, str] = {
    "startofprev": "sop",
    "startoftranscript": "sot",
    "endoftext": "eot",
    "transcribe": "asr",
    "translate": "st",
    "notimestamps": "no_timestamps",
}

LANGUAGE_PREFIX = "lang:"


class Tokenizer(Protocol):
    """What the toolkit needs from a tokenizer."""

    @property
    def vocab_size(self) -> int: ...

    def encode(self, text: str) -> List[int]: ...

    def decode(self, tokens: Iterable[int]) -> str: ...

    def token_bytes(self, token: int) -> bytes: ...


class ByteTokenizer:
    """Reference tokenizer: greedy longest match over the manifest's byte strings.

    This is not Whisper's BPE merge order; it only guarantees the round trip
    decode(encode(text)) == text for text made of manifest-covered bytes.
    """

    def __init__(self, vocab_size: int, token_bytes: Mapping[int, bytes],
                 special_ids: Iterable[int] = ()):
        self._vocab_size = vocab_size
        self._bytes: Dict[int, bytes] = dict(token_bytes)
        self._special_ids = frozenset(special_ids)
        self._lookup: Dict[bytes, int] = {}
        for token in sorted(self._bytes):
            piece = self._bytes[token]
            if token in self._special_ids or not piece:
                continue
            self._lookup.setdefault(piece, token)
        self._max_len = max((len(piece) for piece in self._lookup), default=0)

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def special_ids(self) -> frozenset:
        return self._special_ids

    def encode(self, text: str) -> List[int]:
        data = text.encode("utf-8")
        tokens: List[int] = []
        pos = 0
        while pos < len(data):
            for length in range(min(self._max_len, len(data) - pos), 0, -1):
                token = self._lookup.get(data[pos:pos + length])
                if token is not None:
                    tokens.append(token)
                    pos += length
                    break
            else:
                raise ValueError(f"byte 0x{data[pos]:02x} at offset {pos} is not covered by the vocabulary")
        return tokens

    def decode(self, tokens: Iterable[int]) -> str:
        return b"".join(self.token_bytes(token) for token in tokens).decode("utf-8", errors="replace")

    def token_bytes(self, token: int) -> bytes:
        if not 0 <= token < self._vocab_size:
            raise ValueError(f"token id {token} outside vocabulary of size {self._vocab_size}")
        return self._bytes.get(token, b"")

    def items(self) -> Iterator[Tuple[int, bytes]]:
        for token in sorted(self._bytes):
            yield token, self._bytes[token]


class LanguageRegistry:
    """The languages a loaded vocabulary declares, in token-id order."""

    def __init__(self, languages: Iterable[LanguageCode]):
        self._by_code: Dict[str, LanguageCode] = {}
        for language in sorted(languages, key=lambda item: item.token):
            self._by_code[language.code] = language

    def get(self, code: str) -> LanguageCode:
        try:
            return self._by_code[code]
        except KeyError:
            raise UnknownLanguageError(code) from None

    def require(self, codes: Iterable[str]) -> None:
        for code in codes:
            self.get(code)

    @property
    def codes(self) -> List[str]:
        return list(self._by_code)

    def __contains__(self, code: object) -> bool:
        return code in self._by_code

    def __len__(self) -> int:
        return len(self._by_code)

    def __iter__(self) -> Iterator[LanguageCode]:
        return iter(self._by_code.values())


@dataclass(frozen=True)
class Vocabulary:
    """Tokenizer, special tokens and language registry loaded together."""
    tokenizer: ByteTokenizer
    specials: SpecialTokens
    registry: LanguageRegistry
    n_ctx: int = DEFAULT_N_CTX
    source: Optional[str] = field(default=None, compare=False)

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.vocab_size

    @property
    def prompt_budget(self) -> int:
        return prompt_budget(self.n_ctx)

    def digest(self) -> str:
        """Hash of the canonical manifest text; independent of where it was loaded from."""
        text = render_vocab_manifest(self.vocab_size, dict(self.tokenizer.items()), self.specials)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def prompt_budget(n_ctx: int = DEFAULT_N_CTX) -> int:
    """Maximum serialized prompt length: half of the decoder context."""
    return n_ctx // 2


def _canonical_special(name: str) -> str:
    return SPECIAL_ALIASES.get(name, name)


def parse_vocab_manifest(text: str) -> Tuple[ByteTokenizer, SpecialTokens, LanguageRegistry]:
    """Parse manifest text (see docs/formats.md) into tokenizer, specials and registry."""
    vocab_size: Optional[int] = None
    token_bytes: Dict[int, bytes] = {}
    specials: Dict[str, int] = {}
    languages: Dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "version":
                if vocab_size is not None or int(parts[1]) != MANIFEST_VERSION:
                    raise VocabManifestError(f"line {lineno}: unsupported manifest version {parts[1]}")
            elif kind == "vocab_size":
                if vocab_size is not None:
                    raise VocabManifestError(f"line {lineno}: vocab_size declared twice")
                vocab_size = int(parts[1])
                if vocab_size <= 0:
                    raise VocabManifestError(f"line {lineno}: vocab_size must be positive")
            elif vocab_size is None:
                raise VocabManifestError(f"line {lineno}: vocab_size header must come first")
            elif kind == "token":
                if len(parts) != 3:
                    raise VocabManifestError(f"line {lineno}: expected 'token <id> <base64>'")
                token = _check_id(int(parts[1]), vocab_size, lineno)
                if token in token_bytes:
                    raise VocabManifestError(f"line {lineno}: duplicate id {token}")
                token_bytes[token] = base64.b64decode(parts[2], validate=True)
            elif kind == "special":
                if len(parts) != 3:
                    raise VocabManifestError(f"line {lineno}: expected 'special <name> <id>'")
                name = parts[1]
                token = _check_id(int(parts[2]), vocab_size, lineno)
                if name.startswith(LANGUAGE_PREFIX):
                    code = name[len(LANGUAGE_PREFIX):]
                    if code not in WHISPER_LANGUAGES:
                        raise VocabManifestError(f"line {lineno}: unknown language code {code!r}")
                    if code in languages:
                        raise VocabManifestError(f"line {lineno}: language {code!r} declared twice")
                    languages[code] = token
                else:
                    name = _canonical_special(name)
                    if name not in REQUIRED_SPECIALS:
                        raise VocabManifestError(f"line {lineno}: unknown special token {parts[1]!r}")
                    if name in specials:
                        raise VocabManifestError(f"line {lineno}: special {name!r} declared twice")
                    specials[name] = token
            else:
                raise VocabManifestError(f"line {lineno}: unknown directive {kind!r}")
        except (ValueError, IndexError, binascii.Error) as e:
            raise VocabManifestError(f"line {lineno}: {e}") from e

    if vocab_size is None:
        raise VocabManifestError("manifest has no vocab_size header")
    for name in REQUIRED_SPECIALS:
        if name not in specials:
            raise VocabManifestError(f"missing special token {name!r}")
    if not languages:
        raise VocabManifestError("manifest declares no language tokens")

    special_ids = list(specials.values()) + list(languages.values())
    if len(special_ids) != len(set(special_ids)):
        raise VocabManifestError("duplicate id among special tokens")
    clashing = sorted(set(special_ids) & set(token_bytes))
    if clashing:
        raise VocabManifestError(f"duplicate id {clashing[0]}: used by a token and a special token")

    special_tokens = SpecialTokens(languages=languages, **specials)
    registry = LanguageRegistry(LanguageCode(code=code, token=token) for code, token in languages.items())
    tokenizer = ByteTokenizer(vocab_size, token_bytes, special_ids)
    return tokenizer, special_tokens, registry


def _check_id(token: int, vocab_size: int, lineno: int) -> int:
    if not 0 <= token < vocab_size:
        raise VocabManifestError(f"line {lineno}: id {token} outside vocab_size {vocab_size}")
    return token


def load_vocab_manifest(path: Union[str, Path]) -> Tuple[ByteTokenizer, SpecialTokens, LanguageRegistry]:
    """Load a vocabulary manifest file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise VocabManifestError(f"cannot read vocabulary manifest {path}: {e}") from e
    return parse_vocab_manifest(text)


def load_vocabulary(path: Union[str, Path], n_ctx: int = DEFAULT_N_CTX) -> Vocabulary:
    """Load a manifest and bundle its parts."""
    tokenizer, specials, registry = load_vocab_manifest(path)
    return Vocabulary(tokenizer=tokenizer, specials=specials, registry=registry,
                      n_ctx=n_ctx, source=str(path))


def render_vocab_manifest(vocab_size: int, token_bytes: Mapping[int, bytes],
                          specials: SpecialTokens) -> str:
    """Canonical manifest text: version, header, tokens by id, fixed specials, languages by id."""
    lines = [f"version {MANIFEST_VERSION}", f"vocab_size {vocab_size}"]
    for token in sorted(token_bytes):
        lines.append(f"token {token} {base64.b64encode(token_bytes[token]).decode('ascii')}")
    for name in REQUIRED_SPECIALS:
        lines.append(f"special {name} {getattr(specials, name)}")
    for code, token in sorted(specials.languages.items(), key=lambda item: item[1]):
        lines.append(f"special {LANGUAGE_PREFIX}{code} {token}")
    return "\n".join(lines) + "\n"


def write_vocab_manifest(path: Union[str, Path], vocab_size: int,
                         token_bytes: Mapping[int, bytes], specials: SpecialTokens) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_vocab_manifest(vocab_size, token_bytes, specials), encoding="utf-8")
    return path


def serialize_prompt(prompt: PromptSequence, specials: SpecialTokens,
                     budget: Optional[int] = None) -> List[int]:
    """Lay a prompt out in grammar order.

    When a budget is given, previous text is cut from the left so the result
    fits; the sop block disappears if nothing of it remains.
    """
    head: List[int] = [specials.sot]
    for code in prompt.languages:
        try:
            head.append(specials.languages[code])
        except KeyError:
            raise UnknownLanguageError(code) from None
    head.append(specials.task_token(prompt.task))
    if prompt.no_timestamps:
        head.append(specials.no_timestamps)

    previous = list(prompt.previous_text)
    special_ids = specials.all_ids
    for position, token in enumerate(previous, 1):
        if token in special_ids:
            raise PromptGrammarError("special token inside previous text", position)

    if budget is not None:
        if len(head) > budget:
            raise PromptBudgetError(f"prompt needs {len(head)} tokens but the budget is {budget}")
        room = budget - len(head) - 1
        if len(previous) > room:
            previous = previous[len(previous) - room:] if room > 0 else []

    if not previous:
        return head
    return [specials.sop] + previous + head


def parse_prompt(tokens: Sequence[int], specials: SpecialTokens) -> PromptSequence:
    """Inverse of serialize_prompt; reports the index of the first offending token."""
    tokens = list(tokens)
    language_ids = specials.language_by_id
    special_ids = specials.all_ids
    pos = 0
    previous: List[int] = []

    if pos < len(tokens) and tokens[pos] == specials.sop:
        pos += 1
        while pos < len(tokens) and tokens[pos] not in special_ids:
            previous.append(tokens[pos])
            pos += 1
        if not previous:
            raise PromptGrammarError("empty previous-text block after <|sop|>", pos)

    if pos >= len(tokens) or tokens[pos] != specials.sot:
        raise PromptGrammarError("expected <|sot|>", pos)
    pos += 1

    languages: List[str] = []
    while pos < len(tokens) and tokens[pos] in language_ids:
        code = language_ids[tokens[pos]]
        if code in languages:
            raise PromptGrammarError(f"duplicate language token <|{code}|>", pos)
        if len(languages) == 2:
            raise PromptGrammarError("more than two language tokens", pos)
        languages.append(code)
        pos += 1
    if not languages:
        raise PromptGrammarError("expected a language token", pos)

    if pos >= len(tokens) or tokens[pos] not in (specials.asr, specials.st):
        raise PromptGrammarError("expected a task token", pos)
    task = Task.ASR if tokens[pos] == specials.asr else Task.ST
    pos += 1

    no_timestamps = False
    if pos < len(tokens) and tokens[pos] == specials.no_timestamps:
        no_timestamps = True
        pos += 1
    if pos != len(tokens):
        raise PromptGrammarError("unexpected token after the prompt", pos)

    try:
        return PromptSequence(previous_text=tuple(previous), languages=tuple(languages),
                              task=task, no_timestamps=no_timestamps)
    except ValidationError as e:
        raise PromptGrammarError(str(e), 0) from e


def format_tokens(tokens: Iterable[int], vocab: Vocabulary, show_no_timestamps: bool = True) -> str:
    """Render tokens as text with special tokens written <|name|>."""
    names = vocab.specials.names()
    pieces: List[str] = []
    pending = bytearray()
    for token in tokens:
        if token in names:
            if pending:
                pieces.append(pending.decode("utf-8", errors="replace"))
                pending.clear()
            if token == vocab.specials.no_timestamps and not show_no_timestamps:
                continue
            pieces.append(f"<|{names[token]}|>")
        else:
            pending.extend(vocab.tokenizer.token_bytes(token))
    if pending:
        pieces.append(pending.decode("utf-8", errors="replace"))
    return "".join(pieces)
