"""
Constrained autoregressive decoding and the LID step on top of a backend.
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..execution.backend import Backend, BackendInfo, check_logits
from .decode_constraints import allowed_languages, intersect, restrict_languages, text_generation_mask
from .errors import BackendError, DecodeError, MaskError, PromptBudgetError
from .models import ConcatConfig, DecodeConfig, DecodeStrategy, LidResult, PromptSequence, Transcription, VocabMask
from .prompt_builder import build_cs_prompt
from .token_model import Vocabulary, prompt_budget, serialize_prompt

# stands in for -inf so masked logits never produce NaN
MASKED_LOGIT = float(np.finfo(np.float32).min)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    values = np.asarray(logits, dtype=np.float64)
    shifted = values - values.max()
    return shifted - np.log(np.exp(shifted).sum())


@dataclass
class _Beam:
    tokens: List[int] = field(default_factory=list)
    score: float = 0.0


class Decoder:
    """Runs LID and decode loops for one vocabulary against one backend."""

    def __init__(self, backend: Backend, vocab: Vocabulary):
        self.backend = backend
        self.vocab = vocab
        self._text_mask = text_generation_mask(vocab)
        self._info: Optional[BackendInfo] = None

    def info(self) -> BackendInfo:
        if self._info is None:
            info = self.backend.info()
            if info.vocab_size != self.vocab.vocab_size:
                raise BackendError(
                    f"backend vocabulary has {info.vocab_size} tokens, manifest has {self.vocab.vocab_size}"
                )
            self._info = info
        return self._info

    def _check_supported(self, languages: Iterable[str]) -> None:
        supported = set(self.info().languages)
        for code in languages:
            self.vocab.registry.get(code)
            if code not in supported:
                raise BackendError(f"backend does not support language {code!r}")

    def run_lid(self, audio: str, allowed: Sequence[str]) -> LidResult:
        """One step from <|sot|>, softmax over the allowed language tokens only."""
        requested = list(dict.fromkeys(allowed))
        mask = restrict_languages(requested, self.vocab)
        codes = sorted(allowed_languages(mask, self.vocab), key=requested.index)
        self._check_supported(codes)

        logits = check_logits(self.backend.step(audio, [self.vocab.specials.sot]), self.vocab.vocab_size)
        ids = [self.vocab.registry.get(code).token for code in codes]
        probs = np.exp(log_softmax(logits[ids]))
        probs = probs / probs.sum()

        best = int(np.argmax(probs))
        return LidResult(
            probs={code: float(p) for code, p in zip(codes, probs)},
            argmax=codes[best],
            confidence=min(1.0, float(probs[best])),
        )

    def effective_mask(self, cfg: DecodeConfig) -> VocabMask:
        if cfg.mask is None:
            return self._text_mask
        if cfg.mask.vocab_size != self.vocab.vocab_size:
            raise MaskError(f"mask covers {cfg.mask.vocab_size} tokens, vocabulary has {self.vocab.vocab_size}")
        return intersect(self._text_mask, cfg.mask)

    def _step(self, audio: str, context: List[int], generated: List[int]) -> np.ndarray:
        try:
            return check_logits(self.backend.step(audio, context), self.vocab.vocab_size)
        except BackendError as e:
            raise DecodeError(f"backend failed after {len(generated)} tokens: {e}", generated) from e

    def decode(self, audio: str, prompt: PromptSequence, cfg: Optional[DecodeConfig] = None) -> Transcription:
        """Generate from the serialized prompt until eot or the token limit."""
        cfg = cfg or DecodeConfig()
        info = self.info()
        self._check_supported(prompt.languages)
        mask = self.effective_mask(cfg)

        context = serialize_prompt(prompt, self.vocab.specials, budget=prompt_budget(info.n_ctx))
        if len(context) >= info.n_ctx:
            raise PromptBudgetError(f"prompt of {len(context)} tokens exceeds the context of {info.n_ctx}")
        limit = min(cfg.max_new_tokens, info.n_ctx - len(context))

        if limit == 0:
            tokens: List[int] = []
        elif cfg.strategy == DecodeStrategy.BEAM:
            tokens = self._beam(audio, context, mask, limit, cfg.beam_width)
        else:
            tokens = self._greedy(audio, context, mask, limit)
        return Transcription(text=self.detokenize(tokens), tokens=tuple(tokens), prompt=prompt)

    def detokenize(self, tokens: Iterable[int]) -> str:
        specials = self.vocab.specials.all_ids
        return self.vocab.tokenizer.decode(token for token in tokens if token not in specials)

    def _greedy(self, audio: str, context: List[int], mask: VocabMask, limit: int) -> List[int]:
        eot = self.vocab.specials.eot
        generated: List[int] = []
        while len(generated) < limit:
            logits = self._step(audio, context + generated, generated)
            masked = np.where(mask.allowed, logits, np.float32(MASKED_LOGIT))
            token = int(np.argmax(masked))
            generated.append(token)
            if token == eot:
                break
        return generated

    def _beam(self, audio: str, context: List[int], mask: VocabMask, limit: int, width: int) -> List[int]:
        """Beam search scored by summed log-probability, finished beams ranked by score per token.

        Candidates are ordered by (-score, beam index, -logprob, token id), so width 1
        reproduces greedy decoding.
        """
        eot = self.vocab.specials.eot
        allowed = mask.allowed
        beams = [_Beam()]
        finished: List[_Beam] = []

        for _ in range(limit):
            candidates: List[Tuple[float, int, float, int]] = []
            for index, beam in enumerate(beams):
                logits = self._step(audio, context + beam.tokens, beam.tokens)
                logprobs = np.full(logits.shape, -np.inf)
                logprobs[allowed] = log_softmax(logits[allowed])
                for token in np.argsort(-logprobs, kind="stable")[:width + 1]:
                    if np.isfinite(logprobs[token]):
                        lp = float(logprobs[token])
                        candidates.append((-(beam.score + lp), index, -lp, int(token)))
            candidates.sort()

            next_beams: List[_Beam] = []
            for neg_score, index, _, token in candidates:
                extended = _Beam(beams[index].tokens + [token], -neg_score)
                if token == eot:
                    finished.append(extended)
                else:
                    next_beams.append(extended)
                if len(next_beams) == width:
                    break
            beams = next_beams
            if len(finished) >= width or not beams:
                break

        pool = finished if finished else beams
        best = max(range(len(pool)), key=lambda i: (pool[i].score / max(1, len(pool[i].tokens)), -i))
        return pool[best].tokens

    def transcribe_cs(self, audio: str, cfg: ConcatConfig, decode_cfg: Optional[DecodeConfig] = None) -> Transcription:
        """LID over the configured pair, then the code-switched prompt, then decode."""
        lid = self.run_lid(audio, cfg.languages)
        prompt = build_cs_prompt(self.vocab, lid, cfg)
        result = self.decode(audio, prompt, decode_cfg)
        return result.model_copy(update={"lid": lid})
