"""Greedy and beam-search decoding.

Both decoders run over a *step function* mapping a list of equal-length
prefixes to next-token log-probabilities ``[n, vocab]``. :func:`model_step_fn`
adapts a trained model; tests plug in hand-built distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bpe import EOS, SOS
from .model import ComFormerModel
from .tensor import Tensor

StepFn = Callable[[Sequence[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    @property
    def length(self) -> int:
        """Generated tokens, SOS excluded."""
        return len(self.tokens) - 1

    def score(self, alpha: float = 0.0) -> float:
        if alpha == 0.0 or self.length == 0:
            return self.logprob
        return self.logprob / self.length**alpha


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def model_step_fn(model: ComFormerModel, code_ids: Sequence[int], ast_ids: Sequence[int]) -> StepFn:
    """Encode once, then score prefixes against the cached context."""
    context, mask = model.fuse_encode(np.asarray([code_ids]), np.asarray([ast_ids]))
    ctx = context.data

    def step(prefixes: Sequence[tuple[int, ...]]) -> np.ndarray:
        n = len(prefixes)
        tiled = Tensor(np.repeat(ctx, n, axis=0))
        logits = model.decoder_forward(tiled, np.repeat(mask, n, axis=0), np.asarray(prefixes))
        return _log_softmax(logits.data[:, -1, :])

    return step


def _clamp_len(model: ComFormerModel, max_len: int) -> int:
    return min(max_len, model.config.max_comment_len)


def greedy_core(step: StepFn, max_len: int) -> list[int]:
    tokens = [SOS]
    for _ in range(max_len):
        nxt = int(np.argmax(step([tuple(tokens)])[0]))
        tokens.append(nxt)
        if nxt == EOS:
            break
    return tokens


def greedy_decode(model: ComFormerModel, code_ids, ast_ids, max_len: int = 30) -> list[int]:
    """Append the argmax token until EOS or ``max_len`` generated tokens."""
    return greedy_core(model_step_fn(model, code_ids, ast_ids), _clamp_len(model, max_len))


def _upper_bound(h: Hypothesis, max_len: int, alpha: float) -> float:
    # log-probs only fall as tokens are added, and lp <= 0 makes a longer
    # normalizer the most favourable one
    if alpha == 0.0:
        return h.logprob
    return h.logprob / max_len**alpha


def beam_core(step: StepFn, k: int, max_len: int, alpha: float = 0.0) -> list[Hypothesis]:
    """Beam search over ``step``; returns up to ``k`` hypotheses, best first.

    Each live hypothesis is expanded by its top-``k`` tokens and the global
    top-``k`` candidates survive. Candidates ending in EOS retire to a pool
    where they keep competing on their final score. Ties keep the earlier
    candidate (parent rank, then token rank), which makes ``k=1`` the same
    walk as greedy decoding.
    """
    if k < 1:
        raise ValueError("beam width must be at least 1")
    live = [Hypothesis((SOS,), 0.0, False)]
    pool: list[Hypothesis] = []
    by_score = lambda h: -h.score(alpha)
    for _ in range(max_len):
        if not live:
            break
        logprobs = step([h.tokens for h in live])
        candidates = []
        for h, row in zip(live, logprobs):
            for tok in np.argsort(-row, kind="stable")[:k]:
                tok = int(tok)
                candidates.append(Hypothesis(h.tokens + (tok,), h.logprob + float(row[tok]), tok == EOS))
        candidates.sort(key=by_score)
        live = []
        for c in candidates[:k]:
            (pool if c.finished else live).append(c)
        if len(pool) >= k and live:
            pool.sort(key=by_score)
            kth = pool[k - 1].score(alpha)
            if max(_upper_bound(h, max_len, alpha) for h in live) <= kth:
                live = []
                break
    return sorted(pool + live, key=by_score)[:k]


def beam_search(
    model: ComFormerModel, code_ids, ast_ids, beam_width: int = 5, max_len: int = 30, length_penalty: float = 0.0
) -> list[Hypothesis]:
    step = model_step_fn(model, code_ids, ast_ids)
    return beam_core(step, beam_width, _clamp_len(model, max_len), length_penalty)


def sequence_logprob(model: ComFormerModel, code_ids, ast_ids, tokens: Sequence[int]) -> float:
    """Teacher-forced log-probability of ``tokens[1:]`` given ``tokens[:-1]``;
    an independent recomputation of :attr:`Hypothesis.logprob`."""
    tokens = list(tokens)
    logits = model.logits(np.asarray([code_ids]), np.asarray([ast_ids]), np.asarray([tokens[:-1]])).data[0]
    lp = _log_softmax(logits)
    return float(sum(lp[i, t] for i, t in enumerate(tokens[1:])))
