"""Evaluation metrics (BLEU, METEOR, ROUGE-L), length-bucketed reports,
corpus length statistics and the human-study sample-size formula."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

Tokens = Sequence[str]

ROUGE_BETA = 1.2
SENTENCE_BLEU_EPS = 1e-9


class LengthMismatch(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_parallel(candidates, references) -> None:
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise EmptyCorpus("no examples to score")


def _clipped_counts(candidates, references, max_n: int) -> tuple[list[int], list[int], int, int]:
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(cnt, r[g]) for g, cnt in c.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    return matches, totals, cand_len, ref_len


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / cand_len))


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> tuple[float, ...]:
    """Corpus BLEU_1..BLEU_max_n with cumulative uniform weights.

    Clipped n-gram matches and the brevity penalty are pooled over the whole
    corpus before combining.
    """
    _check_parallel(candidates, references)
    matches, totals, cand_len, ref_len = _clipped_counts(candidates, references, max_n)
    bp = _brevity_penalty(cand_len, ref_len)
    scores = []
    log_sum = 0.0
    for n in range(1, max_n + 1):
        if matches[n - 1] == 0 or log_sum == -math.inf:
            log_sum = -math.inf
            scores.append(0.0)
            continue
        log_sum += math.log(matches[n - 1] / totals[n - 1])
        scores.append(bp * math.exp(log_sum / n))
    return tuple(scores)


def sentence_bleu(candidate: Tokens, reference: Tokens, max_n: int = 4) -> float:
    """Smoothed per-example BLEU_max_n; zero precisions are floored at 1e-9.
    Reported per example only, never averaged into headline numbers."""
    matches, totals, cand_len, ref_len = _clipped_counts([candidate], [reference], max_n)
    log_sum = 0.0
    for m, t in zip(matches, totals):
        log_sum += math.log(m / t if m else SENTENCE_BLEU_EPS)
    return _brevity_penalty(cand_len, ref_len) * math.exp(log_sum / max_n)


def _align(candidate: Tokens, reference: Tokens) -> list[tuple[int, int]]:
    """Exact-match alignment as (cand index, ref index) pairs.

    Each candidate token, left to right, continues the current chunk when it
    can and otherwise takes the leftmost unused matching reference token.
    """
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        positions.setdefault(tok, []).append(j)
    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for i, tok in enumerate(candidate):
        free = [j for j in positions.get(tok, ()) if j not in used]
        if not free:
            continue
        j = free[0]
        if pairs and pairs[-1][0] == i - 1 and pairs[-1][1] + 1 in free:
            j = pairs[-1][1] + 1
        used.add(j)
        pairs.append((i, j))
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(candidate: Tokens, reference: Tokens) -> float:
    """Exact-match METEOR: recall-weighted harmonic mean times a
    fragmentation penalty ``0.5 * (chunks / matches) ** 3``."""
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (_chunks(pairs) / m) ** 3
    return fmean * (1.0 - penalty)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_prf(candidate: Tokens, reference: Tokens, beta: float = ROUGE_BETA) -> tuple[float, float, float]:
    """(precision, recall, F) from the longest common subsequence."""
    if not candidate or not reference:
        return 0.0, 0.0, 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0, 0.0, 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return p, r, (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(candidate: Tokens, reference: Tokens, beta: float = ROUGE_BETA) -> float:
    return rouge_l_prf(candidate, reference, beta)[2]


# -- human-study sampling ----------------------------------------------------


@dataclass(frozen=True)
class SamplingSpec:
    e: float
    z: float
    size: int
    n0: float
    MIN: int


def sampling_spec(e: float, z: float, size: int) -> SamplingSpec:
    """``n0 = z^2 * 0.25 / e^2`` and ``MIN = ceil(n0 / (1 + (n0 - 1) / size))``.

    Raises:
        InvalidSpec: Unless ``0 < e < 1``, ``z > 0`` and ``size >= 1``.
    """
    if not 0 < e < 1:
        raise InvalidSpec(f"error margin must lie in (0, 1), got {e}")
    if not z > 0:
        raise InvalidSpec(f"z must be positive, got {z}")
    if int(size) != size or size < 1:
        raise InvalidSpec(f"population size must be a positive integer, got {size}")
    n0 = z * z * 0.25 / (e * e)
    raw = n0 / (1 + (n0 - 1) / size)
    # guard against float noise pushing an exact integer just above itself
    return SamplingSpec(e, z, int(size), n0, min(int(size), math.ceil(raw - 1e-9)))


def sample_size(e: float, z: float, size: int) -> int:
    return sampling_spec(e, z, size).MIN


def z_for_confidence(confidence: float) -> float:
    """Two-sided z-score rounded to two decimals (0.95 -> 1.96)."""
    if not 0 < confidence < 1:
        raise InvalidSpec(f"confidence must lie in (0, 1), got {confidence}")
    return round(statistics.NormalDist().inv_cdf(0.5 + confidence / 2), 2)


# -- corpus statistics -------------------------------------------------------

CODE_THRESHOLDS = (100, 150, 200)
COMMENT_THRESHOLDS = (20, 30, 50)


@dataclass(frozen=True)
class LengthStats:
    avg: float
    mode: int
    median: float
    under: dict[int, float]  # threshold -> percent of lengths strictly below it


def length_stats(lengths: Sequence[int], thresholds: Sequence[int]) -> LengthStats:
    if not lengths:
        raise EmptyCorpus("no lengths to summarize")
    counts = Counter(lengths)
    top = max(counts.values())
    n = len(lengths)
    return LengthStats(
        avg=sum(lengths) / n,
        mode=min(v for v, c in counts.items() if c == top),
        median=statistics.median(lengths),
        under={t: 100.0 * sum(1 for x in lengths if x < t) / n for t in thresholds},
    )


@dataclass(frozen=True)
class CorpusStats:
    count: int
    code: LengthStats
    comment: LengthStats

    def to_text(self) -> str:
        lines = [f"pairs: {self.count}"]
        for name, st in (("code", self.code), ("comment", self.comment)):
            lines.append(f"[{name}]")
            lines.append(f"avg: {st.avg:.2f}")
            lines.append(f"mode: {st.mode}")
            lines.append(f"median: {st.median:g}")
            lines.extend(f"<{t}: {pct:.2f}%" for t, pct in st.under.items())
        return "\n".join(lines) + "\n"


def corpus_stats(code_lengths: Sequence[int], comment_lengths: Sequence[int]) -> CorpusStats:
    """Table-style length summary of raw (pre-BPE) token counts."""
    if len(code_lengths) != len(comment_lengths):
        raise LengthMismatch("code and comment length lists differ in size")
    if not code_lengths:
        raise EmptyCorpus("corpus is empty")
    return CorpusStats(
        count=len(code_lengths),
        code=length_stats(code_lengths, CODE_THRESHOLDS),
        comment=length_stats(comment_lengths, COMMENT_THRESHOLDS),
    )


# -- evaluation report -------------------------------------------------------


@dataclass(frozen=True)
class ExampleScore:
    id: int
    bleu4: float
    meteor: float
    rouge_l: float
    code_len: int
    bucket: str


@dataclass
class EvalReport:
    bleu: tuple[float, ...]
    meteor: float
    rouge_l: float
    examples: list[ExampleScore] = field(default_factory=list)
    buckets: dict[str, tuple[int, float, float]] = field(default_factory=dict)  # label -> (count, meteor, rouge_l)

    def to_text(self) -> str:
        lines = ["[corpus]", f"examples: {len(self.examples)}"]
        lines += [f"BLEU_{n}: {s:.6f}" for n, s in enumerate(self.bleu, 1)]
        lines += [f"METEOR: {self.meteor:.6f}", f"ROUGE_L: {self.rouge_l:.6f}", "", "[buckets]"]
        lines += [f"{label}: count={c} METEOR={m:.6f} ROUGE_L={r:.6f}" for label, (c, m, r) in self.buckets.items()]
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        rows = ["id\tbleu4_sentence\tmeteor\trouge_l\tcode_len\tbucket"]
        rows += [f"{e.id}\t{e.bleu4:.6f}\t{e.meteor:.6f}\t{e.rouge_l:.6f}\t{e.code_len}\t{e.bucket}" for e in self.examples]
        return "\n".join(rows) + "\n"


def bucket_label(length: int, width: int) -> str:
    lo = (length // width) * width
    return f"{lo}-{lo + width - 1}"


def build_report(
    ids: Sequence[int],
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    code_lengths: Sequence[int],
    bucket_width: int = 25,
) -> EvalReport:
    """Corpus scores, per-example rows and per-code-length-bucket means."""
    _check_parallel(candidates, references)
    if not len(ids) == len(candidates) == len(code_lengths):
        raise LengthMismatch("ids, candidates and code lengths differ in size")
    if bucket_width < 1:
        raise ValueError("bucket width must be positive")
    examples = [
        ExampleScore(i, sentence_bleu(c, r), meteor(c, r), rouge_l(c, r), n, bucket_label(n, bucket_width))
        for i, c, r, n in zip(ids, candidates, references, code_lengths)
    ]
    grouped: dict[int, list[ExampleScore]] = {}
    for e in examples:
        grouped.setdefault(e.code_len // bucket_width, []).append(e)
    buckets = {
        bucket_label(k * bucket_width, bucket_width): (
            len(g),
            sum(e.meteor for e in g) / len(g),
            sum(e.rouge_l for e in g) / len(g),
        )
        for k, g in sorted(grouped.items())
    }
    n = len(examples)
    return EvalReport(
        bleu=bleu(candidates, references),
        meteor=sum(e.meteor for e in examples) / n,
        rouge_l=sum(e.rouge_l for e in examples) / n,
        examples=examples,
        buckets=buckets,
    )
