"""ROUGE, novelty, duplication, head KL divergence and the Wilcoxon signed-rank test."""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import LOG_FLOOR
from .data import PERIOD

Tokens = Sequence[str]
NGRAM_ORDERS = (1, 2, 3, 4)


def ngrams(tokens: Tokens, n: int) -> list[tuple[str, ...]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def sentences(tokens: Tokens) -> list[tuple[str, ...]]:
    """Split on the period token; the period stays with its sentence."""
    out, cur = [], []
    for tok in tokens:
        cur.append(tok)
        if tok == PERIOD:
            out.append(tuple(cur))
            cur = []
    if cur:
        out.append(tuple(cur))
    return out


def _f1(match: float, n_cand: int, n_ref: int) -> float:
    if match == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = match / n_cand, match / n_ref
    return 2 * p * r / (p + r)


def rouge_n(candidate: Tokens, reference: Tokens, n: int) -> float:
    """F1 of clipped n-gram overlap."""
    c, r = Counter(ngrams(candidate, n)), Counter(ngrams(reference, n))
    match = sum((c & r).values())
    return _f1(match, sum(c.values()), sum(r.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> float:
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def novelty(summary: Tokens, source: Tokens, n: int, multiset: bool = False) -> float:
    """Percentage of the summary's n-grams that never occur in ``source``.

    Distinct n-grams by default; ``multiset`` counts every occurrence.
    """
    grams = ngrams(summary, n)
    if not grams:
        return 0.0
    seen = set(ngrams(source, n))
    if multiset:
        return 100.0 * sum(g not in seen for g in grams) / len(grams)
    distinct = set(grams)
    return 100.0 * len(distinct - seen) / len(distinct)


def sentence_novelty(summary: Tokens, source: Tokens) -> float:
    """Percentage of distinct summary sentences that do not appear verbatim in the source."""
    sents = set(sentences(summary))
    if not sents:
        return 0.0
    src = list(source)
    src_text = " " + " ".join(src) + " "
    novel = sum(1 for s in sents if " " + " ".join(s) + " " not in src_text)
    return 100.0 * novel / len(sents)


def duplication(summary: Tokens, n: int) -> float:
    grams = ngrams(summary, n)
    if not grams:
        return 0.0
    return 100.0 * (1.0 - len(set(grams)) / len(grams))


def sentence_duplication(summary: Tokens) -> float:
    sents = sentences(summary)
    if not sents:
        return 0.0
    return 100.0 * (1.0 - len(set(sents)) / len(sents))


def novel_words(summaries: Iterable[Tokens], sources: Iterable[Tokens]) -> Counter:
    """How often each summary token absent from its own source was produced."""
    out: Counter = Counter()
    for summ, src in zip(summaries, sources):
        seen = set(src)
        out.update(t for t in summ if t not in seen)
    return out


# ---------------------------------------------------------------------------
# attention heads
# ---------------------------------------------------------------------------


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) over the last axis with both logs clamped at the floor."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return np.sum(p * (np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))), axis=-1)


def kl_matrix(trace_a: Sequence[np.ndarray], trace_b: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Mean pairwise head KL over every step of every example.

    Each trace item is one example's attention, shape (T, heads, L). With
    ``trace_b`` (single head) an extra column compares each head of A with it.
    """
    if not trace_a:
        raise ValueError("empty attention trace")
    K = np.asarray(trace_a[0]).shape[1]
    if trace_b is not None and len(trace_b) != len(trace_a):
        raise ValueError(f"misaligned traces: {len(trace_a)} vs {len(trace_b)} examples")
    cols = K + (trace_b is not None)
    total = np.zeros((K, cols))
    count = 0
    for i, a in enumerate(trace_a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 3 or a.shape[1] != K:
            raise ValueError(f"example {i}: attention trace must be (steps, {K}, positions)")
        total[:, :K] += kl_divergence(a[:, :, None, :], a[:, None, :, :]).sum(axis=0)
        if trace_b is not None:
            b = np.asarray(trace_b[i], dtype=np.float64)
            if b.ndim == 2:
                b = b[:, None, :]
            if b.shape[0] != a.shape[0] or b.shape[2] != a.shape[2]:
                raise ValueError(f"misaligned traces at example {i}: {a.shape} vs {b.shape}")
            total[:, K] += kl_divergence(a, b[:, :1, :]).sum(axis=0)
        count += a.shape[0]
    return total / count


# ---------------------------------------------------------------------------
# significance
# ---------------------------------------------------------------------------


def signed_ranks(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero differences b - a and the average ranks of their magnitudes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and equal length, got {a.shape} and {b.shape}")
    d = b - a
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("degenerate sample: all differences are zero")
    mag = np.abs(d)
    order = np.argsort(mag, kind="stable")
    ranks = np.empty(d.size)
    sorted_mag = mag[order]
    i = 0
    while i < d.size:
        j = i
        while j + 1 < d.size and sorted_mag[j + 1] == sorted_mag[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return d, ranks


EXACT_MAX_N = 25


def wilcoxon(a: Sequence[float], b: Sequence[float], min_n: int = 6, method: str = "auto") -> float:
    """Two-sided signed-rank p-value for paired samples.

    ``normal`` uses the normal approximation with tie-corrected variance and
    continuity correction. ``exact`` enumerates the permutation distribution
    of W+. ``auto`` takes the exact path up to ``EXACT_MAX_N`` nonzero
    differences, where the approximation can be off by more than 0.03.
    """
    if method not in ("auto", "normal", "exact"):
        raise ValueError(f"unknown method {method!r}")
    d, ranks = signed_ranks(a, b)
    n = d.size
    if n < min_n:
        raise ValueError(f"need at least {min_n} nonzero differences, got {n}")
    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        return _exact_p(d, ranks)
    return _normal_p(d, ranks)


def _normal_p(d: np.ndarray, ranks: np.ndarray) -> float:
    n = d.size
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return 1.0
    z = max(mean - w - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _exact_p(d: np.ndarray, ranks: np.ndarray) -> float:
    """Doubled smaller tail of the W+ distribution under random signs (ties allowed)."""
    r2 = np.rint(ranks * 2).astype(np.int64)  # average ranks are multiples of 1/2
    total = int(r2.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    dist /= dist.sum()
    w_plus = int(r2[d > 0].sum())
    w = min(w_plus, total - w_plus)
    return float(min(1.0, 2.0 * dist[: w + 1].sum()))


# ---------------------------------------------------------------------------
# corpus report
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    rouge1: float
    rouge2: float
    rougeL: float
    novel_1gram_pct: float
    novel_2gram_pct: float
    novel_3gram_pct: float
    novel_4gram_pct: float
    novel_sentence_pct: float
    dup_1gram_pct: float
    dup_2gram_pct: float
    dup_3gram_pct: float
    dup_4gram_pct: float
    dup_sentence_pct: float
    avg_pgen: float
    mean_length: float
    n_examples: int

    def items(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def to_tsv(self) -> str:
        return "".join(f"{k}\t{format_value(v)}\n" for k, v in self.items())

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MetricReport":
        vals = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            k, v = line.split("\t")
            vals[k] = float(v)
        vals["n_examples"] = int(vals["n_examples"])
        return cls(**vals)


def format_value(v: float) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6g}"


@dataclass
class ExampleScores:
    rouge1: list[float]
    rouge2: list[float]
    rougeL: list[float]

    def to_tsv(self) -> str:
        rows = ["rouge1\trouge2\trougeL"]
        rows += [f"{format_value(a)}\t{format_value(b)}\t{format_value(c)}"
                 for a, b, c in zip(self.rouge1, self.rouge2, self.rougeL)]
        return "\n".join(rows) + "\n"


def read_scores(path: str | os.PathLike, column: str = "rouge1") -> list[float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty scores file")
    header = lines[0].split("\t")
    if column not in header:
        raise ValueError(f"{path}: no column {column!r}")
    j = header.index(column)
    return [float(line.split("\t")[j]) for line in lines[1:] if line]


def _mean(xs: Sequence[float]) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


def evaluate(
    summaries: Sequence[Tokens],
    references: Sequence[Tokens],
    sources: Sequence[Tokens],
    pgen_traces: Sequence[Sequence[float]] | None = None,
    novelty_against: str = "source",
    multiset_novelty: bool = False,
) -> tuple[MetricReport, ExampleScores]:
    """Corpus means of every metric; ``novelty_against`` may be ``source`` or ``reference``."""
    if not len(summaries) == len(references) == len(sources):
        raise ValueError(
            f"length mismatch: {len(summaries)} summaries, {len(references)} references, {len(sources)} sources"
        )
    if novelty_against not in ("source", "reference"):
        raise ValueError("novelty_against must be 'source' or 'reference'")
    if pgen_traces is not None and len(pgen_traces) != len(summaries):
        raise ValueError(f"length mismatch: {len(summaries)} summaries, {len(pgen_traces)} traces")
    basis = sources if novelty_against == "source" else references
    r1 = [rouge_n(s, r, 1) for s, r in zip(summaries, references)]
    r2 = [rouge_n(s, r, 2) for s, r in zip(summaries, references)]
    rl = [rouge_l(s, r) for s, r in zip(summaries, references)]
    nov = {n: _mean([novelty(s, b, n, multiset_novelty) for s, b in zip(summaries, basis)]) for n in NGRAM_ORDERS}
    dup = {n: _mean([duplication(s, n) for s in summaries]) for n in NGRAM_ORDERS}
    pg = [p for trace in pgen_traces for p in trace] if pgen_traces is not None else []
    report = MetricReport(
        rouge1=_mean(r1), rouge2=_mean(r2), rougeL=_mean(rl),
        novel_1gram_pct=nov[1], novel_2gram_pct=nov[2], novel_3gram_pct=nov[3], novel_4gram_pct=nov[4],
        novel_sentence_pct=_mean([sentence_novelty(s, b) for s, b in zip(summaries, basis)]),
        dup_1gram_pct=dup[1], dup_2gram_pct=dup[2], dup_3gram_pct=dup[3], dup_4gram_pct=dup[4],
        dup_sentence_pct=_mean([sentence_duplication(s) for s in summaries]),
        avg_pgen=float(np.mean(pg)) if pg else float("nan"),
        mean_length=_mean([len(s) for s in summaries]),
        n_examples=len(summaries),
    )
    return report, ExampleScores(r1, r2, rl)
