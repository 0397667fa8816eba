"""Beam search over the extended vocabulary, with p_gen and attention traces."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import STOP_ID, EncodedExample, Vocabulary, decode_ids
from .model import Batch, EncoderOutput, ModelParams, _switch_weight, decoder_step, embed_inputs, encode

LOG_FLOOR = ad.LOG_FLOOR


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    max_len: int = 100
    min_len: int = 1
    length_normalize: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.min_len < 0 or self.max_len < max(self.min_len, 1):
            raise ValueError("need max_len >= min_len and max_len >= 1")


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    state: object = None
    pgen_trace: list[float] = field(default_factory=list)
    attention_trace: list[np.ndarray] = field(default_factory=list)  # per token: (heads, L)
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def ended_with_stop(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == STOP_ID

    @property
    def summary_ids(self) -> list[int]:
        return self.tokens[:-1] if self.ended_with_stop else list(self.tokens)

    def score(self, length_normalize: bool = True) -> float:
        if length_normalize:
            return self.logprob / max(self.length, 1)
        return self.logprob


StepFn = Callable[[list, np.ndarray], tuple[np.ndarray, list, list[float], list[np.ndarray]]]


def beam_search_core(init_state, step_fn: StepFn, cfg: BeamConfig, stop_id: int = STOP_ID) -> Hypothesis:
    """Model-agnostic beam search.

    ``step_fn(states, last_tokens)`` gets one state per live hypothesis and
    returns (log-probabilities (n, V), new states, p_gen per row, attention
    per row). ``last_tokens`` is -1 for the first step.
    """
    live = [Hypothesis([], 0.0, init_state)]
    done: list[Hypothesis] = []
    for t in range(cfg.max_len):
        last = np.array([h.tokens[-1] if h.tokens else -1 for h in live], dtype=np.int64)
        logp, states, pgens, attns = step_fn([h.state for h in live], last)
        logp = np.array(logp, dtype=np.float64)
        if t < cfg.min_len:
            logp[:, stop_id] = -np.inf
        n, V = logp.shape
        k = min(cfg.beam_size, V)
        cands = []
        for r in range(n):
            # stable sort on -logp: ties go to the lower token id
            top = np.argsort(-logp[r], kind="stable")[:k]
            for tok in top:
                if np.isfinite(logp[r, tok]):
                    cands.append((live[r].logprob + logp[r, tok], r, int(tok)))
        # stable sort: equal scores keep (parent order, rank) order
        cands.sort(key=lambda c: -c[0])
        new_live = []
        last_step = t == cfg.max_len - 1
        for score, r, tok in cands:
            parent = live[r]
            h = Hypothesis(
                parent.tokens + [tok], float(score), states[r],
                parent.pgen_trace + [float(pgens[r])], parent.attention_trace + [attns[r]],
            )
            if tok == stop_id or last_step:
                h.finished = True
                done.append(h)
            else:
                new_live.append(h)
            if len(new_live) == cfg.beam_size:
                break
        live = new_live
        if len(done) >= cfg.beam_size or not live:
            break
    pool = done if done else live
    best = pool[0]
    for h in pool[1:]:
        if h.score(cfg.length_normalize) > best.score(cfg.length_normalize):
            best = h
    return best


@dataclass
class _DecoderState:
    s: np.ndarray
    c: np.ndarray
    coverage: np.ndarray


def _model_step_fn(params: ModelParams, enc: EncoderOutput, coverage_on: bool, start_id: int) -> StepFn:
    V = params.config.vocab_size
    switch_w = _switch_weight(params)
    L = int(enc.mask[0].sum())

    def step(states: list[_DecoderState], last: np.ndarray):
        n = len(states)
        ids = np.where(last < 0, start_id, last)[:, None]
        ids = np.where(ids >= V, 1, ids)  # extended-vocabulary ids are fed back as UNK
        sub = enc.repeat(n)
        s = Tensor(np.stack([st.s for st in states]))
        c = Tensor(np.stack([st.c for st in states]))
        cov = Tensor(np.stack([st.coverage for st in states]))
        inputs = embed_inputs(ids, params).at(0)
        out = decoder_step(inputs, (s, c), cov, sub, params, coverage_on, None, switch_w)
        final = out.final.data
        logp = np.log(np.maximum(final, LOG_FLOOR))
        new_cov = cov.data + out.pointer_attention.data
        new_states = [_DecoderState(out.state[0].data[r], out.state[1].data[r], new_cov[r]) for r in range(n)]
        pg = out.p_gen.data.reshape(-1)
        attn = out.attention.data[:, :, :L]
        return logp, new_states, pg.tolist(), [attn[r] for r in range(n)]

    return step


def beam_search(params: ModelParams, example: EncodedExample, cfg: BeamConfig | None = None,
                coverage_on: bool = False, start_id: int = 2) -> Hypothesis:
    """Decode one example; pointer dropout never applies here."""
    cfg = cfg or BeamConfig()
    with ad.no_grad():
        enc = encode(Batch.from_examples([example]), params)
        init = _DecoderState(enc.s0.data[0], enc.cell0.data[0], np.zeros(example.source_len))
        return beam_search_core(init, _model_step_fn(params, enc, coverage_on, start_id), cfg)


# ---------------------------------------------------------------------------
# corpus decoding
# ---------------------------------------------------------------------------


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PGLAB_THREADS", "1")))
    except ValueError:
        return 1


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def format_trace(index: int, hyp: Hypothesis, tokens: Sequence[str]) -> str:
    """``#example i`` then ``token<TAB>p_gen<TAB>pointer attention`` per summary token."""
    lines = [f"#example {index}"]
    for tok, pg, attn in zip(tokens, hyp.pgen_trace, hyp.attention_trace):
        lines.append(f"{tok}\t{_fmt(pg)}\t{','.join(_fmt(a) for a in attn[0])}")
    return "\n".join(lines) + "\n"


@dataclass
class TraceEntry:
    tokens: list[str]
    pgen: list[float]
    attention: list[list[float]]


def read_traces(path: str | os.PathLike) -> list[TraceEntry]:
    entries: list[TraceEntry] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        if line.startswith("#example "):
            entries.append(TraceEntry([], [], []))
            continue
        parts = line.split("\t")
        if not entries or len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: malformed trace line")
        entries[-1].tokens.append(parts[0])
        entries[-1].pgen.append(float(parts[1]))
        entries[-1].attention.append([float(a) for a in parts[2].split(",")] if parts[2] else [])
    return entries


def decode_corpus(
    params: ModelParams,
    examples: Sequence[EncodedExample],
    vocab: Vocabulary,
    cfg: BeamConfig | None = None,
    coverage_on: bool = False,
    summaries_path: str | os.PathLike | None = None,
    trace_path: str | os.PathLike | None = None,
) -> list[list[str]]:
    """Decode every example in order; optionally write the summaries and trace files."""
    cfg = cfg or BeamConfig()

    def one(ex):
        return beam_search(params, ex, cfg, coverage_on)

    workers = worker_count()
    if workers > 1 and len(examples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hyps = list(pool.map(one, examples))
    else:
        hyps = [one(ex) for ex in examples]
    summaries = [decode_ids(h.summary_ids, vocab, ex.oov_tokens) for h, ex in zip(hyps, examples)]
    if summaries_path is not None:
        Path(summaries_path).write_text("".join(" ".join(s) + "\n" for s in summaries), encoding="utf-8")
    if trace_path is not None:
        text = "".join(format_trace(i, h, s) for i, (h, s) in enumerate(zip(hyps, summaries)))
        Path(trace_path).write_text(text, encoding="utf-8")
    return summaries
