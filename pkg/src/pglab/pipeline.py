"""Pipeline stages behind the command-line subcommands."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import (
    EncodedExample, Example, Vocabulary, WordPrior, build_vocab, compute_word_priors, encode_example,
    generate_synthetic_corpus, load_corpus,
)
from .decoder import decode_corpus, read_traces
from .metrics import MetricReport, evaluate, kl_matrix, read_scores, wilcoxon
from .model import ModelParams, attention_traces
from .trainer import TrainResult, train, write_log


class ValidationError(ValueError):
    """Inputs are inconsistent with each other (as opposed to a runtime failure)."""


def gen_data(cfg: RunConfig) -> dict[str, Path]:
    return generate_synthetic_corpus(cfg.synth_config(), cfg.path("data_dir"))


def corpus_tokens(examples: Sequence[Example]):
    for src, tgt in examples:
        yield src
        yield tgt


def encode_all(examples: Sequence[Example], vocab: Vocabulary, cfg: RunConfig, max_tgt: int | None = None) -> list[EncodedExample]:
    return [encode_example(s, t, vocab, cfg.max_src, max_tgt or cfg.max_tgt) for s, t in examples]


@dataclass
class Prepared:
    vocab: Vocabulary
    priors: WordPrior
    train: list[EncodedExample]


def prepare(cfg: RunConfig, write: bool = True) -> Prepared:
    """Vocabulary and word priors from the training corpus, plus its encoding."""
    raw = load_corpus(cfg.path("train_file"))
    if not raw:
        raise ValidationError(f"{cfg.path('train_file')}: training corpus is empty")
    vocab = build_vocab(corpus_tokens(raw), cfg.vocab_size)
    priors = compute_word_priors(corpus_tokens(raw), vocab)
    if write:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        vocab.save(cfg.path("vocab_file"))
        if cfg.mode == "word_prior":
            priors.save(cfg.path("priors_file"))
    return Prepared(vocab, priors, encode_all(raw, vocab, cfg))


def train_run(cfg: RunConfig) -> TrainResult:
    prep = prepare(cfg)
    result = train(cfg.train_config(), prep.train, len(prep.vocab), prep.priors, out_dir=cfg.output_dir)
    ckpt = cfg.path("checkpoint")
    if ckpt != Path(cfg.output_dir) / "final.ckpt":
        result.params.save(ckpt)
    return result


def load_model(cfg: RunConfig, key: str = "checkpoint") -> tuple[ModelParams, Vocabulary]:
    params = ModelParams.load(cfg.path(key))
    vocab = Vocabulary.load(cfg.path("vocab_file"))
    if params.config.vocab_size != len(vocab):
        raise ValidationError(
            f"checkpoint vocabulary size {params.config.vocab_size} does not match {cfg.path('vocab_file')} ({len(vocab)})"
        )
    return params, vocab


def decode_run(cfg: RunConfig, params: ModelParams | None = None, vocab: Vocabulary | None = None) -> list[list[str]]:
    if params is None or vocab is None:
        params, vocab = load_model(cfg)
    raw = load_corpus(cfg.path("test_file"))
    examples = encode_all(raw, vocab, cfg)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    return decode_corpus(params, examples, vocab, cfg.beam_config(), coverage_on=cfg.model_uses_coverage,
                         summaries_path=cfg.path("summaries_file"), trace_path=cfg.path("trace_file"))


def read_lines(path: Path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.split() for line in lines]


def eval_run(cfg: RunConfig) -> MetricReport:
    summaries = read_lines(cfg.path("summaries_file"))
    raw = load_corpus(cfg.path("test_file"))
    if len(summaries) != len(raw):
        raise ValidationError(
            f"line-count mismatch: {cfg.path('summaries_file')} has {len(summaries)} lines, "
            f"{cfg.path('test_file')} has {len(raw)}"
        )
    pgen = None
    trace_path = cfg.path("trace_file")
    if trace_path.exists():
        traces = read_traces(trace_path)
        if len(traces) != len(summaries):
            raise ValidationError(f"line-count mismatch: {trace_path} has {len(traces)} examples, expected {len(summaries)}")
        pgen = [t.pgen for t in traces]
    report, scores = evaluate(summaries, [t for _, t in raw], [s for s, _ in raw], pgen,
                              cfg.novelty_against, cfg.multiset_novelty)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.tsv")
    (out / "scores.tsv").write_text(scores.to_tsv(), encoding="utf-8")
    return report


def compare_run(cfg: RunConfig) -> float:
    a = read_scores(cfg.path("scores_a"), cfg.score_column)
    b = read_scores(cfg.path("scores_b"), cfg.score_column)
    if len(a) != len(b):
        raise ValidationError(f"line-count mismatch: {len(a)} vs {len(b)} scores")
    try:
        return wilcoxon(a, b)
    except ValueError as exc:  # too few pairs or all differences zero
        raise ValidationError(str(exc)) from None


def attn_kl_run(cfg: RunConfig) -> np.ndarray:
    params_a, vocab = load_model(cfg)
    examples = encode_all(load_corpus(cfg.path("test_file")), vocab, cfg)
    if not examples:
        raise ValidationError("attn-kl needs a nonempty corpus")
    trace_a = attention_traces(params_a, examples, coverage_on=cfg.model_uses_coverage)
    trace_b = None
    if cfg.checkpoint_b:
        params_b = ModelParams.load(cfg.checkpoint_b)
        if params_b.config.heads != 1:
            raise ValidationError("checkpoint_b must be a single-head model")
        if params_b.config.vocab_size != len(vocab):
            raise ValidationError("checkpoint_b uses a different vocabulary size")
        trace_b = attention_traces(params_b, examples, coverage_on=cfg.model_uses_coverage)
    mat = kl_matrix(trace_a, trace_b)
    write_kl(Path(cfg.output_dir) / "kl.tsv", mat)
    return mat


def write_kl(path: Path, mat: np.ndarray) -> None:
    K = mat.shape[0]
    header = ["head"] + [f"head{j}" for j in range(K)] + (["single"] if mat.shape[1] > K else [])
    rows = ["\t".join(header)]
    rows += [f"head{i}\t" + "\t".join(f"{v:.6g}" for v in mat[i]) for i in range(K)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


__all__ = [
    "ValidationError", "gen_data", "prepare", "train_run", "decode_run", "eval_run", "compare_run",
    "attn_kl_run", "write_kl", "write_log", "encode_all", "load_model", "read_lines",
]
