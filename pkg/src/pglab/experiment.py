"""Desk-scale grid over head count and abstractiveness extension.

Runs that share head count and dropout rate share their whole phase-1
trajectory, so each distinct phase 1 is trained once and branched. The
branch is bit-identical to an independent run with the same seed.
"""

from __future__ import annotations

import dataclasses
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .data import load_corpus
from .decoder import decode_corpus, read_traces
from .metrics import MetricReport, evaluate, format_value, kl_matrix, wilcoxon
from .model import attention_traces
from .pipeline import encode_all, gen_data, prepare, write_kl
from .trainer import TrainConfig, TrainState, init_state, run_phase, train, write_log


@dataclass(frozen=True)
class Variant:
    name: str
    heads: int
    mode: str = "none"
    dropout_rate: float = 0.0
    coverage_on: bool = True

    @property
    def label(self) -> str:
        return f"{self.heads}h-{self.name}"


def default_grid(dropout_rate: float = 0.2) -> list[Variant]:
    grid = []
    for heads in (1, 4):
        grid += [
            Variant("baseline", heads),
            Variant("dropout", heads, dropout_rate=dropout_rate),
            Variant("nloss", heads, mode="naive"),
            Variant("wploss", heads, mode="word_prior"),
            Variant("baseline-nocov", heads, coverage_on=False),
        ]
    return grid


TABLE_COLUMNS = (
    "rouge1", "rouge2", "rougeL", "novel_1gram_pct", "novel_2gram_pct", "novel_3gram_pct", "novel_4gram_pct",
    "novel_sentence_pct", "dup_2gram_pct", "avg_pgen", "train_pgen", "mean_length", "p_rouge1_vs_baseline",
)


@dataclass
class VariantResult:
    variant: Variant
    report: MetricReport
    rouge1: list[float]
    train_pgen: float
    seconds: float
    p_vs_baseline: float | None = None

    def row(self) -> dict[str, float]:
        vals = dict(self.report.items())
        vals["train_pgen"] = self.train_pgen
        vals["p_rouge1_vs_baseline"] = float("nan") if self.p_vs_baseline is None else self.p_vs_baseline
        return {c: vals[c] for c in TABLE_COLUMNS}


def format_table(results: list[VariantResult]) -> str:
    lines = ["variant\t" + "\t".join(TABLE_COLUMNS)]
    for r in results:
        lines.append(r.variant.label + "\t" + "\t".join(format_value(v) for v in r.row().values()))
    return "\n".join(lines) + "\n"


def variant_config(cfg: RunConfig, v: Variant) -> TrainConfig:
    return dataclasses.replace(cfg.train_config(), heads=v.heads, mode=v.mode,
                               dropout_rate=v.dropout_rate, coverage_on=v.coverage_on, lambda_p=cfg.lambda_p)


def run_experiment(cfg: RunConfig, grid: list[Variant] | None = None,
                   log: Callable[[str], None] | None = None) -> list[VariantResult]:
    log = log or (lambda msg: print(msg, file=sys.stderr, flush=True))
    grid = grid or default_grid(cfg.dropout_rate if cfg.dropout_rate > 0 else 0.2)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    gen_data(cfg)
    prep = prepare(cfg, write=False)
    prep.vocab.save(out / "vocab.txt")
    prep.priors.save(out / "priors.tsv")
    test_raw = load_corpus(cfg.path("test_file"))
    test = encode_all(test_raw, prep.vocab, cfg)
    refs, srcs = [t for _, t in test_raw], [s for s, _ in test_raw]
    log(f"data ready: {len(prep.train)} train / {len(test)} test examples")

    phase1: dict[tuple, TrainState] = {}
    results: list[VariantResult] = []
    params_by_label = {}
    for v in grid:
        start = time.perf_counter()
        tcfg = variant_config(cfg, v)
        key = tcfg.phase1_key()
        if key not in phase1:
            state = init_state(tcfg, len(prep.vocab), len(prep.train))
            run_phase(state, tcfg, prep.train, prep.priors, 1, tcfg.base_steps)
            phase1[key] = state
        vdir = out / v.label
        res = train(tcfg, prep.train, len(prep.vocab), prep.priors, out_dir=vdir, start=phase1[key])
        coverage = v.coverage_on and tcfg.extension_steps > 0
        decode_corpus(res.params, test, prep.vocab, cfg.beam_config(), coverage_on=coverage,
                      summaries_path=vdir / "summaries.txt", trace_path=vdir / "trace.txt")
        summaries = [line.split() for line in (vdir / "summaries.txt").read_text(encoding="utf-8").splitlines()]
        pgen = [t.pgen for t in read_traces(vdir / "trace.txt")]
        report, scores = evaluate(summaries, refs, srcs, pgen, cfg.novelty_against, cfg.multiset_novelty)
        report.save(vdir / "report.tsv")
        (vdir / "scores.tsv").write_text(scores.to_tsv(), encoding="utf-8")
        tail = [row[5] for row in res.log[-100:]]
        train_pgen = float(np.mean(tail)) if tail else float("nan")
        results.append(VariantResult(v, report, scores.rouge1, train_pgen, time.perf_counter() - start))
        params_by_label[v.label] = (res.params, coverage)
        log(f"{v.label}: rouge1 {report.rouge1:.4f} avg_pgen {report.avg_pgen:.4f} "
            f"novel4 {report.novel_4gram_pct:.2f} ({time.perf_counter() - start:.0f}s)")

    baselines = {r.variant.heads: r for r in results if r.variant.name == "baseline"}
    for r in results:
        base = baselines.get(r.variant.heads)
        if base is not None and r is not base:
            try:
                r.p_vs_baseline = wilcoxon(base.rouge1, r.rouge1)
            except ValueError:
                r.p_vs_baseline = 1.0
    (out / "experiment.tsv").write_text(format_table(results), encoding="utf-8")

    if "4h-baseline" in params_by_label and "1h-baseline" in params_by_label:
        pa, cov_a = params_by_label["4h-baseline"]
        pb, cov_b = params_by_label["1h-baseline"]
        mat = kl_matrix(attention_traces(pa, test, cov_a), attention_traces(pb, test, cov_b))
        write_kl(out / "kl.tsv", mat)
    log(f"experiment finished in {time.perf_counter() - t0:.0f}s")
    return results


__all__ = ["Variant", "VariantResult", "default_grid", "run_experiment", "format_table", "write_log"]
