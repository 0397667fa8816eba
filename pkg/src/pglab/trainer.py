"""Adagrad training with global-norm clipping and a two-phase schedule.

Phase 1 optimizes NLL only. Phase 2 switches on whichever coverage and
pointing terms the config asks for. Example order, pointer-dropout
decisions and initialization each draw from their own seeded stream, so a
phase-1 state can be branched into several phase-2 runs and every branch
matches a fresh end-to-end run bit for bit.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import EncodedExample, WordPrior
from .losses import MODES, LossConfig, total_loss
from .model import Batch, ModelConfig, ModelParams, forward_teacher_forced, pointer_dropout_decision

DEFAULT_LAMBDA_P = {"none": 0.0, "naive": 0.05, "word_prior": 0.2}
LOG_HEADER = ("step", "phase", "nll", "cov_loss", "point_loss", "train_pgen")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.15
    adagrad_init_accumulator: float = 0.1
    max_grad_norm: float = 2.0
    base_steps: int = 3000
    extension_steps: int = 3000
    batch_size: int = 4
    seed: int = 1
    coverage_on: bool = True
    lambda_cov: float = 1.0
    mode: str = "none"
    lambda_p: float | None = None  # None picks the per-mode default
    heads: int = 1
    dropout_rate: float = 0.0
    emb_dim: int = 32
    hidden_dim: int = 32
    eval_every: int = 1  # log one row every this many steps

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("learning_rate", "adagrad_init_accumulator", "max_grad_norm", "batch_size",
                     "heads", "emb_dim", "hidden_dim", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.base_steps < 0 or self.extension_steps < 0:
            raise ValueError("step counts must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.lambda_cov < 0 or (self.lambda_p is not None and self.lambda_p < 0):
            raise ValueError("loss weights must be non-negative")

    @property
    def effective_lambda_p(self) -> float:
        return DEFAULT_LAMBDA_P[self.mode] if self.lambda_p is None else self.lambda_p

    def loss_config(self, phase: int) -> LossConfig:
        if phase == 1:
            return LossConfig()
        return LossConfig(self.lambda_cov, self.effective_lambda_p, self.mode, self.coverage_on)

    def phase1_key(self) -> tuple:
        """Fields that determine everything phase 1 produces."""
        return (self.learning_rate, self.adagrad_init_accumulator, self.max_grad_norm, self.base_steps,
                self.batch_size, self.seed, self.heads, self.dropout_rate, self.emb_dim, self.hidden_dim)


# ---------------------------------------------------------------------------
# optimizer pieces
# ---------------------------------------------------------------------------


def clip_gradients(params: ModelParams | Sequence[ad.Tensor], max_norm: float) -> float:
    """Rescale all grads so their global L2 norm is at most ``max_norm``; return the scale."""
    tensors = [t for t in params if t.grad is not None]
    sq = 0.0
    for t in tensors:
        if not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradient(f"non-finite gradient in tensor {t.name or '<unnamed>'}")
        sq += float(np.dot(t.grad.ravel(), t.grad.ravel()))
    norm = math.sqrt(sq)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for t in tensors:
        t.grad = t.grad * scale
    return scale


@dataclass
class AdagradState:
    accumulators: dict[str, np.ndarray]

    @classmethod
    def create(cls, params: ModelParams, init: float) -> "AdagradState":
        return cls({n: np.full(t.shape, float(init)) for n, t in params.tensors.items()})

    def copy(self) -> "AdagradState":
        return AdagradState({n: a.copy() for n, a in self.accumulators.items()})


def adagrad_step(params: ModelParams, state: AdagradState, lr: float) -> None:
    """acc += g^2; theta -= lr * g / sqrt(acc). Tensors without a grad are left alone."""
    for name, t in params.tensors.items():
        if t.grad is None:
            continue
        acc = state.accumulators[name]
        acc += t.grad * t.grad
        t.data -= lr * t.grad / np.sqrt(acc)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


class ExampleOrder:
    """Endless shuffled pass over example indices; reshuffles at each epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while len(out) < k:
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            take = min(k - len(out), self.n - self.pos)
            out.extend(self.perm[self.pos : self.pos + take].tolist())
            self.pos += take
        return np.array(out, dtype=np.int64)


@dataclass
class TrainState:
    """Everything needed to continue training exactly where it stopped."""

    params: ModelParams
    optimizer: AdagradState
    order: ExampleOrder
    drop_rng: np.random.Generator
    step: int = 0
    log: list[tuple] = field(default_factory=list)

    def copy(self) -> "TrainState":
        return TrainState(
            self.params.copy(), self.optimizer.copy(), copy.deepcopy(self.order),
            copy.deepcopy(self.drop_rng), self.step, list(self.log),
        )


def init_state(cfg: TrainConfig, vocab_size: int, n_examples: int) -> TrainState:
    mcfg = ModelConfig(vocab_size, cfg.emb_dim, cfg.hidden_dim, cfg.heads)
    params = ModelParams.initialize(mcfg, np.random.default_rng(cfg.seed))
    return TrainState(
        params=params,
        optimizer=AdagradState.create(params, cfg.adagrad_init_accumulator),
        order=ExampleOrder(n_examples, np.random.default_rng([cfg.seed, 1])),
        drop_rng=np.random.default_rng([cfg.seed, 2]),
    )


def _fmt(x: float | None) -> str:
    return "-" if x is None else repr(float(x))


def train_step(state: TrainState, cfg: TrainConfig, examples: Sequence[EncodedExample],
               priors: WordPrior | None, phase: int) -> tuple:
    """One optimizer update; returns the log row."""
    idx = state.order.take(cfg.batch_size)
    batch = Batch.from_examples([examples[i] for i in idx])
    dropped = None
    if cfg.dropout_rate > 0:
        dropped = pointer_dropout_decision(cfg.dropout_rate, state.drop_rng, len(idx))
    lcfg = cfg.loss_config(phase)
    result = forward_teacher_forced(batch, state.params, coverage_on=lcfg.coverage_on, dropped=dropped)
    pos_priors = priors.for_positions(batch.src) if lcfg.mode == "word_prior" else None
    parts = total_loss(result, lcfg, pos_priors)
    step = state.step + 1
    if not np.isfinite(parts.total.item()):
        raise TrainingDiverged(step)
    state.params.zero_grad()
    ad.backward(parts.total)
    try:
        clip_gradients(state.params, cfg.max_grad_norm)
    except NonFiniteGradient as exc:
        raise TrainingDiverged(step, str(exc)) from exc
    adagrad_step(state.params, state.optimizer, cfg.learning_rate)
    state.params.zero_grad()
    state.step = step
    return (step, phase, parts.nll, parts.coverage, parts.pointing, parts.mean_pgen)


def run_phase(state: TrainState, cfg: TrainConfig, examples, priors, phase: int, n_steps: int) -> None:
    for _ in range(n_steps):
        row = train_step(state, cfg, examples, priors, phase)
        if row[0] % cfg.eval_every == 0:
            state.log.append(row)


def write_log(path: str | os.PathLike, rows: Sequence[tuple]) -> None:
    lines = ["\t".join(LOG_HEADER)]
    for step, phase, nll, cov, point, pgen in rows:
        lines.append(f"{step}\t{phase}\t{_fmt(nll)}\t{_fmt(cov)}\t{_fmt(point)}\t{_fmt(pgen)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class TrainResult:
    params: ModelParams
    log: list[tuple]
    phase1_state: TrainState | None = None


def train(
    cfg: TrainConfig,
    examples: Sequence[EncodedExample],
    vocab_size: int,
    priors: WordPrior | None = None,
    out_dir: str | os.PathLike | None = None,
    start: TrainState | None = None,
) -> TrainResult:
    """Run both phases and optionally write checkpoints and the log under ``out_dir``.

    ``start`` resumes from a phase-1 state produced with an equal
    :meth:`TrainConfig.phase1_key`; the state is copied, not consumed.
    """
    if not examples:
        raise ValueError("cannot train on an empty corpus")
    if cfg.mode == "word_prior" and cfg.extension_steps > 0 and priors is None:
        raise ValueError("word_prior mode needs word priors")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if start is None:
        state = init_state(cfg, vocab_size, len(examples))
        run_phase(state, cfg, examples, priors, 1, cfg.base_steps)
    else:
        if start.step != cfg.base_steps:
            raise ValueError(f"start state is at step {start.step}, expected {cfg.base_steps}")
        state = start.copy()
    phase1 = state.copy()
    if out is not None:
        state.params.save(out / "phase1.ckpt")
    run_phase(state, cfg, examples, priors, 2, cfg.extension_steps)
    if out is not None:
        state.params.save(out / "final.ckpt")
        write_log(out / "train_log.tsv", state.log)
    return TrainResult(state.params, state.log, phase1)


def config_from_mapping(values: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in values.items() if k in names})


# ---------------------------------------------------------------------------
# switch statistics
# ---------------------------------------------------------------------------


def average_pgen(
    params: ModelParams,
    examples: Sequence[EncodedExample],
    mode: str = "teacher_forced",
    coverage_on: bool = False,
    beam=None,
    batch_size: int = 16,
) -> float:
    """Mean p_gen pooled over every step of every example.

    ``teacher_forced`` runs the decoder on the references; ``decoded`` runs
    beam search and averages over the emitted summary tokens.
    """
    if mode not in ("teacher_forced", "decoded"):
        raise ValueError(f"unknown p_gen mode {mode!r}")
    if not examples:
        return float("nan")
    total, count = 0.0, 0
    if mode == "teacher_forced":
        with ad.no_grad():
            for lo in range(0, len(examples), batch_size):
                batch = Batch.from_examples(examples[lo : lo + batch_size])
                res = forward_teacher_forced(batch, params, coverage_on=coverage_on)
                pg = np.stack([s.p_gen.data.reshape(-1) for s in res.steps], axis=1)
                total += float(pg[batch.tgt_mask].sum())
                count += int(batch.tgt_mask.sum())
    else:
        from .decoder import BeamConfig, beam_search

        beam = beam or BeamConfig()
        for ex in examples:
            hyp = beam_search(params, ex, beam, coverage_on=coverage_on)
            emitted = hyp.pgen_trace[: len(hyp.summary_ids)]
            total += float(np.sum(emitted))
            count += len(emitted)
    return total / count if count else float("nan")
