"""Finite-difference verification of the full model on a tiny configuration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Vocabulary, WordPrior, encode_example
from .losses import coverage_loss, naive_pointing_loss, nll_loss, pointing_cross_entropy, word_prior_pointing_loss
from .model import Batch, ModelConfig, ModelParams, forward_teacher_forced

GRADCHECK_MODES = ("nll", "coverage", "naive", "word_prior")


@dataclass
class TinyProblem:
    params: ModelParams
    batch: Batch
    position_priors: np.ndarray


def tiny_problem(heads: int = 1, seed: int = 0, vocab_size: int = 20, emb_dim: int = 8, hidden_dim: int = 8,
                 max_src: int = 6, max_tgt: int = 4, init_scale: float = 0.5) -> TinyProblem:
    """One example, duplicated into two rows: row 0 runs without coverage, row 1 with it.

    The source holds a repeated OOV word and the target copies it, so the
    copy path and the scatter of repeated ids are both exercised. A larger
    init scale than training uses keeps the nonlinearities away from their
    linear regime.
    """
    rng = np.random.default_rng(seed)
    words = [f"t{i:02d}" for i in range(vocab_size - 4)]
    vocab = Vocabulary(words)
    src = [words[1], words[2], "oovA", words[3], "oovA", words[5]][:max_src]
    tgt = [words[2], "oovA", words[9], "oovB"][:max_tgt]
    ex = encode_example(src, tgt, vocab, max_src, max_tgt)
    batch = Batch.from_examples([ex, ex])
    probs = np.zeros(len(vocab))
    probs[4:] = rng.uniform(0.0, 0.1, len(vocab) - 4)
    priors = WordPrior(probs, vocab).for_positions(batch.src)
    params = ModelParams.initialize(ModelConfig(vocab_size, emb_dim, hidden_dim, heads), rng, scale=init_scale)
    return TinyProblem(params, batch, priors)


def check_all_modes(heads: int = 1, seed: int = 0, epsilon: float = 1e-6,
                    lambda_cov: float = 1.0, lambda_naive: float = 0.05, lambda_wp: float = 0.2) -> dict[str, float]:
    """Max relative gradient error of the total loss in each mode.

    The word-prior mode is checked against differences of the loss with its
    cross-entropy factor frozen at the unperturbed value, since that factor
    carries no gradient by construction.
    """
    prob = tiny_problem(heads, seed)
    batch, params = prob.batch, prob.params
    coverage_rows = np.array([False, True])
    only = {r: np.outer(np.arange(2) == r, batch.tgt_mask[r]) for r in (0, 1)}

    with ad.no_grad():
        res = forward_teacher_forced(batch, params, coverage_on=coverage_rows)
        frozen = pointing_cross_entropy(res.steps, prob.position_priors).data.copy()

    def losses():
        res = forward_teacher_forced(batch, params, coverage_on=coverage_rows)
        steps = res.steps
        # each masked reduction averages over both rows; doubling recovers the single-row loss
        nll0 = ad.mul(nll_loss(steps, batch.tgt_ext, only[0]), 2.0)
        nll1 = ad.mul(nll_loss(steps, batch.tgt_ext, only[1]), 2.0)
        cov = ad.mul(coverage_loss([s.pointer_attention for s in steps], res.coverage, lambda_cov, only[1]), 2.0)
        base = ad.add(nll1, cov)
        naive = ad.mul(naive_pointing_loss([s.p_gen for s in steps], lambda_naive, only[1]), 2.0)
        # analytic pass: the production (detached) loss; perturbed passes: the frozen factor
        ce = None if ad.is_grad_enabled() else frozen
        wp = ad.mul(word_prior_pointing_loss(steps, prob.position_priors, lambda_wp, only[1], frozen_ce=ce), 2.0)
        return [nll0, base, ad.add(base, naive), ad.add(base, wp)]

    errs = ad.grad_check(losses, list(params), epsilon)
    return dict(zip(GRADCHECK_MODES, errs))
