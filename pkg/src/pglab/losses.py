"""Training objectives: NLL, coverage, naive pointing and word-prior pointing losses.

Every function takes a per-step sequence of tensors shaped (B, ...) or
unbatched (...,), and returns the mean over examples of the per-example
loss. An optional ``step_mask`` of shape (B, T) marks real decoder steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ForwardResult, StepOutput

MODES = ("none", "naive", "word_prior")


@dataclass
class LossConfig:
    lambda_cov: float = 1.0
    lambda_p: float = 0.0
    mode: str = "none"
    coverage_on: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown pointing-loss mode {self.mode!r}; expected one of {MODES}")
        if self.lambda_cov < 0 or self.lambda_p < 0:
            raise ValueError("loss weights must be non-negative")


def _as_bt(values: Sequence, item_ndim: int) -> Tensor:
    """Stack per-step tensors whose per-example item has ``item_ndim`` dims into (B, T, ...)."""
    values = [ad.as_tensor(v) for v in values]
    if values[0].ndim == item_ndim:
        return ad.reshape(ad.stack(values, axis=0), (1, len(values)) + values[0].shape)
    return ad.stack(values, axis=1)


def _reduce(per_step: Tensor, step_mask, normalize: bool) -> Tensor:
    """per_step (B, T) -> mean over B of the masked (and optionally length-normalized) sum over T."""
    B, T = per_step.shape
    m = np.ones((B, T)) if step_mask is None else np.asarray(step_mask, dtype=np.float64).reshape(B, T)
    if normalize:
        m = m / np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return ad.mul(ad.sum(ad.mul(per_step, m)), 1.0 / B)


def nll_loss(steps: Sequence[StepOutput], target_ext_ids, step_mask=None) -> Tensor:
    """Mean over steps of -log p(target), using the clamped log."""
    final = _as_bt([s.final for s in steps], 1)
    B, T, _ = final.shape
    tgt = np.asarray(target_ext_ids, dtype=np.int64).reshape(B, -1)[:, :T]
    picked = ad.getitem(final, (np.arange(B)[:, None], np.arange(T)[None, :], tgt))
    return _reduce(ad.neg(ad.safe_log(picked)), step_mask, normalize=True)


def coverage_loss(attention_trace: Sequence, coverage_trace: Sequence, lambda_cov: float, step_mask=None) -> Tensor:
    """lambda/T * sum_t sum_i min(a_i, c_i) over the pointer head."""
    a = _as_bt(attention_trace, 1)
    c = _as_bt(coverage_trace, 1)
    per_step = ad.sum(ad.minimum(a, c), axis=-1)
    return ad.mul(_reduce(per_step, step_mask, normalize=True), lambda_cov)


def _p_point(pgen_trace: Sequence) -> Tensor:
    pg = [ad.reshape(ad.as_tensor(p), (-1,)) for p in pgen_trace]
    return ad.sub(1.0, ad.stack(pg, axis=1))


def naive_pointing_loss(pgen_trace: Sequence, lambda_p: float, step_mask=None) -> Tensor:
    """lambda_p * sum_t (1 - p_gen); summed, not averaged, over steps."""
    return ad.mul(_reduce(_p_point(pgen_trace), step_mask, normalize=False), lambda_p)


def pointing_cross_entropy(steps: Sequence[StepOutput], position_priors) -> Tensor:
    """-sum_i prior(x_i) log(1 - p_a(i)) per example and step, shape (B, T)."""
    p_a = _as_bt([s.pointer_attention for s in steps], 1)
    B = p_a.shape[0]
    priors = np.asarray(position_priors, dtype=np.float64).reshape(B, 1, -1)
    return ad.neg(ad.sum(ad.mul(ad.safe_log(ad.sub(1.0, p_a)), priors), axis=-1))


def word_prior_pointing_loss(
    steps: Sequence[StepOutput],
    position_priors,
    lambda_p: float,
    step_mask=None,
    detach: bool = True,
    frozen_ce=None,
) -> Tensor:
    """sum_t lambda_p * p_point * CE_t, with CE_t = -sum_i prior(x_i) log(1 - p_a(i)).

    ``position_priors`` holds the prior of the vocabulary word at each source
    position (0 for OOV and padding). With ``detach`` the cross-entropy factor
    is a constant, so only p_point receives gradient. ``frozen_ce`` (B, T)
    replaces the cross-entropy factor with given values; finite-difference
    checks use it to hold that factor fixed while parameters move.
    """
    p_point = _p_point([s.p_gen for s in steps])
    if frozen_ce is not None:
        frozen_ce = np.asarray(frozen_ce, dtype=np.float64)
        if frozen_ce.size != np.prod(p_point.shape):
            raise ad.ShapeError(f"word_prior_pointing_loss: incompatible shapes {frozen_ce.shape} and {p_point.shape}")
        ce = Tensor(frozen_ce.reshape(p_point.shape))
    else:
        ce = pointing_cross_entropy(steps, position_priors)
        if detach:
            ce = ad.stop_gradient(ce)
    return ad.mul(_reduce(ad.mul(p_point, ce), step_mask, normalize=False), lambda_p)


@dataclass
class LossBreakdown:
    total: Tensor
    nll: float
    coverage: float | None
    pointing: float | None
    mean_pgen: float


def total_loss(result: ForwardResult, cfg: LossConfig, position_priors=None) -> LossBreakdown:
    """NLL plus whichever coverage and pointing terms ``cfg`` enables."""
    batch = result.batch
    mask = batch.tgt_mask
    steps = result.steps
    nll = nll_loss(steps, batch.tgt_ext, mask)
    total = nll
    cov_val = point_val = None
    if cfg.coverage_on:
        cov = coverage_loss([s.pointer_attention for s in steps], result.coverage, cfg.lambda_cov, mask)
        total = ad.add(total, cov)
        cov_val = cov.item()
    if cfg.mode == "naive":
        pt = naive_pointing_loss([s.p_gen for s in steps], cfg.lambda_p, mask)
        total = ad.add(total, pt)
        point_val = pt.item()
    elif cfg.mode == "word_prior":
        if position_priors is None:
            raise ValueError("word_prior mode needs position priors")
        pt = word_prior_pointing_loss(steps, position_priors, cfg.lambda_p, mask)
        total = ad.add(total, pt)
        point_val = pt.item()
    pg = np.stack([s.p_gen.data.reshape(-1) for s in steps], axis=1)
    return LossBreakdown(total, nll.item(), cov_val, point_val, float(pg[mask].mean()))
