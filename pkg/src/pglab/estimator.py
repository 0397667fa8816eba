"""scikit-learn style wrapper: documents in, summaries out."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import build_vocab, compute_word_priors, decode_ids, encode_example
from .decoder import BeamConfig, beam_search
from .metrics import rouge_l, rouge_n
from .trainer import TrainConfig, train
from .validation import check_documents, check_fraction, check_pairs, check_positive_int

_ROUGE = {
    "rouge1": lambda c, r: rouge_n(c, r, 1),
    "rouge2": lambda c, r: rouge_n(c, r, 2),
    "rougeL": rouge_l,
}


class PointerGeneratorSummarizer(BaseEstimator):
    """Pointer-generator summarizer trained with the two-phase Adagrad schedule.

    ``X`` holds source documents and ``y`` reference summaries, each either a
    whitespace-tokenized string or a list of tokens. :meth:`predict` returns
    summaries as token lists.
    """

    def __init__(self, heads=1, mode="none", lambda_p=None, dropout_rate=0.0, coverage_on=True,
                 lambda_cov=1.0, vocab_size=200, emb_dim=32, hidden_dim=32, max_src=60, max_tgt=20,
                 base_steps=3000, extension_steps=3000, batch_size=4, learning_rate=0.15,
                 adagrad_init_accumulator=0.1, max_grad_norm=2.0, beam_size=4, max_len=100,
                 min_len=1, length_normalize=True, seed=1):
        self.heads = heads
        self.mode = mode
        self.lambda_p = lambda_p
        self.dropout_rate = dropout_rate
        self.coverage_on = coverage_on
        self.lambda_cov = lambda_cov
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hidden_dim = hidden_dim
        self.max_src = max_src
        self.max_tgt = max_tgt
        self.base_steps = base_steps
        self.extension_steps = extension_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adagrad_init_accumulator = adagrad_init_accumulator
        self.max_grad_norm = max_grad_norm
        self.beam_size = beam_size
        self.max_len = max_len
        self.min_len = min_len
        self.length_normalize = length_normalize
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        check_fraction(self.dropout_rate, "dropout_rate")
        for name in ("vocab_size", "max_src", "max_tgt"):
            check_positive_int(getattr(self, name), name, 5 if name == "vocab_size" else 1)
        return TrainConfig(
            learning_rate=self.learning_rate, adagrad_init_accumulator=self.adagrad_init_accumulator,
            max_grad_norm=self.max_grad_norm, base_steps=self.base_steps,
            extension_steps=self.extension_steps, batch_size=self.batch_size, seed=self.seed,
            coverage_on=self.coverage_on, lambda_cov=self.lambda_cov, mode=self.mode,
            lambda_p=self.lambda_p, heads=self.heads, dropout_rate=self.dropout_rate,
            emb_dim=self.emb_dim, hidden_dim=self.hidden_dim,
        )

    def _beam_config(self) -> BeamConfig:
        return BeamConfig(self.beam_size, self.max_len, self.min_len, self.length_normalize)

    def fit(self, X, y):
        pairs = check_pairs(X, y)
        cfg = self._train_config()
        beam = self._beam_config()
        corpus = [seq for pair in pairs for seq in pair]
        vocab = build_vocab(corpus, self.vocab_size)
        priors = compute_word_priors(corpus, vocab)
        encoded = [encode_example(s, t, vocab, self.max_src, self.max_tgt) for s, t in pairs]
        result = train(cfg, encoded, len(vocab), priors)
        self.vocab_ = vocab
        self.priors_ = priors
        self.params_ = result.params
        self.training_log_ = result.log
        self.beam_config_ = beam
        self.uses_coverage_ = bool(self.coverage_on and self.extension_steps > 0)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X) -> list[list[str]]:
        self._check_fitted()
        out = []
        for src in check_documents(X, "X"):
            ex = encode_example(src, [], self.vocab_, self.max_src, 1)
            hyp = beam_search(self.params_, ex, self.beam_config_, coverage_on=self.uses_coverage_)
            out.append(decode_ids(hyp.summary_ids, self.vocab_, ex.oov_tokens))
        return out

    def score(self, X, y, metric="rouge1") -> float:
        """Mean per-example ROUGE F1 of :meth:`predict` against ``y``."""
        if metric not in _ROUGE:
            raise ValueError(f"metric must be one of {sorted(_ROUGE)}, got {metric!r}")
        refs = [t for _, t in check_pairs(X, y)]
        preds = self.predict(X)
        return float(np.mean([_ROUGE[metric](p, r) for p, r in zip(preds, refs)]))
