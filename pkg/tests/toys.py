"""Small models with brute-force oracles, shared by the decoder and acceptance tests."""

import itertools

import numpy as np

from pglab import autodiff as ad
from pglab.data import STOP_ID, Vocabulary, encode_example
from pglab.decoder import _DecoderState, _model_step_fn
from pglab.model import Batch, ModelConfig, ModelParams, encode


class ToyDecoder:
    """Step-by-step access to one model on one example, with greedy and brute-force oracles."""

    def __init__(self, params, example, coverage_on=False):
        self.params = params
        self.example = example
        self.coverage_on = coverage_on
        with ad.no_grad():
            self.enc = encode(Batch.from_examples([example]), params)
        self.V = example.ext_vocab_size

    @classmethod
    def random(cls, seed: int, scale: float = 1.0, heads: int = 1):
        """A real model over the four reserved ids only, so every token is reachable by name."""
        rng = np.random.default_rng(seed)
        example = encode_example(["[PAD]", "[START]", "[STOP]"], ["[START]"], Vocabulary([]), 6, 4)
        return cls(ModelParams.initialize(ModelConfig(4, 8, 8, heads), rng, scale=scale), example)

    def init_state(self):
        return _DecoderState(self.enc.s0.data[0], self.enc.cell0.data[0], np.zeros(self.example.source_len))

    def step_fn(self):
        return _model_step_fn(self.params, self.enc, self.coverage_on, 2)

    def step_logp(self, prefix):
        """Log-probabilities of the next token after ``prefix``."""
        step = self.step_fn()
        state, last = [self.init_state()], np.array([-1])
        with ad.no_grad():
            for tok in prefix:
                _, state, _, _ = step(state, last)
                last = np.array([tok])
            lp, _, _, _ = step(state, last)
        return lp[0]

    def greedy(self, max_len: int, min_len: int = 1):
        """Argmax decoding with STOP masked before ``min_len``; ties go to the lower id."""
        step = self.step_fn()
        state, last, out = [self.init_state()], np.array([-1]), []
        with ad.no_grad():
            for t in range(max_len):
                lp, state, _, _ = step(state, last)
                lp = lp[0].copy()
                if t < min_len:
                    lp[STOP_ID] = -np.inf
                tok = int(np.argmax(lp))
                out.append(tok)
                if tok == STOP_ID:
                    break
                last = np.array([tok])
        return out

    def sequence_logp(self, seq):
        step = self.step_fn()
        state, last, total = [self.init_state()], np.array([-1]), 0.0
        with ad.no_grad():
            for tok in seq:
                lp, state, _, _ = step(state, last)
                total += lp[0, tok]
                last = np.array([tok])
        return total

    def exhaustive_best(self, max_len: int, min_len: int = 0):
        """Highest-logprob complete sequence: ends in STOP or reaches ``max_len``."""
        best = None
        for n in range(1, max_len + 1):
            for seq in itertools.product(range(self.V), repeat=n):
                if STOP_ID in seq[:-1] or (n < max_len and seq[-1] != STOP_ID):
                    continue
                if STOP_ID in seq and seq.index(STOP_ID) < min_len:
                    continue
                lp = self.sequence_logp(seq)
                if best is None or lp > best[0] + 1e-12:
                    best = (lp, list(seq))
        return best
