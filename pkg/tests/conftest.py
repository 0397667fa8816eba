import sys

import numpy as np
import pytest

from pglab.data import Vocabulary, encode_example
from pglab.model import Batch, ModelConfig, ModelParams


def small_vocab(n_words: int = 16) -> Vocabulary:
    return Vocabulary([f"t{i:02d}" for i in range(n_words)])


def random_examples(rng, vocab, n=4, src_len=(3, 7), tgt_len=(1, 4), oov_rate=0.3, max_src=8, max_tgt=5):
    """Random encoded examples whose targets mix vocabulary words and copied source OOVs."""
    words = vocab.tokens[4:]
    out = []
    for _ in range(n):
        L = int(rng.integers(src_len[0], src_len[1] + 1))
        src = [f"oov{rng.integers(3)}" if rng.random() < oov_rate else words[rng.integers(len(words))]
               for _ in range(L)]
        T = int(rng.integers(tgt_len[0], tgt_len[1] + 1))
        tgt = [src[rng.integers(L)] if rng.random() < 0.5 else words[rng.integers(len(words))] for _ in range(T)]
        out.append(encode_example(src, tgt, vocab, max_src, max_tgt))
    return out


@pytest.fixture
def tiny_model():
    def make(heads=1, seed=0, scale=0.3, vocab_words=16, hidden=8, emb=6):
        vocab = small_vocab(vocab_words)
        rng = np.random.default_rng(seed)
        params = ModelParams.initialize(ModelConfig(len(vocab), emb, hidden, heads), rng, scale=scale)
        return params, vocab, rng
    return make


@pytest.fixture
def batch_of():
    return Batch.from_examples


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
