import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pglab import PointerGeneratorSummarizer
from pglab.data import SynthConfig, synthesize_examples
from pglab.validation import check_documents, check_fraction, check_pairs, check_positive_int, check_tokens


@pytest.fixture(scope="module")
def corpus():
    ex = synthesize_examples(SynthConfig(n_examples=40, source_len_min=8, source_len_max=12, summary_tokens=4))
    return [" ".join(s) for s, _ in ex], [t for _, t in ex]


def fast(**kw):
    base = dict(base_steps=60, extension_steps=20, vocab_size=80, emb_dim=8, hidden_dim=8, max_len=10)
    base.update(kw)
    return PointerGeneratorSummarizer(**base)


def test_params_round_trip():
    est = fast(heads=4, mode="naive")
    params = est.get_params()
    assert params["heads"] == 4 and params["mode"] == "naive"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(dropout_rate=0.3)
    assert est.dropout_rate == 0.3


def test_fit_predict_score(corpus):
    X, y = corpus
    est = fast(mode="word_prior").fit(X, y)
    preds = est.predict(X[:3])
    assert len(preds) == 3
    assert all(isinstance(t, str) for p in preds for t in p)
    assert 0.0 <= est.score(X[:5], y[:5]) <= 1.0
    assert len(est.training_log_) == 80


def test_fit_is_deterministic(corpus):
    X, y = corpus
    a = fast(dropout_rate=0.2).fit(X, y).predict(X[:4])
    b = fast(dropout_rate=0.2).fit(X, y).predict(X[:4])
    assert a == b


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        fast().predict(["a b"])


def test_bad_inputs(corpus):
    X, y = corpus
    with pytest.raises(ValueError, match="different lengths"):
        fast().fit(X, y[:-1])
    with pytest.raises(ValueError):
        fast(dropout_rate=1.0).fit(X, y)
    with pytest.raises(ValueError):
        fast(mode="bogus").fit(X, y)
    with pytest.raises(ValueError, match="metric"):
        fast().fit(X[:8], y[:8]).score(X[:2], y[:2], metric="bleu")


def test_check_tokens():
    assert check_tokens("a  b") == ["a", "b"]
    assert check_tokens(("a", "b")) == ["a", "b"]
    with pytest.raises(TypeError):
        check_tokens(3)
    with pytest.raises(TypeError):
        check_tokens(["a", 1])
    with pytest.raises(ValueError):
        check_tokens(["a b"])
    with pytest.raises(ValueError):
        check_tokens("")
    assert check_tokens("", allow_empty=True) == []


def test_check_documents_and_pairs():
    assert check_documents(["a", ["b"]]) == [["a"], ["b"]]
    with pytest.raises(TypeError):
        check_documents("a b")
    with pytest.raises(ValueError):
        check_documents([])
    with pytest.raises(ValueError, match="different lengths"):
        check_pairs(["a"], ["a", "b"])


def test_scalar_checks():
    assert check_positive_int(3, "n") == 3
    for bad in (0, True, 2.5):
        with pytest.raises(ValueError):
            check_positive_int(bad, "n")
    assert check_fraction(0.0, "r") == 0.0
    with pytest.raises(ValueError):
        check_fraction(1.0, "r")
    assert check_fraction(1.0, "r", closed_right=True) == 1.0
    assert np.isclose(check_fraction("0.5", "r"), 0.5)
