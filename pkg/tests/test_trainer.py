import math

import numpy as np
import pytest

from pglab import autodiff as ad
from pglab.autodiff import Tensor
from pglab.data import SynthConfig, build_vocab, compute_word_priors, encode_example, synthesize_examples
from pglab.decoder import BeamConfig
from pglab.losses import nll_loss
from pglab.model import Batch, ModelConfig, ModelParams, forward_teacher_forced
from pglab.trainer import (
    AdagradState, NonFiniteGradient, TrainConfig, TrainingDiverged, adagrad_step, average_pgen, clip_gradients,
    init_state, run_phase, train, write_log,
)


def with_grad(values, name="w"):
    t = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
    t.grad = np.array(values, dtype=np.float64)
    return t


def test_clip_scales_down():
    t = with_grad([4.0, 0.0])
    assert clip_gradients([t], 2.0) == 0.5
    assert np.linalg.norm(t.grad) == 2.0


def test_clip_noop_below_threshold():
    t = with_grad([1.0])
    assert clip_gradients([t], 2.0) == 1.0
    assert t.grad[0] == 1.0


def test_clip_global_norm_over_tensors():
    a, b = with_grad([3.0, 0.0]), with_grad([0.0, 3.0])
    scale = clip_gradients([a, b], 2.0)
    assert scale == pytest.approx(2 / (3 * math.sqrt(2)))
    assert scale == pytest.approx(0.4714, abs=1e-4)
    assert math.hypot(np.linalg.norm(a.grad), np.linalg.norm(b.grad)) <= 2.0 + 1e-12


def test_clip_names_non_finite_tensor():
    with pytest.raises(NonFiniteGradient, match="bad_one"):
        clip_gradients([with_grad([1.0]), with_grad([np.nan], "bad_one")], 2.0)


def scalar_params(value=1.0):
    params = ModelParams(ModelConfig(8), {"theta": Tensor(np.array([value]), requires_grad=True, name="theta")})
    return params, AdagradState.create(params, 0.1)


def test_adagrad_hand_step():
    params, state = scalar_params()
    params["theta"].grad = np.array([2.0])
    adagrad_step(params, state, 0.15)
    assert state.accumulators["theta"][0] == pytest.approx(4.1)
    assert params["theta"].data[0] - 1.0 == pytest.approx(-0.15 * 2 / math.sqrt(4.1))
    # -0.3 / sqrt(4.1) = -0.148159 to six significant digits
    assert params["theta"].data[0] - 1.0 == pytest.approx(-0.148159, abs=5e-7)


def test_adagrad_zero_gradient():
    params, state = scalar_params()
    params["theta"].grad = np.array([0.0])
    adagrad_step(params, state, 0.15)
    assert params["theta"].data[0] == 1.0
    assert state.accumulators["theta"][0] == 0.1


def test_adagrad_steps_shrink_and_accumulators_grow():
    params, state = scalar_params()
    prev_acc, prev_step = 0.1, math.inf
    for _ in range(10):
        before = params["theta"].data[0]
        params["theta"].grad = np.array([0.7])
        adagrad_step(params, state, 0.15)
        step = abs(params["theta"].data[0] - before)
        assert step < prev_step
        assert state.accumulators["theta"][0] >= prev_acc
        prev_step, prev_acc = step, state.accumulators["theta"][0]


def tiny_task(seed=1, n=8):
    exs = synthesize_examples(SynthConfig(n_examples=n, seed=seed, source_len_min=5, source_len_max=6,
                                          sentence_len_min=5, sentence_len_max=6, summary_tokens=3))
    corpus = [s for s, _ in exs] + [t for _, t in exs]
    vocab = build_vocab(corpus, 200)
    return [encode_example(s, t, vocab, 6, 4) for s, t in exs], vocab, compute_word_priors(corpus, vocab)


def small_cfg(**kw):
    base = dict(base_steps=20, extension_steps=10, emb_dim=8, hidden_dim=8)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps_returns_initialization():
    enc, vocab, _ = tiny_task()
    res = train(small_cfg(base_steps=0, extension_steps=0), enc, len(vocab))
    fresh = init_state(small_cfg(), len(vocab), len(enc)).params
    assert res.log == []
    for n in fresh.names():
        np.testing.assert_array_equal(res.params[n].data, fresh[n].data)


def test_overfits_tiny_task():
    enc, vocab, _ = tiny_task()
    res = train(TrainConfig(base_steps=500, extension_steps=0, learning_rate=0.3), enc, len(vocab))
    with ad.no_grad():
        batch = Batch.from_examples(enc)
        final = nll_loss(forward_teacher_forced(batch, res.params).steps, batch.tgt_ext, batch.tgt_mask).item()
    assert final < 0.1
    nll = [row[2] for row in res.log]
    windows = [np.mean(nll[i : i + 50]) for i in range(100, 500, 50)]
    assert all(b <= a for a, b in zip(windows, windows[1:]))


def test_same_seed_same_artifacts(tmp_path):
    enc, vocab, priors = tiny_task()
    cfg = small_cfg(mode="word_prior", dropout_rate=0.3)
    train(cfg, enc, len(vocab), priors, out_dir=tmp_path / "a")
    train(cfg, enc, len(vocab), priors, out_dir=tmp_path / "b")
    for f in ("phase1.ckpt", "final.ckpt", "train_log.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_branch_matches_fresh_run():
    enc, vocab, priors = tiny_task()
    cfg = small_cfg(mode="naive", dropout_rate=0.3)
    fresh = train(cfg, enc, len(vocab), priors)
    start = init_state(cfg, len(vocab), len(enc))
    run_phase(start, cfg, enc, priors, 1, cfg.base_steps)
    branched = train(cfg, enc, len(vocab), priors, start=start)
    assert branched.log == fresh.log
    for n in fresh.params.names():
        np.testing.assert_array_equal(branched.params[n].data, fresh.params[n].data)


def test_phase_one_never_evaluates_extension_losses(tmp_path):
    enc, vocab, priors = tiny_task()
    res = train(small_cfg(mode="word_prior"), enc, len(vocab), priors)
    for step, phase, nll, cov, point, pgen in res.log:
        if phase == 1:
            assert cov is None and point is None
        else:
            assert cov is not None and point is not None
    write_log(tmp_path / "log.tsv", res.log)
    first = (tmp_path / "log.tsv").read_text().splitlines()[1].split("\t")
    assert first[3] == first[4] == "-"


def test_divergence_reports_step():
    enc, vocab, _ = tiny_task()
    cfg = small_cfg()
    state = init_state(cfg, len(vocab), len(enc))
    state.params["out_b2"].data[:] = np.nan
    with pytest.raises(TrainingDiverged, match="step 1"):
        run_phase(state, cfg, enc, None, 1, 1)


def test_word_prior_needs_priors():
    enc, vocab, _ = tiny_task()
    with pytest.raises(ValueError, match="priors"):
        train(small_cfg(mode="word_prior"), enc, len(vocab))


def test_config_validation():
    for bad in (dict(mode="x"), dict(dropout_rate=1.0), dict(learning_rate=0), dict(base_steps=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig(mode="naive").effective_lambda_p == 0.05
    assert TrainConfig(mode="word_prior").effective_lambda_p == 0.2


def test_average_pgen_saturated_switch():
    enc, vocab, _ = tiny_task()
    params = init_state(small_cfg(), len(vocab), len(enc)).params
    params["ptr_b"].data[:] = 60.0
    assert average_pgen(params, enc) == pytest.approx(1.0)
    assert average_pgen(params, enc[:2], mode="decoded", beam=BeamConfig(2, 5)) == pytest.approx(1.0)


def test_average_pgen_rejects_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        average_pgen(None, [], mode="other")
