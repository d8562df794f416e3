import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spectral_mup.estimator import GQATransformerLM, check_tokens
from spectral_mup.io import load_corpus
from spectral_mup.model import ModelConfig


def blocks(vocab=16, n=400, span=9, seed=0):
    c = load_corpus({"kind": "markov", "vocab": vocab, "length": n * span}, seed=seed)
    return c.tokens.reshape(n, span)


def small(**kw):
    base = dict(n_embd=32, n_layer=1, n_head=4, n_kv_head=2, vocab_size=16, seq_len=8,
                batch_size=16, max_steps=60, lr=0.5)
    base.update(kw)
    return GQATransformerLM(**base)


def test_get_set_params_and_clone():
    est = small(lr=0.1)
    assert est.get_params()["lr"] == 0.1
    c = clone(est).set_params(lr=0.2, random_state=3)
    assert c.lr == 0.2 and est.lr == 0.1
    assert not hasattr(c, "params_")


def test_fit_learns_markov_structure():
    X = blocks()
    est = small().fit(X[:-40])
    assert est.n_iter_ == 60 and not est.diverged_
    assert est.loss(X[-40:]) < np.log(16) - 0.5
    assert est.score(X[-40:]) == -est.loss(X[-40:])


def test_fit_is_reproducible():
    X = blocks()
    a = small(max_steps=5).fit(X)
    b = small(max_steps=5).fit(X)
    assert a.loss_curve_ == b.loss_curve_


def test_predict_proba_is_a_distribution():
    X = blocks()
    est = small(max_steps=3).fit(X)
    p = est.predict_proba(X[:5, :8])
    assert p.shape == (5, 16)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_array_equal(est.predict(X[:5, :8]), p.argmax(axis=1))


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        small().predict_proba(np.zeros((1, 4), dtype=int))


def test_token_validation():
    with pytest.raises(ValueError):
        check_tokens([[0, 1, 99]], vocab=16)
    with pytest.raises(ValueError):
        check_tokens([[0]], vocab=16, min_length=2)
    with pytest.raises(ValueError):
        small().fit(np.zeros((4, 20), dtype=int))


def test_fit_on_corpus_object():
    c = load_corpus({"kind": "uniform", "vocab": 16, "length": 2000}, seed=0)
    est = small(max_steps=4).fit(c)
    assert est.n_iter_ == 4


def test_from_config_round_trip():
    cfg = ModelConfig(n=48, L=3, H=6, kv_heads=2, vocab=20, seq_len=12)
    assert GQATransformerLM.from_config(cfg).build_config() == cfg


def test_divergence_is_flagged():
    X = blocks()
    est = small(parameterization="sp", lr=1e6, max_steps=30, init_std=30.0).fit(X)
    assert est.diverged_ and est.n_iter_ <= 30
