import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctcssl.ctc import brute_force_log_likelihood, collapse, log_softmax
from ctcssl.decoder import FEATURE_NAMES, extract_confidence_features, greedy_decode, prefix_beam_decode

from conftest import random_post

A, B = 1, 2


def onehot_post(labels, K):
    p = np.full((len(labels), K), 1e-6)
    p[np.arange(len(labels)), labels] = 1.0
    p /= p.sum(axis=1, keepdims=True)
    return np.log(p)


def test_greedy_examples():
    res = greedy_decode(onehot_post([A, A, 0, B], 3))
    assert res.best_path == (A, A, 0, B)
    assert res.hypothesis == (A, B)
    assert greedy_decode(onehot_post([0, 0, 0], 3)).hypothesis == ()


def test_greedy_tie_goes_to_lowest_index():
    post = np.log(np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]]))
    res = greedy_decode(post)
    assert res.best_path == (0, 1)
    assert res.path_log_score == pytest.approx(2 * math.log(0.4))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(2, 6)),
              elements=st.floats(-5, 5, allow_nan=False)))
def test_greedy_is_argmax_then_collapse(logits):
    post = log_softmax(logits)
    path = [max(range(post.shape[1]), key=lambda k: (post[t, k], -k)) for t in range(post.shape[0])]
    merged = [k for k, _ in itertools.groupby(path)]
    assert greedy_decode(post).hypothesis == tuple(k for k in merged if k != 0)


def test_beam_width_one_and_sorted(rng):
    post = random_post(rng, 8, 4)
    res = prefix_beam_decode(post, 1)
    assert len(res.nbest) == 1
    res = prefix_beam_decode(post, 6)
    scores = [s for _, s in res.nbest]
    assert scores == sorted(scores, reverse=True)
    assert len({h for h, _ in res.nbest}) == len(res.nbest)
    with pytest.raises(ValueError):
        prefix_beam_decode(post, 0)


def test_beam_best_at_least_greedy_sequence(rng):
    from ctcssl.ctc import ctc_log_likelihood
    for _ in range(30):
        post = random_post(rng, int(rng.integers(1, 10)), 4, scale=1.0)
        for w in (1, 2, 4):
            res = prefix_beam_decode(post, w, prune=3.0)
            assert res.nbest[0][1] >= ctc_log_likelihood(post, res.hypothesis) - 1e-12


def test_exhaustive_beam_matches_brute_force_map():
    rng = np.random.default_rng(3)
    for _ in range(40):
        T, K = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        post = random_post(rng, T, K, scale=1.5)
        seqs = [h for L in range(T + 1) for h in itertools.product(range(1, K), repeat=L)]
        scores = {h: brute_force_log_likelihood(post, h) for h in seqs}
        best = max(scores.values())
        res = prefix_beam_decode(post, len(seqs))
        assert res.nbest[0][1] == pytest.approx(best, abs=1e-10)
        assert scores[res.nbest[0][0]] == pytest.approx(best, abs=1e-10)
        for h, s in res.nbest:
            assert s == pytest.approx(scores[h], abs=1e-10)


def test_features_blank_only_onehot():
    with np.errstate(divide="ignore"):
        post = np.log(np.array([[1.0, 0.0, 0.0]] * 4))
    dec = prefix_beam_decode(post, 3)
    f = extract_confidence_features(post, dec)
    vals = dict(zip(FEATURE_NAMES, f.values))
    assert vals["mean_max_logp"] == 0.0
    assert vals["blank_fraction"] == 1.0
    assert vals["hyp_length"] == 0
    assert vals["nbest_depth"] == 1 and vals["nbest_gap"] == 0.0
    assert np.isfinite(f.values).all()


def test_features_uniform_entropy():
    K = 5
    post = np.log(np.full((6, K), 1 / K))
    f = extract_confidence_features(post, greedy_decode(post))
    assert f.values.shape == (8,)
    assert dict(zip(FEATURE_NAMES, f.values))["mean_entropy"] == pytest.approx(math.log(K))
    assert dict(zip(FEATURE_NAMES, f.values))["n_frames"] == 6


def test_features_finite_random(rng):
    for _ in range(50):
        post = random_post(rng, int(rng.integers(1, 30)), 5, scale=6.0)
        f = extract_confidence_features(post, prefix_beam_decode(post, 3, prune=8.0))
        assert len(f.values) == 8 and np.isfinite(f.values).all()
