import numpy as np
import pytest

from ctcssl.confidence import (
    ConfidenceModel, calibration_report, is_monotone, scale_and_bin, score, train_confidence,
)
from ctcssl.decoder import ConfidenceFeatures


def blobs(seed=0, n=200):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-2.0, 1.0, (n, 8)), rng.normal(2.0, 1.0, (n, 8))])
    y = np.r_[np.zeros(n), np.ones(n)]
    return X, y


def accuracy(model, X, y):
    return np.mean([(score(model, x).score > 0.5) == bool(t) for x, t in zip(X, y)])


def test_separable_blobs():
    X, y = blobs()
    model = train_confidence(X, y)
    assert accuracy(model, X, y) >= 0.95


def test_zero_model_scores_half():
    m = ConfidenceModel(np.zeros(8), 0.0, np.zeros(8), np.ones(8))
    rec = score(m, np.arange(8.0), uid="u")
    assert rec.score == 0.5 and rec.scaled_score == 500 and rec.bin == 5 and rec.uid == "u"


def test_standardisation_invariance():
    X, y = blobs(1)
    X2 = X.copy()
    X2[:, 3] *= 2.0
    m1, m2 = train_confidence(X, y), train_confidence(X2, y)
    p1 = np.array([score(m1, x).score for x in X])
    p2 = np.array([score(m2, x).score for x in X2])
    np.testing.assert_allclose(p1, p2, atol=1e-9)


def test_single_class_rejected():
    X, _ = blobs()
    with pytest.raises(ValueError):
        train_confidence(X, np.ones(len(X)))


def test_zero_variance_feature_gets_unit_std():
    X, y = blobs()
    X[:, 0] = 3.0
    m = train_confidence(X, y)
    assert m.std[0] == 1.0


@pytest.mark.parametrize("p, scaled, b", [
    (0.0, 0, 0), (0.9999, 1000, 9), (1.0, 1000, 9), (0.55, 550, 5), (0.0999, 100, 1), (0.0994, 99, 0),
])
def test_binning(p, scaled, b):
    assert scale_and_bin(p) == (scaled, b)


def test_monotone_in_positive_weight():
    w = np.array([1.0, -0.5, 0, 0, 0, 0, 0, 0])
    m = ConfidenceModel(w, 0.1, np.zeros(8), np.ones(8))
    x = np.zeros(8)
    s0 = score(m, x).score
    x[0] = 0.5
    assert score(m, x).score > s0


def test_loss_non_increasing():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 8))
    y = (X[:, 0] + 0.5 * rng.normal(size=60) > 0).astype(float)
    hist = []
    train_confidence(X, y, lr=50.0, max_iter=300, history=hist)
    assert len(hist) > 10
    assert all(a >= b for a, b in zip(hist, hist[1:]))


def test_calibration_report():
    X, y = blobs(2, 100)
    m = train_confidence(X, y)
    rep = calibration_report(m, [(ConfidenceFeatures(x), t) for x, t in zip(X, y)])
    assert len(rep) <= 10
    assert rep[-1]["accuracy"] >= rep[0]["accuracy"]
    assert sum(r["count"] for r in rep) == len(X)
    assert calibration_report(m, []) == []
    assert isinstance(is_monotone(rep), bool)
