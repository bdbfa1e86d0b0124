from __future__ import annotations

import warnings

import numpy as np
import pytest

from helpers import constant_episode, episode
from posturetrack.baselines import (
    LdaModel,
    LinearSvmModel,
    MeanFeature3,
    lda_fit,
    lda_predict,
    mean_feature_matrix,
    mean_features,
    smo_binary,
    svm_fit,
    svm_predict,
)
from posturetrack.errors import (
    DimensionMismatch,
    EmptyEpisode,
    NonConvergence,
    SingularCovariance,
    UnknownClassCount,
)
from posturetrack.signal import normalize_episode
from posturetrack.synth import SynthConfig, generate_dataset


def two_blobs(seed: int, n: int = 100, sigma: float = 0.1):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([1, 0, 0], sigma, size=(n, 3)),
                   rng.normal([-1, 0, 0], sigma, size=(n, 3))])
    return X, ["A"] * n + ["B"] * n


# ---------------------------------------------------------------- means

def test_mean_features_examples():
    assert mean_features(constant_episode(5, (0, 0, 1))) == MeanFeature3(0.0, 0.0, 1.0)
    assert mean_features(episode([[-1, 0, 0], [1, 0, 0]])).mean_x == 0.0
    with pytest.raises(EmptyEpisode):
        mean_features(np.zeros((0, 3)))


def test_supine_chest_mean_matches_generator():
    cfg = SynthConfig(subjects=5, postures=("supine",), locations=("chest",), seed=1)
    ds = generate_dataset(cfg)
    z = [mean_features(normalize_episode(ep)).mean_z for ep in ds.episodes]
    # the chest supine gravity direction has a frontal component of 0.9388
    assert np.mean(z) == pytest.approx(0.9388, abs=0.03)


def test_mean_feature_matrix_shape():
    assert mean_feature_matrix([]).shape == (0, 3)
    assert mean_feature_matrix([constant_episode(3)] * 4).shape == (4, 3)


# ------------------------------------------------------------------ LDA

def test_lda_separable_blobs():
    X, y = two_blobs(0)
    m = lda_fit(X, y)
    Xt, yt = two_blobs(1)
    assert np.mean([a == b for a, b in zip(m.predict(Xt), yt)]) >= 0.99


def test_lda_query_at_class_mean():
    X, y = two_blobs(2)
    m = lda_fit(X, y)
    for k, lab in enumerate(m.label_set):
        assert lda_predict(m, m.means[k]) == lab


def test_lda_duplicate_rows_keep_predictions():
    X, y = two_blobs(3, sigma=0.8)
    a = lda_fit(X, y)
    b = lda_fit(np.vstack([X, X]), y + y)
    np.testing.assert_allclose(a.means, b.means)
    np.testing.assert_allclose(a.priors, b.priors)
    grid = np.random.default_rng(4).normal(size=(500, 3)) * 2
    assert a.predict(grid) == b.predict(grid)


def test_lda_scores_are_affine():
    X, y = two_blobs(5, sigma=0.5)
    m = lda_fit(X, y)
    rng = np.random.default_rng(5)
    for _ in range(20):
        p, q = rng.normal(size=(2, 3))
        t = rng.uniform(-2, 2)
        lhs = m.decision_function(p + t * (q - p))
        rhs = m.decision_function(p) + t * (m.decision_function(q) - m.decision_function(p))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_lda_covariance_and_priors():
    X, y = two_blobs(6)
    m = lda_fit(X, y)
    np.testing.assert_allclose(m.covariance, m.covariance.T)
    assert np.all(np.linalg.eigvalsh(m.covariance) >= 0)
    assert m.priors.sum() == pytest.approx(1.0)


def test_lda_errors():
    X = np.array([[0, 0, 1.0], [0, 0, 1.0], [0, 1, 0], [0, 1, 0]])
    y = ["A", "A", "B", "B"]
    with pytest.raises(SingularCovariance):
        lda_fit(X, y, ridge=0)
    m = lda_fit(X, y)          # the ridge makes the constant-axis case usable
    assert m.predict(X) == y
    with pytest.raises(UnknownClassCount):
        lda_fit(X, ["A"] * 4)
    with pytest.raises(DimensionMismatch):
        lda_fit(X, ["A", "B"])


# ------------------------------------------------------------------ SVM

def test_svm_separable_one_feature():
    X = np.array([[-2.0], [-1.5], [-1.0], [0.5], [1.0], [3.0]])
    y = ["A", "A", "A", "B", "B", "B"]
    m = svm_fit(X, y)
    assert m.predict(X) == y


def test_svm_scaling_identity():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 3))
    y = np.where(X @ [1.0, -0.5, 0.3] + 0.3 * rng.normal(size=60) > 0, "A", "B").tolist()
    c = 3.0
    a = svm_fit(X, y, C=1.0)
    b = svm_fit(c * X, y, C=1.0 / c ** 2)
    assert a.predict(X) == b.predict(c * X)


def test_svm_three_classes_on_means():
    rng = np.random.default_rng(8)
    centers = np.array([[0, 0, 1.0], [0, 0, -1.0], [-1.0, 0, 0]])
    X = np.vstack([rng.normal(c, 0.1, size=(20, 3)) for c in centers])
    y = [lab for lab in ("supine", "prone", "left_side") for _ in range(20)]
    m = svm_fit(X, y, label_set=("supine", "prone", "left_side"))
    assert np.mean([p == t for p, t in zip(m.predict(X), y)]) == 1.0
    assert svm_predict(m, [0, 0, 0.9]) == "supine"


def test_svm_kkt_at_solution():
    X, y = two_blobs(9, n=30, sigma=0.7)
    t = np.where(np.array(y) == "A", 1.0, -1.0)
    res = smo_binary(X, t, C=1.0)
    assert res.converged
    assert abs(np.dot(res.alpha, t)) < 1e-9
    assert np.all((res.alpha >= 0) & (res.alpha <= 1.0))
    margin = t * (X @ res.w + res.b)
    free = (res.alpha > 1e-8) & (res.alpha < 1 - 1e-8)
    np.testing.assert_allclose(margin[free], 1.0, atol=1e-4)


def test_svm_non_convergence_warns_and_returns_iterate():
    X, y = two_blobs(10, n=30, sigma=0.9)
    with pytest.warns(NonConvergence):
        m = svm_fit(X, y, max_iter=2)
    assert np.all(np.isfinite(m.weights))


def test_svm_absent_label_never_predicted(tmp_path):
    X, y = two_blobs(11, n=10)
    m = svm_fit(X, y, label_set=("A", "B", "C"))
    assert "C" not in m.predict(np.random.default_rng(0).normal(size=(50, 3)) * 3)
    m.save(tmp_path / "svm.json")
    loaded = LinearSvmModel.load(tmp_path / "svm.json")
    assert loaded.predict(X) == m.predict(X)


def test_svm_errors():
    with pytest.raises(UnknownClassCount):
        svm_fit(np.ones((4, 3)), ["A"] * 4)
    with pytest.raises(ValueError):
        svm_fit(np.eye(3), ["A", "B", "A"], C=0)


def test_determinism_and_persistence(tmp_path):
    X, y = two_blobs(12, n=20, sigma=0.6)
    assert lda_fit(X, y).to_json() == lda_fit(X, y).to_json()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert svm_fit(X, y).to_json() == svm_fit(X, y).to_json()
    m = lda_fit(X, y)
    m.save(tmp_path / "lda.json")
    assert LdaModel.load(tmp_path / "lda.json").predict(X) == m.predict(X)
    with pytest.raises(ValueError):
        LinearSvmModel.load(tmp_path / "lda.json")
