"""Linear comparison models trained on per-axis episode means.

Both models consume the 3-vector of axis means only, never the 48-slot
feature vector. The SVM is one-vs-rest with a linear kernel; each binary
problem is solved in the dual by pairwise (SMO) updates with the maximal
violating pair rule, which keeps an unregularized bias term.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyEpisode,
    NonConvergence,
    SingularCovariance,
    UnknownClassCount,
)
from .signal import Episode

SCHEMA_VERSION = 1


class MeanFeature3(NamedTuple):
    mean_x: float
    mean_y: float
    mean_z: float


def mean_features(ep: Episode | np.ndarray) -> MeanFeature3:
    samples = ep.samples if isinstance(ep, Episode) else np.asarray(ep, dtype=np.float64)
    if samples.shape[0] == 0:
        raise EmptyEpisode("cannot average an empty episode")
    return MeanFeature3(*(float(v) for v in samples.mean(axis=0)))


def mean_feature_matrix(episodes: Sequence[Episode]) -> np.ndarray:
    return np.array([mean_features(ep) for ep in episodes], dtype=np.float64).reshape(-1, 3)


def _prepare(X, y) -> tuple[np.ndarray, list]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = list(y)
    if X.shape[0] != len(y):
        raise DimensionMismatch(f"{X.shape[0]} rows but {len(y)} labels")
    return X, y


def _label_set(y: list, label_set: Sequence | None) -> tuple:
    labels = tuple(label_set) if label_set is not None else tuple(sorted(set(y)))
    present = set(y)
    if len(present) < 2:
        raise UnknownClassCount(f"need at least two classes, got {len(present)}")
    unknown = present - set(labels)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} not in label_set")
    return labels


def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unarr(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


class _Persist:
    KIND = ""

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def _check(cls, d: dict) -> None:
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != cls.KIND:
            raise ValueError("not a serialized " + cls.KIND)

    def predict_index(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, so ties go to the earlier label
        return np.argmax(self.decision_function(X), axis=1)

    def predict(self, X) -> list:
        return [self.label_set[i] for i in self.predict_index(X)]


@dataclass
class LdaModel(_Persist):
    means: np.ndarray        # (K, 3); rows of absent classes are unused
    covariance: np.ndarray   # (3, 3), ridge included
    priors: np.ndarray       # (K,)
    label_set: tuple
    KIND = "lda"

    def decision_function(self, X) -> np.ndarray:
        """Linear discriminant scores ``x' S^-1 m_k - m_k' S^-1 m_k / 2 + log p_k``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        sol = np.linalg.solve(self.covariance, self.means.T)          # (3, K)
        with np.errstate(divide="ignore"):
            logp = np.log(self.priors)
        const = -0.5 * np.einsum("kd,dk->k", self.means, sol) + logp
        return X @ sol + const

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": self.KIND,
                "label_set": list(self.label_set), "means": _arr(self.means),
                "covariance": _arr(self.covariance), "priors": _arr(self.priors)}

    @classmethod
    def from_dict(cls, d: dict) -> LdaModel:
        cls._check(d)
        return cls(_unarr(d["means"]), _unarr(d["covariance"]), _unarr(d["priors"]),
                   tuple(d["label_set"]))


def lda_fit(X, y, label_set: Sequence | None = None, ridge: float = 1e-6) -> LdaModel:
    """Shared-covariance LDA.

    The pooled covariance uses the ``N - K`` denominator (``K`` = classes
    present) and gets ``ridge * trace / 3`` added to its diagonal. Pass
    ``ridge=0`` to disable the ridge; a singular covariance then raises
    :class:`SingularCovariance`.
    """
    X, y = _prepare(X, y)
    labels = _label_set(y, label_set)
    y_arr = np.array([labels.index(v) for v in y])
    k_all = len(labels)
    d = X.shape[1]
    means = np.zeros((k_all, d))
    priors = np.zeros(k_all)
    scatter = np.zeros((d, d))
    present = 0
    for k in range(k_all):
        rows = X[y_arr == k]
        if rows.shape[0] == 0:
            continue
        present += 1
        means[k] = rows.mean(axis=0)
        priors[k] = rows.shape[0] / X.shape[0]
        dev = rows - means[k]
        scatter += dev.T @ dev
    dof = X.shape[0] - present
    cov = scatter / dof if dof > 0 else scatter
    cov = 0.5 * (cov + cov.T)
    if ridge > 0:
        bump = ridge * np.trace(cov) / d
        cov = cov + (bump if bump > 0 else ridge) * np.eye(d)
    elif np.linalg.matrix_rank(cov) < d:
        raise SingularCovariance("pooled covariance is singular and the ridge is disabled")
    return LdaModel(means, cov, priors, labels)


def lda_predict(model: LdaModel, x):
    return model.predict(np.atleast_2d(x))[0]


@dataclass
class LinearSvmModel(_Persist):
    weights: np.ndarray   # (K, 3)
    biases: np.ndarray    # (K,)
    C: float
    label_set: tuple
    KIND = "linear_svm"

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.weights.T + self.biases

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": self.KIND,
                "label_set": list(self.label_set), "C": self.C,
                "weights": _arr(self.weights), "biases": _arr(self.biases)}

    @classmethod
    def from_dict(cls, d: dict) -> LinearSvmModel:
        cls._check(d)
        return cls(_unarr(d["weights"]), _unarr(d["biases"]), float(d["C"]),
                   tuple(d["label_set"]))


@dataclass(frozen=True)
class SmoResult:
    alpha: np.ndarray
    w: np.ndarray
    b: float
    iterations: int
    gap: float
    converged: bool


def smo_binary(X: np.ndarray, t: np.ndarray, C: float = 1.0, tol: float = 1e-6,
               max_iter: int | None = None) -> SmoResult:
    """Soft-margin linear SVM dual for targets ``t`` in {-1, +1}.

    Minimizes ``a'Qa/2 - sum(a)`` subject to ``0 <= a <= C`` and ``t'a = 0``
    where ``Q = (t t') * (X X')``. Stops when the maximal KKT violation drops
    below ``tol``; on hitting ``max_iter`` (default ``10_000 * n``) it warns
    with :class:`NonConvergence` and returns the iterate with the smallest gap.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = X.shape[0]
    if max_iter is None:
        max_iter = 10_000 * n
    K = X @ X.T
    Q = K * np.outer(t, t)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    best = (np.inf, alpha.copy(), grad.copy())
    it = 0
    gap = np.inf
    while True:
        score = -t * grad
        up = ((alpha < C) & (t > 0)) | ((alpha > 0) & (t < 0))
        low = ((alpha < C) & (t < 0)) | ((alpha > 0) & (t > 0))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        gap = float(score[i] - score[j])
        if gap < best[0]:
            best = (gap, alpha.copy(), grad.copy())
        if gap < tol or it >= max_iter:
            break
        it += 1
        # move along t_i e_i - t_j e_j, the feasible direction for the pair
        curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
        step = gap / curv if curv > 1e-12 else np.inf
        # box limits for a_i + t_i*step*... expressed on the shared step size
        lim_i = (C - alpha[i]) if t[i] > 0 else alpha[i]
        lim_j = alpha[j] if t[j] > 0 else (C - alpha[j])
        step = min(step, lim_i, lim_j)
        alpha[i] += t[i] * step
        alpha[j] -= t[j] * step
        grad += step * (t[i] * Q[:, i] - t[j] * Q[:, j])
        np.clip(alpha, 0.0, C, out=alpha)
    converged = gap < tol
    if not converged:
        warnings.warn(f"SMO stopped after {it} iterations with gap {gap:.3g}",
                      NonConvergence, stacklevel=3)
        gap, alpha, grad = best
    score = -t * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        up = ((alpha < C) & (t > 0)) | ((alpha > 0) & (t < 0))
        low = ((alpha < C) & (t < 0)) | ((alpha > 0) & (t > 0))
        hi = score[up].max() if up.any() else score.max()
        lo = score[low].min() if low.any() else score.min()
        b = float(0.5 * (hi + lo))
    w = (alpha * t) @ X
    return SmoResult(alpha, w, b, it, float(gap), converged)


def svm_fit(X, y, C: float = 1.0, label_set: Sequence | None = None, tol: float = 1e-6,
            max_iter: int | None = None) -> LinearSvmModel:
    """One-vs-rest linear SVMs, one dual problem per label.

    A label with no training rows gets a zero weight vector and a bias of
    ``-inf`` so it is never predicted.
    """
    X, y = _prepare(X, y)
    labels = _label_set(y, label_set)
    if C <= 0:
        raise ValueError("C must be positive")
    weights = np.zeros((len(labels), X.shape[1]))
    biases = np.full(len(labels), -np.inf)
    y_arr = np.array([labels.index(v) for v in y])
    for k in range(len(labels)):
        if not np.any(y_arr == k):
            continue
        t = np.where(y_arr == k, 1.0, -1.0)
        res = smo_binary(X, t, C, tol, max_iter)
        weights[k] = res.w
        biases[k] = res.b
    return LinearSvmModel(weights, biases, float(C), labels)


def svm_predict(model: LinearSvmModel, x):
    return model.predict(np.atleast_2d(x))[0]
