"""Cross-validation, classification metrics and group comparison tests.

Metric conventions
------------------
For each class ``i`` of a ``K x K`` confusion matrix (rows actual, columns
predicted) TP/FP/FN/TN are counted one-vs-rest. Then

* accuracy is the class mean of ``(TP + TN) / total``,
* balanced accuracy is ``(sum TP/P + sum TN/N) / (2K)``,
* precision and recall are macro means of the per-class ratios,
* F1 is ``2PR / (P + R)`` computed from the macro precision and recall.

A per-class ratio with a zero denominator contributes 0 while the class still
counts towards ``K``. Sums go through :func:`math.fsum` so results do not
depend on summation order.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import (
    EmptyDataset,
    EmptyMatrix,
    LengthMismatch,
    SingleSubject,
    TooFewEpisodes,
    UnknownLabel,
    ZeroMean,
)
from .signal import Dataset, Episode, min_episode_length, normalize_episode

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "balanced_accuracy", "precision", "recall", "f1")


# ---------------------------------------------------------------- confusion

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray            # (K, K) int64, rows actual, columns predicted
    label_set: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if self.label_set != other.label_set:
            raise ValueError("label sets differ")
        return ConfusionMatrix(self.counts + other.counts, self.label_set)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *self.label_set])
        for lab, row in zip(self.label_set, self.counts):
            w.writerow([lab, *(int(v) for v in row)])
        return buf.getvalue()


def _label_str(v) -> str:
    return getattr(v, "value", v)


def confusion_matrix(actual: Sequence, predicted: Sequence,
                     label_set: Sequence) -> ConfusionMatrix:
    labels = tuple(_label_str(l) for l in label_set)
    actual = [_label_str(a) for a in actual]
    predicted = [_label_str(p) for p in predicted]
    if len(actual) != len(predicted):
        raise LengthMismatch(f"{len(actual)} actual vs {len(predicted)} predicted labels")
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for a, p in zip(actual, predicted):
        if a not in index or p not in index:
            raise UnknownLabel(f"label {a if a not in index else p!r} not in label set")
        counts[index[a], index[p]] += 1
    return ConfusionMatrix(counts, labels)


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRIC_NAMES)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(cm: ConfusionMatrix | np.ndarray) -> MetricSet:
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    k = counts.shape[0]
    tp = np.diag(counts)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp
    tn = total - tp - fn - fp
    acc, tpr, tnr, prec, rec = [], [], [], [], []
    for i in range(k):
        TP, FP, FN, TN = int(tp[i]), int(fp[i]), int(fn[i]), int(tn[i])
        acc.append(_ratio(TP + TN, total))
        tpr.append(_ratio(TP, TP + FN))
        tnr.append(_ratio(TN, TN + FP))
        prec.append(_ratio(TP, TP + FP))
        rec.append(_ratio(TP, TP + FN))
    accuracy = math.fsum(acc) / k
    balanced = (math.fsum(tpr) + math.fsum(tnr)) / (2 * k)
    precision = math.fsum(prec) / k
    recall = math.fsum(rec) / k
    f1 = _ratio_f(2 * precision * recall, precision + recall)
    return MetricSet(accuracy, balanced, precision, recall, f1)


def _ratio_f(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def cov(values: Sequence[float]) -> float:
    """Sample standard deviation over mean; a single value gives 0."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyDataset("no values")
    mean = math.fsum(v) / v.size
    if mean == 0:
        raise ZeroMean("coefficient of variation undefined for zero mean")
    if v.size == 1:
        return 0.0
    var = math.fsum((v - mean) ** 2) / (v.size - 1)
    return math.sqrt(var) / mean


# ------------------------------------------------------------ Kruskal-Wallis

class KruskalResult(NamedTuple):
    statistic: float
    pvalue: float
    df: int
    degenerate: bool


def _h_statistic(ranks: np.ndarray, sizes: Sequence[int], tie_factor: float) -> float:
    n = ranks.size
    offsets = np.cumsum([0, *sizes])
    total = math.fsum((ranks[offsets[g]:offsets[g + 1]].sum() ** 2) / sizes[g]
                      for g in range(len(sizes)))
    h = 12.0 / (n * (n + 1)) * total - 3.0 * (n + 1)
    return h / tie_factor


def _arrangements(n: int, sizes: Sequence[int]):
    """Yield index orderings assigning ``range(n)`` to consecutive groups."""
    if len(sizes) == 1:
        yield list(range(n)) if n == sizes[0] else []
        return

    def rec(pool: list[int], rest: Sequence[int]):
        if len(rest) == 1:
            yield list(pool)
            return
        for combo in itertools.combinations(pool, rest[0]):
            chosen = set(combo)
            remaining = [p for p in pool if p not in chosen]
            for tail in rec(remaining, rest[1:]):
                yield list(combo) + tail

    yield from rec(list(range(n)), list(sizes))


def kruskal_wallis(groups: Sequence[Sequence[float]], method: str = "asymptotic",
                   max_arrangements: int = 2_000_000) -> KruskalResult:
    """Rank-sum H test for equal distributions across groups.

    ``method="asymptotic"`` takes the p-value from the chi-square upper tail
    with ``groups - 1`` degrees of freedom. ``method="exact"`` enumerates
    every assignment of the pooled observations to groups of the observed
    sizes and reports the share whose H is at least the observed one.
    H is tie-corrected in both cases. When every observation is equal the
    statistic is undefined; ``H = 0, p = 1`` is returned with ``degenerate``
    set.
    """
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrays) < 2:
        raise ValueError("need at least two groups")
    if any(a.size == 0 for a in arrays):
        raise EmptyDataset("every group needs at least one value")
    pooled = np.concatenate(arrays)
    n = pooled.size
    if n < 3:
        raise ValueError("need at least three observations in total")
    if not np.all(np.isfinite(pooled)):
        raise ValueError("values must be finite")
    df = len(arrays) - 1
    sizes = [a.size for a in arrays]
    ranks = stats.rankdata(pooled)
    _, ties = np.unique(pooled, return_counts=True)
    tie_factor = 1.0 - float((ties ** 3 - ties).sum()) / (n ** 3 - n)
    if tie_factor <= 0:
        return KruskalResult(0.0, 1.0, df, True)
    h = _h_statistic(ranks, sizes, tie_factor)
    if method == "asymptotic":
        return KruskalResult(h, float(stats.chi2.sf(h, df)), df, False)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    count = math.factorial(n)
    for s in sizes:
        count //= math.factorial(s)
    if count > max_arrangements:
        raise ValueError(f"{count} arrangements exceed max_arrangements")
    tol = 1e-9 * max(1.0, abs(h))
    hits = 0
    for order in _arrangements(n, sizes):
        if _h_statistic(ranks[order], sizes, tie_factor) >= h - tol:
            hits += 1
    return KruskalResult(h, hits / count, df, False)


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class Fold:
    fold_id: str
    train: tuple[int, ...]
    test: tuple[int, ...]
    held_out: tuple[str, ...] = ()


def _labels_of(items: Sequence) -> list[str]:
    return [_label_str(it.label) if isinstance(it, Episode) else _label_str(it) for it in items]


def kfold_split(episodes: Sequence, k: int = 10, rng_seed: int = 0) -> list[Fold]:
    """Label-stratified k-fold split at episode granularity.

    Each label's indices are shuffled, the shuffled lists are concatenated in
    sorted label order, and position ``p`` of that sequence goes to fold
    ``p mod k``. ``episodes`` may also be a plain list of labels.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    labels = _labels_of(episodes)
    if len(labels) < k:
        raise TooFewEpisodes(f"{len(labels)} episodes cannot fill {k} folds")
    rng = np.random.default_rng(rng_seed)
    order: list[int] = []
    for lab in sorted(set(labels)):
        idx = np.array([i for i, l in enumerate(labels) if l == lab])
        order.extend(int(i) for i in rng.permutation(idx))
    assignment = np.empty(len(labels), dtype=np.int64)
    for pos, i in enumerate(order):
        assignment[i] = pos % k
    folds = []
    for f in range(k):
        test = tuple(int(i) for i in np.flatnonzero(assignment == f))
        train = tuple(int(i) for i in np.flatnonzero(assignment != f))
        folds.append(Fold(f"fold{f}", train, test))
    return folds


def loso_split(episodes: Sequence[Episode], subjects: Sequence[str] | None = None) -> list[Fold]:
    """One fold per subject, holding out all of that subject's episodes.

    ``subjects`` lists the expected subject ids; any without episodes is
    skipped with a warning. By default the subjects present are used.
    """
    present = sorted({ep.subject_id for ep in episodes})
    expected = sorted(set(subjects)) if subjects is not None else present
    for s in expected:
        if s not in present:
            warnings.warn(f"subject {s!r} has no episodes; skipping its fold", stacklevel=2)
    used = [s for s in expected if s in present]
    if len(used) < 2:
        raise SingleSubject(f"leave-one-subject-out needs at least 2 subjects, got {len(used)}")
    folds = []
    for s in used:
        test = tuple(i for i, ep in enumerate(episodes) if ep.subject_id == s)
        train = tuple(i for i, ep in enumerate(episodes) if ep.subject_id != s)
        folds.append(Fold(f"subject:{s}", train, test, (s,)))
    return folds


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "loso"      # "loso" or "kfold"
    k: int = 10

    @classmethod
    def parse(cls, text: str | SplitSpec) -> SplitSpec:
        if isinstance(text, SplitSpec):
            return text
        t = str(text).strip().lower()
        if t == "loso":
            return cls("loso")
        if t.startswith("kfold"):
            return cls("kfold", int(t[5:] or 10))
        raise ValueError(f"unknown split {text!r}; expected 'loso' or 'kfoldN'")

    def __str__(self) -> str:
        return "loso" if self.kind == "loso" else f"kfold{self.k}"


def make_folds(episodes: Sequence[Episode], split: SplitSpec | str, rng_seed: int = 0) -> list[Fold]:
    split = SplitSpec.parse(split)
    if split.kind == "loso":
        return loso_split(episodes)
    return kfold_split(episodes, split.k, rng_seed)


# --------------------------------------------------------------- experiment

MODEL_ALIASES = {
    "et": "et", "ensemble": "et", "ensemble_tree": "et",
    "adalstm": "adalstm",
    "lstm": "lstm", "lstm-fixed": "lstm", "lstm_fixed": "lstm",
    "lda": "lda", "svm": "svm",
}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, spec: str | ModelSpec, params: dict | None = None) -> ModelSpec:
        if isinstance(spec, ModelSpec):
            return spec
        key = str(spec).strip().lower()
        if key not in MODEL_ALIASES:
            raise ValueError(f"unknown model {spec!r}; choose from et, adalstm, lstm, lda, svm")
        return cls(MODEL_ALIASES[key], dict(params or {}))


@dataclass
class FoldAudit:
    """Which episodes fed each statistic used inside one fold."""

    fold_id: str
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    window_len: int | None = None
    window_sources: tuple[str, ...] = ()
    # episode id -> ids whose samples determined its normalization scale
    normalization_sources: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def violations(self) -> list[str]:
        problems = []
        test = set(self.test_ids)
        if test & set(self.window_sources):
            problems.append(f"{self.fold_id}: window size used held-out episodes")
        for target, sources in self.normalization_sources.items():
            foreign = [s for s in sources if s != target]
            if set(foreign) & test:
                problems.append(f"{self.fold_id}: normalization of {target} used held-out data")
        return problems


@dataclass(frozen=True)
class FoldResult:
    fold_id: str
    held_out: tuple[str, ...]
    test_ids: tuple[str, ...]
    confusion: ConfusionMatrix
    metrics: MetricSet
    predictions: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"fold_id": self.fold_id, "held_out": list(self.held_out),
                "test_ids": list(self.test_ids),
                "confusion": self.confusion.counts.tolist(),
                "metrics": asdict(self.metrics),
                "predictions": list(self.predictions)}


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    mean = math.fsum(v) / v.size
    if v.size < 2:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2) / (v.size - 1))


@dataclass
class EvalReport:
    model: str
    split: str
    label_set: tuple[str, ...]
    folds: list[FoldResult]
    audits: list[FoldAudit] = field(default_factory=list)
    location: str = ""
    seed: int = 0

    @property
    def aggregate(self) -> ConfusionMatrix:
        out = self.folds[0].confusion
        for f in self.folds[1:]:
            out = out + f.confusion
        return out

    def metric_values(self, name: str) -> list[float]:
        return [getattr(f.metrics, name) for f in self.folds]

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in METRIC_NAMES:
            mean, std = _mean_std(self.metric_values(m))
            out[m] = {"mean": mean, "std": std}
        return out

    @property
    def mean_f1(self) -> float:
        return self.summary()["f1"]["mean"]

    @property
    def cov_f1(self) -> float:
        return cov(self.metric_values("f1"))

    def leakage_violations(self) -> list[str]:
        return [v for a in self.audits for v in a.violations()]

    def to_dict(self) -> dict:
        return {
            "model": self.model, "split": self.split, "location": self.location,
            "seed": self.seed, "label_set": list(self.label_set),
            "folds": [f.to_dict() for f in self.folds],
            "summary": self.summary(), "cov_f1": self.cov_f1,
            "aggregate_confusion": self.aggregate.counts.tolist(),
            "audits": [_audit_dict(a) for a in self.audits],
        }

    def to_json(self, extra: dict | None = None) -> str:
        d = self.to_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, sort_keys=True, indent=1)

    def fold_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", *METRIC_NAMES])
        for f in self.folds:
            w.writerow([f.fold_id, *(repr(float(v)) for v in f.metrics.as_tuple())])
        return buf.getvalue()


def _audit_dict(a: FoldAudit) -> dict:
    return {"fold_id": a.fold_id, "window_len": a.window_len,
            "window_sources": list(a.window_sources),
            "n_train": len(a.train_ids), "n_test": len(a.test_ids),
            "normalization_sources": {k: list(v) for k, v in sorted(a.normalization_sources.items())}}


def comparison_csv(rows: Sequence[tuple[str, str, float, float, float]]) -> str:
    """``location,model,mean_f1,std_f1,cov`` table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["location", "model", "mean_f1", "std_f1", "cov"])
    for loc, model, mean, std, c in rows:
        w.writerow([loc, model, repr(float(mean)), repr(float(std)), repr(float(c))])
    return buf.getvalue()


def _episode_ids(episodes: Sequence[Episode]) -> list[str]:
    ids = [ep.episode_id or f"#{i}" for i, ep in enumerate(episodes)]
    if len(set(ids)) != len(ids):
        ids = [f"{eid}@{i}" for i, eid in enumerate(ids)]
    return ids


def _fold_seed(seed: int, fold_index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(fold_index,)).generate_state(1)[0])


def _fit_predict(spec: ModelSpec, train: list[Episode], test: list[Episode],
                 labels: tuple[str, ...], seed: int, audit: FoldAudit) -> list[str]:
    y_train = [ep.label.value for ep in train]
    if spec.name == "et":
        from .ensemble import EnsembleParams, fit_bagged_ensemble
        from .features import feature_matrix
        window = min_episode_length(train)
        audit.window_len = window
        audit.window_sources = audit.train_ids
        overlap = float(spec.params.get("overlap", 0.5))
        X_train = feature_matrix(train, window, overlap)
        X_test = feature_matrix(test, window, overlap, allow_short=True)
        params = EnsembleParams(**{k: v for k, v in spec.params.items() if k != "overlap"})
        model = fit_bagged_ensemble(X_train, y_train, seed, params, labels)
        return model.predict(X_test)
    if spec.name in ("adalstm", "lstm"):
        from .adalstm import LstmConfig, train as train_lstm
        cfg = LstmConfig(**spec.params)
        if spec.name == "lstm":
            cfg = LstmConfig(**{**asdict(cfg), "lr_schedule": "fixed"})
        result = train_lstm([ep.samples for ep in train], y_train, labels, cfg, seed)
        return result.model.predict([ep.samples for ep in test])
    from .baselines import lda_fit, mean_feature_matrix, svm_fit
    X_train = mean_feature_matrix(train)
    X_test = mean_feature_matrix(test)
    if spec.name == "lda":
        model = lda_fit(X_train, y_train, labels, **spec.params)
    else:
        model = svm_fit(X_train, y_train, label_set=labels, **spec.params)
    return model.predict(X_test)


def run_experiment(dataset: Dataset, model_spec: ModelSpec | str,
                   split_spec: SplitSpec | str = "loso", seed: int = 0,
                   n_jobs: int = 1, normalize: bool = True,
                   progress: Callable[[str], None] | None = None) -> EvalReport:
    """Cross-validate one model on one dataset.

    Per fold: normalize every episode by its own median magnitude, derive the
    window size from the training episodes only, fit, and predict the
    held-out episodes. Fold seeds are derived from ``seed`` and the fold
    index, so results do not depend on ``n_jobs`` (folds run on threads).
    """
    spec = ModelSpec.parse(model_spec)
    split = SplitSpec.parse(split_spec)
    episodes = list(dataset.episodes)
    if not episodes:
        raise EmptyDataset("dataset has no episodes")
    labels = tuple(l.value for l in dataset.label_set)
    ids = _episode_ids(episodes)
    folds = make_folds(episodes, split, seed)

    def run_fold(item: tuple[int, Fold]) -> tuple[FoldResult, FoldAudit]:
        index, fold = item
        started = time.perf_counter()
        audit = FoldAudit(fold.fold_id, tuple(ids[i] for i in fold.train),
                          tuple(ids[i] for i in fold.test))
        prepared = {}
        for i in (*fold.train, *fold.test):
            ep = episodes[i]
            prepared[i] = normalize_episode(ep) if normalize else ep
            audit.normalization_sources[ids[i]] = (ids[i],) if normalize else ()
        train = [prepared[i] for i in fold.train]
        test = [prepared[i] for i in fold.test]
        preds = _fit_predict(spec, train, test, labels, _fold_seed(seed, index), audit)
        actual = [ep.label.value for ep in test]
        cm = confusion_matrix(actual, preds, labels)
        result = FoldResult(fold.fold_id, fold.held_out, audit.test_ids, cm,
                            compute_metrics(cm), tuple(preds))
        if progress is not None:
            progress(f"{spec.name} {fold.fold_id} f1={result.metrics.f1:.3f} "
                     f"({time.perf_counter() - started:.1f}s)")
        return result, audit

    items = list(enumerate(folds))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run_fold, items))
    else:
        outcomes = [run_fold(it) for it in items]
    location = ",".join(sorted({ep.location.value for ep in episodes}))
    return EvalReport(spec.name, str(split), labels, [o[0] for o in outcomes],
                      [o[1] for o in outcomes], location, seed)
