from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import constant_episode
from posturetrack.errors import (
    EmptyMatrix,
    LengthMismatch,
    SingleSubject,
    TooFewEpisodes,
    UnknownLabel,
    ZeroMean,
)
from posturetrack.evaluation import (
    ModelSpec,
    SplitSpec,
    comparison_csv,
    compute_metrics,
    confusion_matrix,
    cov,
    kfold_split,
    kruskal_wallis,
    loso_split,
    run_experiment,
)
from posturetrack.signal import Dataset
from posturetrack.synth import SynthConfig, generate_dataset


# -------------------------------------------------------------- confusion

def test_confusion_examples():
    cm = confusion_matrix(list("ABC"), list("ABC"), "ABC")
    assert np.array_equal(cm.counts, np.eye(3, dtype=int))
    cm = confusion_matrix(list("AAB"), list("ABB"), "AB")
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    assert not confusion_matrix([], [], "AB").counts.any()
    with pytest.raises(UnknownLabel):
        confusion_matrix(["A"], ["Z"], "AB")
    with pytest.raises(LengthMismatch):
        confusion_matrix(["A"], [], "AB")


def test_confusion_csv_and_sum():
    a = confusion_matrix(list("AB"), list("AA"), "AB")
    total = a + a
    assert total.total == 4
    assert total.to_csv().splitlines() == ["actual\\predicted,A,B", "A,2,0", "B,2,0"]


# ---------------------------------------------------------------- metrics

def test_metric_examples():
    assert compute_metrics(np.eye(4, dtype=int) * 3).as_tuple() == (1.0,) * 5
    m = compute_metrics(np.array([[1, 1], [0, 2]]))
    assert m.accuracy == 0.75 and m.balanced_accuracy == 0.75 and m.recall == 0.75
    assert m.precision == pytest.approx(0.8333, abs=1e-4)
    assert m.f1 == pytest.approx(0.7895, abs=1e-4)
    with pytest.raises(EmptyMatrix):
        compute_metrics(np.zeros((2, 2), dtype=int))


def test_absent_class_terms_count_as_zero():
    # only class A appears, always predicted correctly
    m = compute_metrics(np.array([[5, 0], [0, 0]]))
    assert m.recall == 0.5 and m.precision == 0.5
    assert m.accuracy == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5).flatmap(
    lambda k: st.lists(st.integers(0, 6), min_size=k * k, max_size=k * k)))
def test_metrics_match_counting_oracle(flat):
    k = int(round(len(flat) ** 0.5))
    cm = np.array(flat).reshape(k, k)
    if cm.sum() == 0:
        return
    m = compute_metrics(cm)
    assert m.as_tuple() == oracles.metrics_by_counting(cm)
    assert all(0.0 <= v <= 1.0 for v in m.as_tuple())


def test_random_predictor_balanced_accuracy():
    rng = np.random.default_rng(0)
    actual = np.repeat(np.arange(4), 2500)
    predicted = rng.integers(0, 4, size=actual.size)
    cm = confusion_matrix(actual.tolist(), predicted.tolist(), [0, 1, 2, 3])
    assert compute_metrics(cm).balanced_accuracy == pytest.approx(0.5, abs=0.05)


# -------------------------------------------------------------------- CoV

def test_cov_examples():
    assert cov([90, 100, 110]) == 0.10
    assert cov([4, 4, 4]) == 0.0
    assert cov([1]) == 0.0
    with pytest.raises(ZeroMean):
        cov([-1, 1])


@given(st.lists(st.floats(0.1, 10), min_size=2, max_size=20), st.floats(0.01, 100))
def test_cov_scale_invariant(values, c):
    assert cov([c * v for v in values]) == pytest.approx(cov(values), abs=1e-12)


# ---------------------------------------------------------------- Kruskal

def test_kruskal_examples():
    same = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
    assert same.statistic == pytest.approx(0, abs=1e-12) and same.pvalue == pytest.approx(1)
    r = kruskal_wallis([[1, 2, 3], [10, 11, 12]])
    assert r.statistic == pytest.approx(3.857, abs=1e-3)
    assert r.pvalue == pytest.approx(0.0495, abs=1e-4)
    assert r.df == 1 and not r.degenerate
    flat = kruskal_wallis([[2, 2], [2, 2, 2]])
    assert (flat.statistic, flat.pvalue, flat.degenerate) == (0.0, 1.0, True)


def test_kruskal_three_groups_exact_vs_asymptotic():
    groups = [[1.1, 2.0, 3.5], [2.2, 4.0], [5.0, 6.1, 7.3]]
    exact = kruskal_wallis(groups, method="exact")
    asym = kruskal_wallis(groups)
    assert exact.statistic == asym.statistic and exact.df == 2
    assert 0 < exact.pvalue <= 1 and 0 < asym.pvalue <= 1


def test_kruskal_matches_scipy():
    from scipy import stats
    rng = np.random.default_rng(1)
    for _ in range(20):
        groups = [rng.integers(0, 6, size=int(rng.integers(2, 7))).tolist() for _ in range(3)]
        if len({v for g in groups for v in g}) == 1:
            continue
        h, p = stats.kruskal(*groups)
        r = kruskal_wallis(groups)
        assert r.statistic == pytest.approx(h, rel=1e-12)
        assert r.pvalue == pytest.approx(p, rel=1e-10)


def test_kruskal_input_errors():
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2, 3]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1], [2]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2], [3]], method="bootstrap")


# ---------------------------------------------------------------- splits

def _partition_ok(folds, n):
    tests = [set(f.test) for f in folds]
    assert sum(len(t) for t in tests) == n
    assert set().union(*tests) == set(range(n))
    for f in folds:
        assert not set(f.train) & set(f.test)
        assert len(f.train) + len(f.test) == n


def test_kfold_examples():
    folds = kfold_split(["A", "B"] * 10, k=10)
    assert [len(f.test) for f in folds] == [2] * 10
    labels = ["A"] * 12 + ["B"] * 8
    folds = kfold_split(labels, k=4, rng_seed=3)
    for f in folds:
        got = [labels[i] for i in f.test]
        assert (got.count("A"), got.count("B")) == (3, 2)
    _partition_ok(folds, 20)
    with pytest.raises(TooFewEpisodes):
        kfold_split(["A"] * 3, k=4)


@given(st.lists(st.sampled_from("ABCD"), min_size=2, max_size=60), st.integers(2, 10),
       st.integers(0, 100))
def test_kfold_partition_and_determinism(labels, k, seed):
    if len(labels) < k:
        return
    folds = kfold_split(labels, k, seed)
    _partition_ok(folds, len(labels))
    assert folds == kfold_split(labels, k, seed)


def test_loso_examples():
    eps = [constant_episode(4, subject=s) for s in ("s1", "s2", "s3", "s1")]
    folds = loso_split(eps)
    assert [f.held_out for f in folds] == [("s1",), ("s2",), ("s3",)]
    assert folds[0].test == (0, 3)
    _partition_ok(folds, 4)
    with pytest.warns(UserWarning, match="s9"):
        assert len(loso_split(eps, subjects=["s1", "s2", "s3", "s9"])) == 3
    with pytest.raises(SingleSubject):
        loso_split(eps[:1])


def test_spec_parsing():
    assert SplitSpec.parse("kfold5") == SplitSpec("kfold", 5)
    assert str(SplitSpec.parse("KFOLD")) == "kfold10"
    assert ModelSpec.parse("lstm-fixed").name == "lstm"
    with pytest.raises(ValueError):
        SplitSpec.parse("holdout")
    with pytest.raises(ValueError):
        ModelSpec.parse("cnn")


# ------------------------------------------------------------ experiments

@pytest.fixture(scope="module")
def small_chest():
    return generate_dataset(SynthConfig(subjects=6, locations=("chest",), seed=2))


def test_run_experiment_et_loso(small_chest):
    rep = run_experiment(small_chest, ModelSpec("et", {"n_trees": 30}), "loso", seed=1)
    assert len(rep.folds) == 6
    assert rep.mean_f1 >= 0.95
    assert rep.aggregate.total == len(small_chest)
    assert rep.leakage_violations() == []
    again = run_experiment(small_chest, ModelSpec("et", {"n_trees": 30}), "loso", seed=1)
    assert rep.to_json() == again.to_json()


def test_run_experiment_thread_count_irrelevant(small_chest):
    a = run_experiment(small_chest, "lda", "kfold3", seed=4)
    b = run_experiment(small_chest, "lda", "kfold3", seed=4, n_jobs=3)
    assert a.to_json() == b.to_json()


def test_report_outputs(small_chest):
    rep = run_experiment(small_chest, "svm", "kfold4", seed=0)
    d = json.loads(rep.to_json())
    assert d["split"] == "kfold4" and len(d["folds"]) == 4
    assert d["cov_f1"] == rep.cov_f1 == pytest.approx(
        rep.summary()["f1"]["std"] / rep.summary()["f1"]["mean"], rel=1e-12)
    assert rep.fold_csv().splitlines()[0] == "fold,accuracy,balanced_accuracy,precision,recall,f1"
    text = comparison_csv([("chest", "svm", rep.mean_f1, 0.0, rep.cov_f1)])
    assert text.splitlines()[0] == "location,model,mean_f1,std_f1,cov"


def test_single_fold_cov_is_zero(small_chest):
    from posturetrack.evaluation import EvalReport
    rep = run_experiment(small_chest, "lda", "kfold2", seed=0)
    one = EvalReport(rep.model, rep.split, rep.label_set, rep.folds[:1])
    assert one.cov_f1 == 0.0


def test_experiment_with_lstm_runs(small_chest):
    keep = set(small_chest.subjects()[:3])
    sub = Dataset(tuple(e for e in small_chest.episodes if e.subject_id in keep),
                  small_chest.label_set)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = run_experiment(sub, ModelSpec("lstm", {"max_epochs": 2}), "loso", seed=0)
    assert len(rep.folds) == 3
    assert all(len(f.predictions) == 4 for f in rep.folds)
