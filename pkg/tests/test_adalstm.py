from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from posturetrack import adalstm
from posturetrack.adalstm import (
    AdaLstmModel,
    LstmConfig,
    LstmDirectionParams,
    OptimizerState,
    adam_update,
    bilstm_forward,
    compute_gradients,
    lr_schedule,
    lstm_cell_forward,
    make_batch,
    make_minibatches,
    predict,
    predict_logits,
    train,
    weighted_cross_entropy,
)
from posturetrack.errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptySequence,
    NonFinite,
    NumericalAbort,
    ShapeMismatch,
)
from posturetrack.signal import CLASS_ACT_LABELS, normalize_episode
from posturetrack.synth import SynthConfig, generate_dataset

TINY = LstmConfig(hidden_size=2, dense_widths=(3, 3))
LABELS3 = ("supine", "prone", "left_side")


def random_params(cfg: LstmConfig, k: int, seed: int, scale: float = 0.8) -> dict:
    rng = np.random.default_rng(seed)
    return {n: rng.uniform(-scale, scale, size=s) for n, s in adalstm.param_shapes(cfg, k).items()}


# ------------------------------------------------------------------ cell

def test_zero_cell():
    H = 10
    p = LstmDirectionParams(np.zeros((3, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H))
    h, c = lstm_cell_forward(p, [0.3, -2, 5], np.zeros(H), np.zeros(H))
    assert not h.any() and not c.any()


def test_cell_bounded_and_matches_oracle():
    rng = np.random.default_rng(0)
    for seed in range(5):
        prm = random_params(TINY, 3, seed, scale=3.0)
        d = LstmDirectionParams(prm["fw_W"], prm["fw_U"], prm["fw_b"])
        x, h0, c0 = rng.normal(size=3) * 3, rng.uniform(-1, 1, 2), rng.normal(size=2)
        h, c = lstm_cell_forward(d, x, h0, c0)
        assert np.all(np.abs(h) < 1)
        hw, cw = oracles.lstm_step(d.W.tolist(), d.U.tolist(), d.b.tolist(), x.tolist(),
                                   h0.tolist(), c0.tolist())
        np.testing.assert_allclose(h, hw, atol=1e-12, rtol=0)
        np.testing.assert_allclose(c, cw, atol=1e-12, rtol=0)


def test_cell_rejects_non_finite():
    d = LstmDirectionParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    with pytest.raises(NonFinite):
        lstm_cell_forward(d, [np.nan, 0, 0], np.zeros(2), np.zeros(2))


# --------------------------------------------------------------- forward

def test_zero_model_outputs():
    m = AdaLstmModel.zeros(LABELS3)
    seq = np.random.default_rng(1).normal(size=(7, 3))
    assert bilstm_forward(m, seq).shape == (20,) and not bilstm_forward(m, seq).any()
    np.testing.assert_allclose(predict_logits(m, seq), [1 / 3] * 3, atol=1e-15)
    assert predict(m, seq) == "supine"


def test_length_one_sequence_sees_same_input_both_ways():
    prm = random_params(LstmConfig(), 3, 2)
    m = AdaLstmModel(LstmConfig(), LABELS3, prm)
    x = np.array([[0.1, 0.9, -0.3]])
    out = bilstm_forward(m, x)
    h_f, _ = lstm_cell_forward(m.direction("fw"), x[0], np.zeros(10), np.zeros(10))
    h_b, _ = lstm_cell_forward(m.direction("bw"), x[0], np.zeros(10), np.zeros(10))
    np.testing.assert_allclose(out, np.concatenate([h_f, h_b]), atol=1e-14)


def test_reversal_symmetry():
    rng = np.random.default_rng(3)
    for seed in range(4):
        prm = random_params(LstmConfig(), 3, seed)
        swapped = dict(prm)
        for part in ("W", "U", "b"):
            swapped[f"fw_{part}"], swapped[f"bw_{part}"] = prm[f"bw_{part}"], prm[f"fw_{part}"]
        seq = rng.normal(size=(int(rng.integers(1, 12)), 3))
        a = bilstm_forward(AdaLstmModel(LstmConfig(), LABELS3, prm), seq)
        b = bilstm_forward(AdaLstmModel(LstmConfig(), LABELS3, swapped), seq[::-1])
        np.testing.assert_allclose(b, np.concatenate([a[10:], a[:10]]), atol=1e-13)


def test_probabilities_match_oracle_and_sum_to_one():
    rng = np.random.default_rng(4)
    for seed in range(5):
        prm = random_params(TINY, 4, seed, scale=1.5)
        m = AdaLstmModel(TINY, ("a", "b", "c", "d"), prm)
        seq = rng.normal(size=(int(rng.integers(1, 6)), 3))
        p = predict_logits(m, seq)
        np.testing.assert_allclose(p, oracles.lstm_probabilities(prm, seq.tolist()),
                                   atol=1e-12, rtol=0)
        assert np.all((p > 0) & (p < 1)) and abs(p.sum() - 1) <= 1e-12


def test_softmax_shift_invariance():
    prm = random_params(LstmConfig(), 3, 5)
    seq = np.random.default_rng(5).normal(size=(9, 3))
    p = predict_logits(AdaLstmModel(LstmConfig(), LABELS3, prm), seq)
    shifted = dict(prm, d3_b=prm["d3_b"] + 7.5)
    q = predict_logits(AdaLstmModel(LstmConfig(), LABELS3, shifted), seq)
    np.testing.assert_allclose(p, q, atol=1e-14)


def test_batched_predictions_match_single():
    rng = np.random.default_rng(6)
    m = AdaLstmModel.initialize(LABELS3, rng_seed=3)
    seqs = [rng.normal(size=(int(n), 3)) for n in rng.integers(1, 40, size=30)]
    batched = m.predict_proba(seqs)
    for s, row in zip(seqs, batched):
        np.testing.assert_allclose(row, predict_logits(m, s), atol=1e-14)


def test_empty_sequence():
    m = AdaLstmModel.zeros(LABELS3)
    with pytest.raises(EmptySequence):
        bilstm_forward(m, np.zeros((0, 3)))
    with pytest.raises(EmptySequence):
        predict_logits(m, np.zeros((0, 3)))


# ------------------------------------------------------------------ loss

def test_weighted_cross_entropy_examples():
    assert weighted_cross_entropy(np.eye(3), np.eye(3), [1, 2, 3]) == pytest.approx(0, abs=1e-12)
    assert weighted_cross_entropy([[1 / 3] * 3], [[1, 0, 0]], [1]) == pytest.approx(math.log(3))
    probs = [[0.7, 0.3], [0.7, 0.3]]
    onehot = [[1, 0], [1, 0]]
    c = -math.log(0.7)
    assert weighted_cross_entropy(probs, onehot, [1, 3]) == pytest.approx(c)
    assert weighted_cross_entropy(probs, onehot, [1, 3], normalize=False) == pytest.approx(4 * c)
    with pytest.raises(DimensionMismatch):
        weighted_cross_entropy([[0.5, 0.5]], [[1, 0, 0]], [1])


# ------------------------------------------------------------- gradients

def _max_rel(a: dict, b: dict) -> float:
    return max(float((np.abs(a[k] - b[k]) /
                      np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), 1e-8)).max()) for k in a)


def test_gradients_on_saturated_models():
    # large weights push gates into saturation, leaving gradient entries near
    # 1e-7, so the difference step is raised to keep round-off negligible
    rng = np.random.default_rng(7)
    for seed in range(5):
        prm = random_params(TINY, 3, 100 + seed)
        seqs = [rng.normal(size=(n, 3)) for n in (3, 2, 1)]
        batch = make_batch(seqs, rng.integers(0, 3, size=3))
        _, g = compute_gradients(prm, batch)
        num = oracles.central_difference(lambda p: compute_gradients(p, batch)[0], prm, h=1e-4)
        assert _max_rel(g, num) <= 1e-4


def test_padding_does_not_matter():
    rng = np.random.default_rng(8)
    prm = random_params(TINY, 3, 8)
    batch = make_batch([rng.normal(size=(5, 3)), rng.normal(size=(2, 3))], [0, 2])
    loss, g = compute_gradients(prm, batch)
    X = batch.X.copy()
    X[1, 2:] = rng.normal(size=(3, 3)) * 10
    noisy = adalstm.Batch(X, batch.mask, batch.lengths, batch.labels, batch.indices)
    loss2, g2 = compute_gradients(prm, noisy)
    assert loss == loss2
    assert all(np.array_equal(g[k], g2[k]) for k in g)


def test_duplicate_sequence_doubles_contribution():
    rng = np.random.default_rng(9)
    prm = random_params(TINY, 3, 9)
    s = rng.normal(size=(4, 3))
    _, one = compute_gradients(prm, make_batch([s], [1]), normalize=False)
    _, two = compute_gradients(prm, make_batch([s, s], [1, 1]), normalize=False)
    for k in one:
        np.testing.assert_allclose(two[k], 2 * one[k], rtol=1e-12, atol=1e-15)


# ------------------------------------------------------------------ Adam

def test_adam_examples():
    p = {"w": np.array([0.5, -0.2])}
    st = OptimizerState.zeros_like(p)
    same, st1 = adam_update(p, st, {"w": np.zeros(2)}, 0.01)
    assert np.array_equal(same["w"], p["w"]) and st1.step == 1
    moved, _ = adam_update({"w": np.array([0.0])}, OptimizerState.zeros_like({"w": np.zeros(1)}),
                           {"w": np.array([1.0])}, 0.01)
    assert moved["w"][0] == pytest.approx(-0.01, abs=1e-9)
    g = np.array([3.0, -0.001, 2e-4])
    new, _ = adam_update({"w": np.zeros(3)}, OptimizerState.zeros_like({"w": np.zeros(3)}),
                         {"w": g}, 0.01)
    assert np.array_equal(np.sign(new["w"]), -np.sign(g))
    with pytest.raises(ShapeMismatch):
        adam_update(p, st, {"w": np.zeros(3)}, 0.01)


def test_lr_schedule():
    assert lr_schedule(0) == 0.01
    assert lr_schedule(19) == 0.01
    assert lr_schedule(20) == 0.005
    assert lr_schedule(99) == 0.01 * 0.5 ** 4
    assert lr_schedule(99, adalstm.FIXED_LR_CONFIG) == 0.01


# -------------------------------------------------------------- batching

def test_minibatch_examples():
    seqs = [np.zeros((50, 3))] * 27
    batches = make_minibatches(seqs, [0] * 27)
    assert len(batches) == 1 and batches[0].padding == 0
    assert sorted(len(b.lengths) for b in make_minibatches([np.zeros((5, 3))] * 28, [0] * 28)) \
        == [1, 27]
    seqs = [np.zeros((100, 3))] * 27 + [np.zeros((500, 3))] * 27
    batches = make_minibatches(seqs, [0] * 54, rng_seed=3)
    assert all(len(set(b.lengths.tolist())) == 1 for b in batches)
    assert sum(b.padding for b in batches) == 0
    with pytest.raises(EmptyDataset):
        make_minibatches([], [])


def test_minibatch_covers_every_sequence_once():
    rng = np.random.default_rng(10)
    seqs = [np.zeros((int(n), 3)) for n in rng.integers(1, 50, size=70)]
    batches = make_minibatches(seqs, np.zeros(70), batch_size=27, rng_seed=1)
    idx = np.concatenate([b.indices for b in batches])
    assert sorted(idx.tolist()) == list(range(70))
    for b in batches:
        assert np.array_equal(b.mask.sum(axis=1), b.lengths)


# -------------------------------------------------------------- training

@pytest.fixture(scope="module")
def chest_three_class():
    ds = generate_dataset(SynthConfig(subjects=20, postures=CLASS_ACT_LABELS,
                                      locations=("chest",), seed=11))
    eps = [normalize_episode(e) for e in ds.episodes]
    return [e.samples for e in eps], [e.label.value for e in eps]


def test_training_reduces_loss_tenfold(chest_three_class):
    seqs, labels = chest_three_class
    assert len(seqs) == 60
    res = train(seqs, labels, LABELS3, rng_seed=0)
    assert len(res.loss_trace) == 100
    assert res.loss_trace[-1] < 0.1 * res.initial_loss
    assert res.loss_trace[-1] < res.loss_trace[0]
    acc = np.mean([p == t for p, t in zip(res.model.predict(seqs), labels)])
    assert acc >= 0.95


def test_training_is_deterministic(chest_three_class):
    seqs, labels = chest_three_class
    cfg = LstmConfig(max_epochs=3)
    a = train(seqs[:20], labels[:20], LABELS3, cfg, rng_seed=5)
    b = train(seqs[:20], labels[:20], LABELS3, cfg, rng_seed=5)
    assert a.loss_trace == b.loss_trace
    assert a.model.to_json() == b.model.to_json()


def test_single_class_training():
    rng = np.random.default_rng(12)
    seqs = [rng.normal(size=(10, 3)) for _ in range(8)]
    with pytest.warns(UserWarning):
        res = train(seqs, ["prone"] * 8, LABELS3, LstmConfig(max_epochs=30), rng_seed=1)
    p = res.model.predict_proba(seqs)
    assert np.all(p[:, 1] > 0.95)


def test_non_finite_training_aborts():
    bad = AdaLstmModel(TINY, LABELS3, {k: np.full(v.shape, 1e308) for k, v in
                                       random_params(TINY, 3, 0).items()})
    seqs = [np.ones((3, 3)) * 1e308] * 3
    with pytest.raises(NumericalAbort), np.errstate(all="ignore"):
        train(seqs, [0, 1, 2], LABELS3, TINY, model=bad)


def test_model_round_trip_and_loss_csv(tmp_path, chest_three_class):
    seqs, labels = chest_three_class
    res = train(seqs[:10], labels[:10], LABELS3, LstmConfig(max_epochs=2), rng_seed=2)
    res.model.save(tmp_path / "m.json")
    loaded = AdaLstmModel.load(tmp_path / "m.json")
    assert all(np.array_equal(loaded.params[k], res.model.params[k]) for k in loaded.params)
    np.testing.assert_array_equal(loaded.predict_proba(seqs), res.model.predict_proba(seqs))
    res.write_loss_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,mean_loss" and len(lines) == 3


def test_evaluate_loss_is_order_free(chest_three_class):
    seqs, labels = chest_three_class
    y = [LABELS3.index(l) for l in labels]
    m = AdaLstmModel.initialize(LABELS3, rng_seed=4)
    perm = np.random.default_rng(0).permutation(len(seqs))
    a = adalstm.evaluate_loss(m, seqs, y)
    b = adalstm.evaluate_loss(m, [seqs[i] for i in perm], [y[i] for i in perm])
    assert a == pytest.approx(b, rel=1e-12)
