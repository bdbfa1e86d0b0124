"""Bidirectional LSTM sequence classifier trained with Adam.

Architecture: one bi-LSTM layer (``hidden_size`` units per direction) read out
as ``[forward state at the last real step ; backward state at step 0]``,
followed by three dense layers (``2H -> 16 -> 8 -> K``, tanh on the two hidden
ones) and a softmax.

The loss is the length-weighted cross-entropy ``-sum_i m_i log p_i[y_i]``
divided by ``sum_i m_i`` over the batch (``normalize=False`` gives the raw
sum). Gradients are exact backpropagation through time in float64; padded
time steps carry the recurrent state through unchanged and receive zero
gradient.

Choices not pinned down by the method description and made here: the
terminal-state readout, the dense widths, Glorot-uniform initialisation
(fan-out counted per gate in the recurrent blocks) with forget-gate bias 1,
beta1 = 0.9, a learning rate halved every 20 epochs, and global-norm gradient
clipping at 5. The fixed-learning-rate LSTM baseline
is the same model with ``lr_schedule="fixed"``.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptySequence,
    NonFinite,
    NumericalAbort,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG_EPS = 1e-12
INPUT_DIM = 3


@dataclass(frozen=True)
class LstmConfig:
    hidden_size: int = 10
    dense_widths: tuple[int, int] = (16, 8)
    max_epochs: int = 100
    initial_lr: float = 0.01
    beta1: float = 0.9
    sq_grad_decay: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 27
    lr_schedule: str = "step"        # "step" (AdaLSTM) or "fixed" (LSTM baseline)
    lr_drop_factor: float = 0.5
    lr_drop_every: int = 20
    clip_norm: float | None = 5.0
    forget_bias: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))
        if self.lr_schedule not in ("step", "fixed"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


FIXED_LR_CONFIG = LstmConfig(lr_schedule="fixed")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def param_shapes(cfg: LstmConfig, n_classes: int) -> dict[str, tuple[int, ...]]:
    H = cfg.hidden_size
    w1, w2 = cfg.dense_widths
    shapes = {}
    for d in ("fw", "bw"):
        shapes[f"{d}_W"] = (INPUT_DIM, 4 * H)
        shapes[f"{d}_U"] = (H, 4 * H)
        shapes[f"{d}_b"] = (4 * H,)
    shapes.update({
        "d1_W": (2 * H, w1), "d1_b": (w1,),
        "d2_W": (w1, w2), "d2_b": (w2,),
        "d3_W": (w2, n_classes), "d3_b": (n_classes,),
    })
    return shapes


def init_params(cfg: LstmConfig, n_classes: int, rng_seed=0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(rng_seed)
    H = cfg.hidden_size
    params = {}
    for name, shape in param_shapes(cfg, n_classes).items():
        if name.endswith("_b"):
            p = np.zeros(shape)
            if name in ("fw_b", "bw_b"):
                p[H:2 * H] = cfg.forget_bias
        else:
            fan_in, fan_out = shape
            if name.startswith(("fw_", "bw_")):
                fan_out //= 4
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p = rng.uniform(-limit, limit, size=shape)
        params[name] = p
    return params


@dataclass
class AdaLstmModel:
    config: LstmConfig
    label_set: tuple[str, ...]
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, label_set: Sequence[str], config: LstmConfig = LstmConfig(),
                   rng_seed=0) -> AdaLstmModel:
        labels = tuple(label_set)
        return cls(config, labels, init_params(config, len(labels), rng_seed))

    @classmethod
    def zeros(cls, label_set: Sequence[str], config: LstmConfig = LstmConfig()) -> AdaLstmModel:
        labels = tuple(label_set)
        return cls(config, labels, {k: np.zeros(s) for k, s in
                                    param_shapes(config, len(labels)).items()})

    def direction(self, name: str) -> LstmDirectionParams:
        return LstmDirectionParams(self.params[f"{name}_W"], self.params[f"{name}_U"],
                                   self.params[f"{name}_b"])

    def predict_proba(self, sequences: Sequence[np.ndarray]) -> np.ndarray:
        """Class probabilities for each sequence, shape ``(n, K)``."""
        seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
        out = np.empty((len(seqs), len(self.label_set)))
        if not seqs:
            return out
        for batch in make_minibatches(seqs, np.zeros(len(seqs), dtype=np.int64),
                                      self.config.batch_size, rng_seed=None):
            out[batch.indices] = forward(self.params, batch.X, batch.mask)["p"]
        return out

    def predict_index(self, sequences: Sequence[np.ndarray]) -> np.ndarray:
        return np.argmax(self.predict_proba(sequences), axis=1)

    def predict(self, sequences: Sequence[np.ndarray]) -> list[str]:
        return [self.label_set[i] for i in self.predict_index(sequences)]

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["dense_widths"] = list(cfg["dense_widths"])
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "adalstm",
            "config": cfg,
            "label_set": list(self.label_set),
            "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                       for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> AdaLstmModel:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in d["params"].items()}
        return cls(LstmConfig(**d["config"]), tuple(d["label_set"]), params)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> AdaLstmModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LstmDirectionParams:
    """Gate weights of one direction; gate blocks are ordered (i, f, g, o)."""

    W: np.ndarray   # (3, 4H) input weights
    U: np.ndarray   # (H, 4H) recurrent weights
    b: np.ndarray   # (4H,)


def lstm_cell_forward(params: LstmDirectionParams, x_t, h_prev, c_prev):
    """One LSTM step; works on single vectors or on ``(batch, dim)`` rows."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev))
            and np.all(np.isfinite(c_prev))):
        raise NonFinite("non-finite LSTM input")
    H = params.U.shape[0]
    z = x_t @ params.W + h_prev @ params.U + params.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------

def _direction_columns(H: int) -> tuple[np.ndarray, np.ndarray]:
    """Columns of each direction's gates in the interleaved ``(8H,)`` layout.

    The combined layout is ``[i_fw i_bw f_fw f_bw g_fw g_bw o_fw o_bw]`` so
    both directions share one state vector ``[h_fw ; h_bw]`` and every gate
    slice covers both directions.
    """
    q = np.repeat(np.arange(4), H) * 2 * H
    j = np.tile(np.arange(H), 4)
    return q + j, q + H + j


def _combined(params, H):
    """Zero-padded input/recurrent matrices and bias in the interleaved layout."""
    cols = _direction_columns(H)
    W = np.zeros((2, INPUT_DIM, 8 * H))
    U = np.zeros((2 * H, 8 * H))
    b = np.zeros(8 * H)
    for d, name in enumerate(("fw", "bw")):
        W[d][:, cols[d]] = params[f"{name}_W"]
        U[d * H:(d + 1) * H, cols[d]] = params[f"{name}_U"]
        b[cols[d]] = params[f"{name}_b"]
    return cols, W, U, b


def _gate_affine(H):
    # sigmoid(z) = (1 + tanh(z / 2)) / 2, so a single tanh evaluates all gates
    scale = np.full(8 * H, 0.5)
    scale[4 * H:6 * H] = 1.0
    offset = np.where(scale == 0.5, 0.5, 0.0)
    return scale, offset


def _run_bidirectional(params, X, mask):
    """Both directions in one time loop with a block-diagonal recurrence.

    The backward direction reads the time-reversed batch, so its padding comes
    first and leaves the zero initial state untouched until real samples
    arrive. Returns the terminal state ``[h_fw ; h_bw]`` of shape ``(B, 2H)``
    and a cache for BPTT. Internal arrays are time-major.
    """
    B, T, _ = X.shape
    H = params["fw_U"].shape[0]
    H2 = 2 * H
    cols, W, U, b = _combined(params, H)
    scale, offset = _gate_affine(H)
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))        # (T, B, 3)
    Xr = Xt[::-1]
    XW = (Xt.reshape(-1, INPUT_DIM) @ (W[0] * scale)).reshape(T, B, 8 * H)
    XW += (Xr.reshape(-1, INPUT_DIM) @ (W[1] * scale)).reshape(T, B, 8 * H)
    XW += b * scale
    U *= scale
    mt = np.ascontiguousarray(mask.T)                        # (T, B)
    M = np.empty((T, B, H2), dtype=bool)
    M[..., :H] = mt[..., None]
    M[..., H:] = mt[::-1, :, None]
    full = M.all(axis=(1, 2))

    Hs = np.zeros((T + 1, B, H2))
    Cs = np.zeros((T + 1, B, H2))
    A = np.empty((T, B, 8 * H))
    TC = np.empty((T, B, H2))
    for t in range(T):
        act = A[t]
        np.matmul(Hs[t], U, out=act)
        act += XW[t]
        np.tanh(act, out=act)
        act *= scale
        act += offset
        c = Cs[t + 1]
        np.multiply(act[:, H2:2 * H2], Cs[t], out=c)
        c += act[:, :H2] * act[:, 2 * H2:3 * H2]
        np.tanh(c, out=TC[t])
        np.multiply(act[:, 3 * H2:], TC[t], out=Hs[t + 1])
        if not full[t]:
            m = M[t]
            np.copyto(Hs[t + 1], Hs[t], where=~m)
            np.copyto(c, Cs[t], where=~m)
    return Hs[T].copy(), (Xt, Xr, M, full, cols, Hs, Cs, A, TC)


def _backprop_bidirectional(params, state, dh):
    """Gradients ``[(dW, dU, db)_fw, (dW, dU, db)_bw]`` given ``dL/dr`` of shape ``(B, 2H)``."""
    Xt, Xr, M, full, cols, Hs, Cs, A, TC = state
    H = params["fw_U"].shape[0]
    H2 = 2 * H
    _, _, U, _ = _combined(params, H)
    UT = U.T.copy()
    T, B, _ = Xt.shape
    # d act / d preactivation, with sigmoid gates in a(1-a) form
    deriv = A * (1.0 - A)
    deriv[..., 2 * H2:3 * H2] = 1.0 - A[..., 2 * H2:3 * H2] ** 2
    dZ = np.empty((T, B, 8 * H))
    dh = np.array(dh, dtype=np.float64)
    dc = np.zeros_like(dh)
    for t in range(T - 1, -1, -1):
        act = A[t]
        tc = TC[t]
        if not full[t]:
            keep = ~M[t]
            dh_carry = dh * keep
            dc_carry = dc * keep
            dh *= M[t]
            dc *= M[t]
        dc += dh * act[:, 3 * H2:] * (1.0 - tc * tc)
        dz = dZ[t]
        np.multiply(dc, act[:, 2 * H2:3 * H2], out=dz[:, :H2])
        np.multiply(dc, Cs[t], out=dz[:, H2:2 * H2])
        np.multiply(dc, act[:, :H2], out=dz[:, 2 * H2:3 * H2])
        np.multiply(dh, tc, out=dz[:, 3 * H2:])
        dz *= deriv[t]
        dc *= act[:, H2:2 * H2]
        dh = dz @ UT
        if not full[t]:
            dh += dh_carry
            dc += dc_carry
    flat_dZ = dZ.reshape(-1, 8 * H)
    dU = Hs[:T].reshape(-1, H2).T @ flat_dZ
    db = flat_dZ.sum(axis=0)
    grads = []
    for d, Xd in enumerate((Xt, Xr)):
        dW = Xd.reshape(-1, INPUT_DIM).T @ flat_dZ
        grads.append((dW[:, cols[d]], dU[d * H:(d + 1) * H, cols[d]], db[cols[d]]))
    return grads


def forward(params: dict, X: np.ndarray, mask: np.ndarray) -> dict:
    """Full forward pass on a padded batch; returns intermediate activations."""
    mask = np.asarray(mask, dtype=bool)
    r, state = _run_bidirectional(params, np.asarray(X, dtype=np.float64), mask)
    a1 = np.tanh(r @ params["d1_W"] + params["d1_b"])
    a2 = np.tanh(a1 @ params["d2_W"] + params["d2_b"])
    z = a2 @ params["d3_W"] + params["d3_b"]
    return {"r": r, "a1": a1, "a2": a2, "z": z, "p": softmax(z),
            "state": state}


def bilstm_forward(model: AdaLstmModel, samples: np.ndarray) -> np.ndarray:
    """20-vector ``[h_forward(T) ; h_backward(1)]`` for one sequence."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySequence("sequence must have at least one sample")
    h, _ = _run_bidirectional(model.params, X[None], np.ones((1, X.shape[0]), dtype=bool))
    return h[0]


def predict_logits(model: AdaLstmModel, samples: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for one sequence."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySequence("sequence must have at least one sample")
    return forward(model.params, X[None], np.ones((1, X.shape[0]), dtype=bool))["p"][0]


def predict(model: AdaLstmModel, samples: np.ndarray) -> str:
    return model.label_set[int(np.argmax(predict_logits(model, samples)))]


def loss_weights(lengths: np.ndarray, normalize: bool = True) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.float64)
    return lengths / lengths.sum() if normalize else lengths


def weighted_cross_entropy(probs, onehot, lengths, normalize: bool = True) -> float:
    """``-sum_i m_i sum_j y_ij log p_ij``, divided by ``sum_i m_i`` when normalising."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    onehot = np.atleast_2d(np.asarray(onehot, dtype=np.float64))
    lengths = np.atleast_1d(np.asarray(lengths, dtype=np.float64))
    if probs.shape != onehot.shape or probs.shape[0] != lengths.shape[0]:
        raise DimensionMismatch(f"probs {probs.shape}, labels {onehot.shape}, "
                                f"lengths {lengths.shape}")
    per_seq = -(onehot * np.log(np.maximum(probs, LOG_EPS))).sum(axis=1)
    return float(np.dot(loss_weights(lengths, normalize), per_seq))


@dataclass(frozen=True, eq=False)
class Batch:
    X: np.ndarray          # (B, T, 3) zero-padded
    mask: np.ndarray       # (B, T) True on real samples
    lengths: np.ndarray    # (B,)
    labels: np.ndarray     # (B,) class indices
    indices: np.ndarray    # (B,) positions in the source list

    @property
    def onehot_size(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def padding(self) -> int:
        return int((~self.mask).sum())


def make_batch(sequences: Sequence[np.ndarray], labels, indices=None) -> Batch:
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if np.any(lengths == 0):
        raise EmptySequence("empty sequence in batch")
    T = int(lengths.max())
    X = np.zeros((len(sequences), T, INPUT_DIM))
    for k, s in enumerate(sequences):
        X[k, :len(s)] = s
    mask = np.arange(T)[None, :] < lengths[:, None]
    idx = np.arange(len(sequences)) if indices is None else np.asarray(indices)
    return Batch(X, mask, lengths, np.asarray(labels, dtype=np.int64), idx)


def make_minibatches(sequences: Sequence[np.ndarray], labels, batch_size: int = 27,
                     rng_seed=0) -> list[Batch]:
    """Length-sorted packing into batches of at most ``batch_size``.

    Sequences are stably sorted by length and cut into consecutive groups, so
    similar lengths share a batch. The batch order is shuffled with
    ``rng_seed`` (an int, a ``Generator``, or ``None`` for no shuffle).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(sequences) == 0:
        raise EmptyDataset("no sequences to batch")
    labels = np.asarray(labels, dtype=np.int64)
    lengths = np.array([len(s) for s in sequences])
    order = np.argsort(lengths, kind="stable")
    groups = [order[k:k + batch_size] for k in range(0, len(order), batch_size)]
    if rng_seed is not None:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
            else np.random.default_rng(rng_seed)
        groups = [groups[j] for j in rng.permutation(len(groups))]
    return [make_batch([sequences[i] for i in g], labels[g], g) for g in groups]


def compute_gradients(params: dict, batch: Batch, normalize: bool = True,
                      n_classes: int | None = None) -> tuple[float, dict]:
    """Loss and exact gradients for one batch."""
    if n_classes is None:
        n_classes = params["d3_b"].shape[0]
    fw = forward(params, batch.X, batch.mask)
    p = fw["p"]
    B = p.shape[0]
    onehot = np.zeros_like(p)
    onehot[np.arange(B), batch.labels] = 1.0
    w = loss_weights(batch.lengths, normalize)
    p_true = p[np.arange(B), batch.labels]
    loss = float(-np.dot(w, np.log(np.maximum(p_true, LOG_EPS))))
    # the clamped log has zero slope below LOG_EPS
    active = (p_true >= LOG_EPS).astype(np.float64)
    dz = (w * active)[:, None] * (p - onehot)

    grads = {}
    grads["d3_W"] = fw["a2"].T @ dz
    grads["d3_b"] = dz.sum(axis=0)
    da2 = dz @ params["d3_W"].T * (1.0 - fw["a2"] ** 2)
    grads["d2_W"] = fw["a1"].T @ da2
    grads["d2_b"] = da2.sum(axis=0)
    da1 = da2 @ params["d2_W"].T * (1.0 - fw["a1"] ** 2)
    grads["d1_W"] = fw["r"].T @ da1
    grads["d1_b"] = da1.sum(axis=0)
    dr = da1 @ params["d1_W"].T
    directions = _backprop_bidirectional(params, fw["state"], dr)
    for name, (dW, dU, db) in zip(("fw", "bw"), directions):
        grads[f"{name}_W"], grads[f"{name}_U"], grads[f"{name}_b"] = dW, dU, db
    return loss, grads


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.0

    @classmethod
    def zeros_like(cls, params: dict, lr: float = 0.0) -> OptimizerState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, lr)


def adam_update(params: dict, state: OptimizerState, grads: dict, lr: float,
                beta1: float = 0.9, beta2: float = 0.99,
                eps: float = 1e-8) -> tuple[dict, OptimizerState]:
    """One bias-corrected Adam step; returns new parameters and state."""
    if set(grads) != set(state.m):
        raise ShapeMismatch("gradient and optimizer state keys differ")
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for k, g in grads.items():
        if g.shape != state.m[k].shape or g.shape != params[k].shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs state {state.m[k].shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_params[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_params, OptimizerState(new_m, new_v, step, lr)


def lr_schedule(epoch: int, config: LstmConfig = LstmConfig()) -> float:
    if config.lr_schedule == "fixed":
        return config.initial_lr
    return config.initial_lr * config.lr_drop_factor ** (epoch // config.lr_drop_every)


def clip_global_norm(grads: dict, max_norm: float | None) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class TrainResult:
    model: AdaLstmModel
    loss_trace: list[float]
    lr_trace: list[float]
    initial_loss: float

    def write_loss_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "mean_loss"])
            for e, (lr, loss) in enumerate(zip(self.lr_trace, self.loss_trace), start=1):
                w.writerow([e, repr(lr), repr(loss)])


def evaluate_loss(model: AdaLstmModel, sequences, labels, normalize: bool = True) -> float:
    """Length-weighted loss over a whole set (independent of batch order)."""
    probs = model.predict_proba(sequences)
    onehot = np.eye(len(model.label_set))[np.asarray(labels, dtype=np.int64)]
    return weighted_cross_entropy(probs, onehot, [len(s) for s in sequences], normalize)


def train(sequences: Sequence[np.ndarray], labels: Sequence, label_set: Sequence[str],
          config: LstmConfig = LstmConfig(), rng_seed: int = 0,
          model: AdaLstmModel | None = None) -> TrainResult:
    """Minibatch BPTT with Adam for ``config.max_epochs`` epochs.

    ``labels`` may be label strings from ``label_set`` or class indices.
    """
    label_set = tuple(label_set)
    lookup = {lab: i for i, lab in enumerate(label_set)}
    y = np.array([lookup[l] if l in lookup else int(l) for l in labels], dtype=np.int64)
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs:
        raise EmptyDataset("no training sequences")
    missing = [label_set[k] for k in range(len(label_set)) if not np.any(y == k)]
    if missing:
        warnings.warn(f"no training sequences for classes {missing}", stacklevel=2)
    init_seq, shuffle_seq = np.random.SeedSequence(rng_seed).spawn(2)
    if model is None:
        model = AdaLstmModel.initialize(label_set, config, np.random.default_rng(init_seq))
    params = {k: v.copy() for k, v in model.params.items()}
    state = OptimizerState.zeros_like(params)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    total_len = float(sum(len(s) for s in seqs))
    initial_loss = evaluate_loss(replace(model, params=params), seqs, y)

    loss_trace, lr_trace = [], []
    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config)
        epoch_loss = 0.0
        for batch in make_minibatches(seqs, y, config.batch_size, shuffle_rng):
            loss, grads = compute_gradients(params, batch, n_classes=len(label_set))
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
                raise NumericalAbort(f"non-finite gradient at epoch {epoch + 1}, "
                                     f"step {state.step + 1}: {bad or 'loss'}")
            grads, _ = clip_global_norm(grads, config.clip_norm)
            params, state = adam_update(params, state, grads, lr, config.beta1,
                                        config.sq_grad_decay, config.adam_eps)
            epoch_loss += loss * float(batch.lengths.sum()) / total_len
        loss_trace.append(epoch_loss)
        lr_trace.append(lr)
        logger.debug("epoch %d lr %.5f loss %.6f", epoch + 1, lr, epoch_loss)
    return TrainResult(replace(model, params=params), loss_trace, lr_trace, initial_loss)
