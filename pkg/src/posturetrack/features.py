"""Time-domain window features and per-episode meta-features.

Layout of the 48-slot vector (1-based, axes in x, y, z order)::

    AMP 1-3    MED 4-6    MEAN 7-9   MAX 10-12  MIN 13-15  VAR 16-18
    STD 19-21  RMS 22-24  P2P 25-27  ZCR 28-30  ENT 31-33  SKN 34-36
    KRT 37-39  MAG 40     ENG 41     RNG 42-44  ANG 45     MAD 46-48

Readings of the less obvious entries:

* ZCR is the fraction of consecutive sample pairs whose sign differs
  (zero counts as positive).
* ENT is the Shannon entropy (natural log) of a 16-bin histogram spanning the
  window's range; a constant axis has entropy 0.
* ANG is ``max_t atan2(z_t, hypot(x_t, y_t))`` in radians.
* ENG is ``sum_t |s_t|^2`` over the magnitude signal.
* VAR/STD use the N-1 denominator; SKN and KRT divide population central
  moments by that STD and are 0 for a constant axis. KRT is not excess.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AxisForbidden, AxisRequired, NonFinite, UnknownFeature, WindowTooShort
from .signal import AXES, Episode, Window, sliding_windows

N_FEATURES = 48
ENTROPY_BINS = 16

PER_AXIS = ("AMP", "MED", "MEAN", "MAX", "MIN", "VAR", "STD", "RMS", "P2P", "ZCR",
            "ENT", "SKN", "KRT")


def _build_layout() -> list[tuple[str, str | None]]:
    layout = [(name, axis) for name in PER_AXIS for axis in AXES]
    layout += [("MAG", None), ("ENG", None)]
    layout += [("RNG", axis) for axis in AXES]
    layout += [("ANG", None)]
    layout += [("MAD", axis) for axis in AXES]
    return layout


FEATURE_LAYOUT: tuple[tuple[str, str | None], ...] = tuple(_build_layout())
FEATURE_NAMES: tuple[str, ...] = tuple(
    name if axis is None else f"{name}_{axis}" for name, axis in FEATURE_LAYOUT)
_SCALAR = {"MAG", "ENG", "ANG"}


def feature_index(name: str, axis: str | int | None = None) -> int:
    """1-based slot of a feature mnemonic, e.g. ``feature_index("MED", "x") == 4``."""
    key = name.upper()
    known = {n for n, _ in FEATURE_LAYOUT}
    if key not in known:
        raise UnknownFeature(name)
    if key in _SCALAR:
        if axis is not None:
            raise AxisForbidden(f"{key} is a scalar feature")
        return FEATURE_LAYOUT.index((key, None)) + 1
    if axis is None:
        raise AxisRequired(f"{key} needs an axis")
    if isinstance(axis, (int, np.integer)):
        axis = AXES[axis]
    axis = str(axis).lower()
    if axis not in AXES:
        raise UnknownFeature(f"unknown axis {axis!r}")
    return FEATURE_LAYOUT.index((key, axis)) + 1


def feature_name(index: int) -> str:
    return FEATURE_NAMES[index - 1]


def _entropy(w: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    # w: (n_windows, n, 3); lo/span: (n_windows, 3)
    n = w.shape[1]
    safe = np.where(span > 0, span, 1.0)
    bins = np.floor((w - lo[:, None, :]) / safe[:, None, :] * ENTROPY_BINS).astype(np.int64)
    np.clip(bins, 0, ENTROPY_BINS - 1, out=bins)
    onehot = bins[..., None] == np.arange(ENTROPY_BINS)
    counts = onehot.sum(axis=1)  # (n_windows, 3, bins)
    p = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -p * np.log(np.where(counts > 0, p, 1.0)), 0.0)
    ent = terms.sum(axis=-1)
    return np.where(span > 0, ent, 0.0)


def features_from_array(windows: np.ndarray) -> np.ndarray:
    """Feature matrix for a stack of equal-length windows.

    ``windows`` has shape ``(n_windows, n, 3)`` or ``(n, 3)``; the result is
    ``(n_windows, 48)`` or ``(48,)`` respectively.
    """
    w = np.asarray(windows, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.ndim != 3 or w.shape[2] != 3:
        raise ValueError(f"expected (n_windows, n, 3), got {w.shape}")
    n = w.shape[1]
    if n < 2:
        raise WindowTooShort(f"window of {n} samples; need at least 2")
    if not np.all(np.isfinite(w)):
        raise NonFinite("window contains NaN or Inf")

    mx = w.max(axis=1)
    mn = w.min(axis=1)
    rng = mx - mn
    const = rng == 0
    mean = np.where(const, w[:, 0, :], w.mean(axis=1))
    med = np.median(w, axis=1)
    dev = w - mean[:, None, :]
    var = (dev ** 2).sum(axis=1) / (n - 1)
    std = np.sqrt(var)
    rms = np.sqrt((w ** 2).mean(axis=1))
    nonneg = w >= 0
    zcr = (nonneg[:, 1:, :] != nonneg[:, :-1, :]).sum(axis=1) / (n - 1)
    ent = _entropy(w, mn, rng)
    # standardize before powering so tiny spreads do not underflow std**3
    flat = const | (std == 0)
    z = dev / np.where(flat, 1.0, std)[:, None, :]
    skn = np.where(flat, 0.0, (z ** 3).mean(axis=1))
    krt = np.where(flat, 0.0, (z ** 4).mean(axis=1))
    sq_mag = (w ** 2).sum(axis=2)
    mag = np.sqrt(sq_mag).mean(axis=1)
    eng = sq_mag.sum(axis=1)
    ang = np.arctan2(w[:, :, 2], np.hypot(w[:, :, 0], w[:, :, 1])).max(axis=1)
    mad = np.abs(dev).mean(axis=1)

    out = np.concatenate([
        mx - mean, med, mean, mx, mn, var, std, rms, rng, zcr, ent, skn, krt,
        mag[:, None], eng[:, None], rng, ang[:, None], mad,
    ], axis=1)
    return out[0] if single else out


def window_features(w: Window | np.ndarray) -> np.ndarray:
    samples = w.samples if isinstance(w, Window) else w
    return features_from_array(np.asarray(samples))


@dataclass(frozen=True, eq=False)
class MetaFeatures:
    values: np.ndarray
    episode: Episode = field(repr=False)
    window_count: int


def episode_meta_features(ep: Episode, window_len: int, overlap: float = 0.5,
                          allow_short: bool = False) -> MetaFeatures:
    """Average the window feature vectors over every window of ``ep``."""
    wins = sliding_windows(ep, window_len, overlap, allow_short=allow_short)
    stack = np.stack([wn.samples for wn in wins])
    feats = features_from_array(stack)
    values = feats.mean(axis=0)
    values.setflags(write=False)
    return MetaFeatures(values, ep, int(stack.shape[0]))


def feature_matrix(episodes: Sequence[Episode], window_len: int, overlap: float = 0.5,
                   allow_short: bool = False) -> np.ndarray:
    if not episodes:
        return np.empty((0, N_FEATURES))
    return np.stack([episode_meta_features(ep, window_len, overlap, allow_short).values
                     for ep in episodes])


def write_feature_csv(path: str | Path, metas: Sequence[MetaFeatures]) -> None:
    """One row per episode: ``f1..f48,label,subject_id,location``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(1, N_FEATURES + 1)]
                        + ["label", "subject_id", "location"])
        for m in metas:
            writer.writerow([repr(float(v)) for v in m.values]
                            + [m.episode.label.value, m.episode.subject_id,
                               m.episode.location.value])


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str], list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    X = np.array([[float(r[f"f{i}"]) for i in range(1, N_FEATURES + 1)] for r in rows])
    return (X.reshape(len(rows), N_FEATURES), [r["label"] for r in rows],
            [r["subject_id"] for r in rows], [r["location"] for r in rows])
