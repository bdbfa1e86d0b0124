"""Raw-signal types and data preparation.

Samples are tri-axial accelerations in gravity units with the axis convention
x = lateral, y = vertical, z = frontal. Everything here is a pure function over
immutable inputs; randomized steps take an explicit seed.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AxisConventionMismatch,
    EmptyDataset,
    EmptyStream,
    EpisodeTooShort,
    NonFinite,
    ZeroSignal,
)

logger = logging.getLogger(__name__)

AXIS_CONVENTION = "x=lateral,y=vertical,z=frontal"
AXES = ("x", "y", "z")


class PostureLabel(str, enum.Enum):
    SUPINE = "supine"
    PRONE = "prone"
    LEFT_SIDE = "left_side"
    RIGHT_SIDE = "right_side"

    @classmethod
    def parse(cls, value: str | PostureLabel) -> PostureLabel:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace(" ", "_").replace("-", "_")
        aliases = {"left": "left_side", "right": "right_side", "leftside": "left_side",
                   "rightside": "right_side"}
        return cls(aliases.get(key, key))


class SensorLocation(str, enum.Enum):
    CHEST = "chest"
    LEFT_THIGH = "left_thigh"
    RIGHT_THIGH = "right_thigh"
    LEFT_ANKLE = "left_ankle"
    RIGHT_ANKLE = "right_ankle"
    LEFT_ARM = "left_arm"
    RIGHT_ARM = "right_arm"
    LEFT_WRIST = "left_wrist"
    RIGHT_WRIST = "right_wrist"

    @classmethod
    def parse(cls, value: str | SensorLocation) -> SensorLocation:
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace(" ", "_").replace("-", "_"))


CLASS_ACT_LABELS = (PostureLabel.SUPINE, PostureLabel.PRONE, PostureLabel.LEFT_SIDE)
ALL_LABELS = tuple(PostureLabel)


def _frozen_array(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Episode:
    """One labelled run of a posture by one subject at one sensor site.

    ``samples`` is an ``(n, 3)`` float array (read-only).
    """

    samples: np.ndarray
    sample_rate_hz: float
    subject_id: str
    location: SensorLocation
    label: PostureLabel
    provenance: str = ""
    episode_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise ValueError(f"samples must have shape (n, 3), got {samples.shape}")
        if samples.shape[0] == 0:
            raise EmptyStream("episode has no samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", _frozen_array(samples))
        object.__setattr__(self, "location", SensorLocation.parse(self.location))
        object.__setattr__(self, "label", PostureLabel.parse(self.label))
        object.__setattr__(self, "subject_id", str(self.subject_id))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray, **changes) -> Episode:
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    episodes: tuple[Episode, ...]
    label_set: tuple[PostureLabel, ...]
    provenance: str = ""
    axis_convention: str = AXIS_CONVENTION

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        labels = tuple(PostureLabel.parse(l) for l in self.label_set)
        object.__setattr__(self, "label_set", labels)
        for ep in self.episodes:
            if ep.label not in labels:
                raise ValueError(f"episode label {ep.label.value!r} not in label set")

    def __len__(self) -> int:
        return len(self.episodes)

    def label_counts(self) -> dict[PostureLabel, int]:
        counts = Counter(ep.label for ep in self.episodes)
        return {lab: counts.get(lab, 0) for lab in self.label_set}

    def subjects(self) -> list[str]:
        return sorted({ep.subject_id for ep in self.episodes})

    def at_location(self, location) -> Dataset:
        loc = SensorLocation.parse(location)
        return replace(self, episodes=tuple(ep for ep in self.episodes if ep.location == loc))

    def with_labels(self, labels: Iterable) -> Dataset:
        keep = tuple(PostureLabel.parse(l) for l in labels)
        eps = tuple(ep for ep in self.episodes if ep.label in keep)
        return replace(self, episodes=eps, label_set=keep)


@dataclass(frozen=True, eq=False)
class Window:
    samples: np.ndarray
    episode: Episode = field(repr=False)
    start: int

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class LabeledStream:
    """A continuous recording with one label string per sample."""

    samples: np.ndarray
    labels: Sequence[str]
    sample_rate_hz: float
    subject_id: str
    location: SensorLocation
    provenance: str = ""


def _check_finite(samples: np.ndarray) -> None:
    if not np.all(np.isfinite(samples)):
        raise NonFinite("samples contain NaN or Inf")


def normalize_episode(ep: Episode) -> Episode:
    """Scale an episode so that its median sample magnitude is one gravity unit."""
    _check_finite(ep.samples)
    scale = median_magnitude(ep.samples)
    if scale == 0.0:
        raise ZeroSignal(f"episode {ep.episode_id!r} has zero median magnitude")
    if scale == 1.0:
        return ep
    return ep.with_samples(ep.samples / scale)


def median_magnitude(samples: np.ndarray) -> float:
    return float(np.median(np.linalg.norm(samples, axis=1)))


def run_length_encode(labels: Sequence) -> list[tuple[int, int, object]]:
    """Return maximal runs ``(start, stop, label)`` with ``stop`` exclusive."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((start, i, labels[start]))
            start = i
    return runs


def _as_lying(label, lying: set[PostureLabel]) -> PostureLabel | None:
    try:
        parsed = PostureLabel.parse(label)
    except ValueError:
        return None
    return parsed if parsed in lying else None


def segment_into_episodes(stream: LabeledStream,
                          label_set: Iterable = ALL_LABELS) -> list[Episode]:
    """Split a labelled stream into episodes at label changes.

    Runs whose label is not a lying posture in ``label_set`` are dropped.
    Episode ids are ``subject:location:k`` with ``k`` counting kept episodes.
    """
    samples = np.asarray(stream.samples, dtype=np.float64)
    labels = list(stream.labels)
    if len(labels) == 0 or samples.shape[0] == 0:
        raise EmptyStream("stream has no samples")
    if len(labels) != samples.shape[0]:
        raise ValueError("one label per sample required")
    lying = {PostureLabel.parse(l) for l in label_set}
    location = SensorLocation.parse(stream.location)
    episodes = []
    for start, stop, label in run_length_encode(labels):
        posture = _as_lying(label, lying)
        if posture is None:
            continue
        episodes.append(Episode(
            samples=samples[start:stop],
            sample_rate_hz=stream.sample_rate_hz,
            subject_id=stream.subject_id,
            location=location,
            label=posture,
            provenance=stream.provenance,
            episode_id=f"{stream.subject_id}:{location.value}:{len(episodes)}",
        ))
    return episodes


def window_stride(window_len: int, overlap: float) -> int:
    # round half up, never below one sample
    return max(1, int(np.floor(window_len * (1.0 - overlap) + 0.5)))


def window_starts(n: int, window_len: int, overlap: float) -> np.ndarray:
    stride = window_stride(window_len, overlap)
    count = (n - window_len) // stride + 1
    return np.arange(count) * stride


def sliding_windows(ep: Episode, window_len: int, overlap: float = 0.5,
                    allow_short: bool = False) -> list[Window]:
    """Cut an episode into fixed-length windows.

    Trailing samples that do not fill a window are discarded. With
    ``allow_short`` (the inference path) an episode shorter than the window
    yields a single window covering the whole episode instead of raising
    :class:`EpisodeTooShort`.
    """
    if window_len < 2:
        raise ValueError("window_len must be at least 2")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    n = len(ep)
    if n < window_len:
        if allow_short:
            return [Window(ep.samples, ep, 0)]
        raise EpisodeTooShort(f"episode of {n} samples < window of {window_len}")
    return [Window(ep.samples[s:s + window_len], ep, int(s))
            for s in window_starts(n, window_len, overlap)]


def min_episode_length(train: Dataset | Sequence[Episode]) -> int:
    episodes = train.episodes if isinstance(train, Dataset) else train
    if len(episodes) == 0:
        raise EmptyDataset("cannot take the minimum length of no episodes")
    return min(len(ep) for ep in episodes)


def split_long_episode(ep: Episode, chunk_len: int) -> list[Episode]:
    """Cut ``ep`` into consecutive non-overlapping chunks of ``chunk_len``."""
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    n_chunks = len(ep) // chunk_len
    return [ep.with_samples(ep.samples[k * chunk_len:(k + 1) * chunk_len],
                            episode_id=f"{ep.episode_id}#{k}")
            for k in range(n_chunks)]


def undersample_balance(ds: Dataset, rng_seed: int) -> Dataset:
    """Randomly keep the minority-class count of episodes for every label.

    Labels absent from the dataset are ignored when taking the minimum.
    Retained episodes keep their original order.
    """
    if len(ds) == 0:
        raise EmptyDataset("nothing to balance")
    rng = np.random.default_rng(rng_seed)
    by_label: dict[PostureLabel, list[int]] = {}
    for i, ep in enumerate(ds.episodes):
        by_label.setdefault(ep.label, []).append(i)
    target = min(len(v) for v in by_label.values())
    keep: list[int] = []
    for label in ds.label_set:
        idx = by_label.get(label, [])
        if not idx:
            continue
        chosen = rng.choice(len(idx), size=target, replace=False)
        keep.extend(idx[j] for j in chosen)
    keep.sort()
    return replace(ds, episodes=tuple(ds.episodes[i] for i in keep))


def integrate_datasets(a: Dataset, b: Dataset, common_locations: Iterable) -> Dataset:
    """Merge two datasets on their shared sensor sites.

    An empty result is returned (not raised) when no episode survives the
    location filter; callers check ``len(result) == 0``.
    """
    if a.axis_convention != b.axis_convention:
        raise AxisConventionMismatch(f"{a.axis_convention!r} != {b.axis_convention!r}")
    locs = {SensorLocation.parse(l) for l in common_locations}
    labels = list(a.label_set)
    labels += [l for l in b.label_set if l not in labels]
    episodes = []
    for ds in (a, b):
        for ep in ds.episodes:
            if ep.location in locs:
                episodes.append(ep if ep.provenance else replace(ep, provenance=ds.provenance))
    provenance = "+".join(p for p in (a.provenance, b.provenance) if p)
    return Dataset(tuple(episodes), tuple(labels), provenance, a.axis_convention)
