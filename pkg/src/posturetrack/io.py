"""Dataset files: per-stream CSVs plus a JSON manifest.

Each CSV holds one subject at one sensor site with header ``t,x,y,z,label``.
The manifest lists the files with their metadata and declares the axis
convention. Floats are written with :func:`repr`, so a write/read round trip
reproduces samples bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AxisConventionMismatch, DataError, EmptyDataset
from .signal import (
    ALL_LABELS,
    AXIS_CONVENTION,
    Dataset,
    Episode,
    LabeledStream,
    PostureLabel,
    SensorLocation,
    segment_into_episodes,
    split_long_episode,
)

MANIFEST_NAME = "manifest.json"
TRANSITION_LABEL = "transition"
CSV_HEADER = ("t", "x", "y", "z", "label")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_stream_csv(path: str | Path, samples: np.ndarray, labels: Sequence[str],
                     sample_rate_hz: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, (row, lab) in enumerate(zip(samples, labels)):
            w.writerow([_fmt(i / sample_rate_hz), _fmt(row[0]), _fmt(row[1]), _fmt(row[2]), lab])


def read_stream_csv(path: str | Path) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Return ``(samples, labels, t)`` from one stream file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = list(reader)
    if not rows:
        return np.empty((0, 3)), [], np.empty(0)
    try:
        t = np.array([float(r[0]) for r in rows])
        samples = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    if np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: time column is not strictly increasing")
    return samples, [r[4] for r in rows], t


def _stream_of(episodes: Sequence[Episode], transition_len: int) -> tuple[np.ndarray, list[str]]:
    parts: list[np.ndarray] = []
    labels: list[str] = []
    for i, ep in enumerate(episodes):
        if i > 0 and transition_len > 0:
            # straight-line bridge between the neighbouring episodes
            a, b = episodes[i - 1].samples[-1], ep.samples[0]
            frac = (np.arange(1, transition_len + 1) / (transition_len + 1))[:, None]
            parts.append(a + (b - a) * frac)
            labels.extend([TRANSITION_LABEL] * transition_len)
        parts.append(ep.samples)
        labels.extend([ep.label.value] * len(ep))
    return np.vstack(parts), labels


def write_dataset(ds: Dataset, out_dir: str | Path, transition_len: int = 5,
                  extra: dict | None = None) -> Path:
    """Write one CSV per (subject, location) and a manifest; returns the manifest path.

    Episodes are joined in dataset order with short ``transition`` runs in
    between so that neighbouring episodes with the same label stay separate.
    """
    if len(ds) == 0:
        raise EmptyDataset("nothing to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list[Episode]] = {}
    for ep in ds.episodes:
        groups.setdefault((ep.subject_id, ep.location.value), []).append(ep)
    files = []
    for (subj, loc), eps in groups.items():
        rates = {ep.sample_rate_hz for ep in eps}
        if len(rates) != 1:
            raise DataError(f"{subj}/{loc}: mixed sample rates {sorted(rates)}")
        samples, labels = _stream_of(eps, transition_len)
        name = f"{subj}_{loc}.csv"
        write_stream_csv(out / name, samples, labels, eps[0].sample_rate_hz)
        files.append({"path": name, "subject_id": subj, "location": loc,
                      "sample_rate_hz": float(eps[0].sample_rate_hz),
                      "provenance": eps[0].provenance or ds.provenance})
    manifest = {"axis_convention": ds.axis_convention,
                "label_set": [l.value for l in ds.label_set],
                "provenance": ds.provenance, "files": files}
    if extra:
        manifest.update(extra)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def read_manifest(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        manifest = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {p}: {exc}") from None
    if "files" not in manifest:
        raise DataError(f"{p}: manifest lists no files")
    manifest["_root"] = str(p.parent)
    return manifest


def load_dataset(path: str | Path, label_set: Iterable | None = None,
                 locations: Iterable | None = None, chunk_len: int | None = None,
                 expected_axis_convention: str | None = AXIS_CONVENTION) -> Dataset:
    """Read a manifest and segment every listed stream into episodes.

    ``chunk_len`` cuts each episode into non-overlapping chunks of that many
    samples (long recordings). ``locations`` filters files by site.
    """
    manifest = read_manifest(path)
    convention = manifest.get("axis_convention", AXIS_CONVENTION)
    if expected_axis_convention is not None and convention != expected_axis_convention:
        raise AxisConventionMismatch(f"manifest declares {convention!r}")
    if label_set is None:
        label_set = manifest.get("label_set") or [l.value for l in ALL_LABELS]
    labels = tuple(PostureLabel.parse(l) for l in label_set)
    wanted = None if locations is None else {SensorLocation.parse(l).value for l in locations}
    root = Path(manifest["_root"])
    episodes: list[Episode] = []
    for entry in manifest["files"]:
        if wanted is not None and entry["location"] not in wanted:
            continue
        samples, stream_labels, _ = read_stream_csv(root / entry["path"])
        if len(stream_labels) == 0:
            continue
        stream = LabeledStream(samples, stream_labels, float(entry["sample_rate_hz"]),
                               str(entry["subject_id"]), entry["location"],
                               entry.get("provenance", ""))
        for ep in segment_into_episodes(stream, labels):
            episodes.extend(split_long_episode(ep, chunk_len) if chunk_len else [ep])
    return Dataset(tuple(episodes), labels, manifest.get("provenance", ""), convention)
