"""Synthetic lying-posture accelerometer data from a gravity-orientation model.

Each sample is the gravity direction for a (posture, site) pair, rotated by a
fixed per-(subject, site) placement rotation, plus white noise::

    s_t = R_subject @ R_move(t) @ g(posture, site) + e_t

``R_move`` is the identity for low-tier sites (chest, thighs, ankles). For
high-tier sites (wrists, arms) it combines a slow sway of a few degrees with
sparse movement bursts: temporary reorientations lasting 1-3 s that rise and
fall smoothly. Wrist and arm nominal vectors are built so that two pairs of
postures lie close together, which reproduces the site ordering where limb
sensors confuse postures more often than torso sensors.

All randomness is derived from ``SynthConfig.seed`` through
:class:`numpy.random.SeedSequence` spawn keys, so any episode can be
regenerated on its own and the output does not depend on generation order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .signal import ALL_LABELS, Dataset, Episode, PostureLabel, SensorLocation

L = PostureLabel
S = SensorLocation

HIGH_TIER = frozenset({S.LEFT_WRIST, S.RIGHT_WRIST, S.LEFT_ARM, S.RIGHT_ARM})


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _rotate(v, axis: str, deg: float) -> np.ndarray:
    return Rotation.from_euler(axis, deg, degrees=True).apply(np.asarray(v, dtype=np.float64))


def _mirror_x(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) * np.array([-1.0, 1.0, 1.0])


# Chest readings of about +0.94 g (supine), -0.80 g (prone) and -0.82 g
# (left side) on the dominant axis, completed to unit length on the other
# horizontal axis. Right side mirrors left side.
CHEST = {
    L.SUPINE: _unit([0.3446, 0.0, 0.9388]),
    L.PRONE: _unit([0.6054, 0.0, -0.7959]),
    L.LEFT_SIDE: _unit([-0.8163, 0.0, 0.5776]),
    L.RIGHT_SIDE: _unit([0.8163, 0.0, 0.5776]),
}


def _tilted(table: dict, deg: float) -> dict:
    return {lab: _rotate(v, "x", deg) for lab, v in table.items()}


def _limb(supine, prone, sep_deg: float) -> dict:
    # supine/left-side and prone/right-side pairs sit sep_deg apart
    s, p = _unit(supine), _unit(prone)
    return {L.SUPINE: s, L.LEFT_SIDE: _rotate(s, "y", -sep_deg),
            L.PRONE: p, L.RIGHT_SIDE: _rotate(p, "y", sep_deg)}


def _mirrored(table: dict) -> dict:
    swap = {L.SUPINE: L.SUPINE, L.PRONE: L.PRONE,
            L.LEFT_SIDE: L.RIGHT_SIDE, L.RIGHT_SIDE: L.LEFT_SIDE}
    return {swap[lab]: _mirror_x(v) for lab, v in table.items()}


_LEFT_WRIST = _limb([0.25, -0.35, 0.90], [0.30, -0.25, -0.92], 16.0)
_LEFT_ARM = _limb([0.15, -0.60, 0.78], [0.20, -0.55, -0.81], 24.0)

NOMINAL: dict[SensorLocation, dict[PostureLabel, np.ndarray]] = {
    S.CHEST: CHEST,
    S.LEFT_THIGH: _tilted(CHEST, 10.0),
    S.RIGHT_THIGH: _tilted(CHEST, -10.0),
    S.LEFT_ANKLE: _tilted(CHEST, 15.0),
    S.RIGHT_ANKLE: _tilted(CHEST, -15.0),
    S.LEFT_WRIST: _LEFT_WRIST,
    S.RIGHT_WRIST: _mirrored(_LEFT_WRIST),
    S.LEFT_ARM: _LEFT_ARM,
    S.RIGHT_ARM: _mirrored(_LEFT_ARM),
}


@dataclass(frozen=True)
class PostureOrientation:
    gravity: np.ndarray       # unit 3-vector in the sensor frame
    high_tier: bool


def orientation(posture, location, overrides: dict | None = None) -> PostureOrientation:
    """Nominal gravity direction for a posture at a site.

    ``overrides`` maps location names to ``{posture name: [x, y, z]}``; given
    vectors are normalized to unit length.
    """
    lab = PostureLabel.parse(posture)
    loc = SensorLocation.parse(location)
    vec = NOMINAL[loc][lab]
    if overrides:
        table = overrides.get(loc.value, {})
        if lab.value in table:
            vec = _unit(table[lab.value])
    return PostureOrientation(np.asarray(vec, dtype=np.float64), loc in HIGH_TIER)


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 20
    episodes_per_posture: int = 1
    length_range: tuple[int, int] = (64, 128)      # samples, inclusive
    sample_rate_hz: float = 30.0
    jitter_deg: float = 8.0                         # placement rotation std, low tier
    high_tier_jitter_deg: float = 20.0
    noise_std: float = 0.02                         # white noise, g
    burst_rate_hz: float = 0.1                      # expected bursts per second, high tier
    burst_amplitude_deg: float = 60.0
    burst_duration_s: tuple[float, float] = (1.0, 3.0)
    sway_deg: float = 5.0                           # high tier only
    postures: tuple[str, ...] = tuple(l.value for l in ALL_LABELS)
    locations: tuple[str, ...] = tuple(s.value for s in SensorLocation)
    orientation_overrides: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.length_range
        if not 2 <= lo <= hi:
            raise ValueError("length_range must satisfy 2 <= low <= high")
        for name in ("jitter_deg", "high_tier_jitter_deg", "noise_std", "burst_rate_hz",
                     "burst_amplitude_deg", "sway_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.subjects < 1 or self.episodes_per_posture < 1:
            raise ValueError("subjects and episodes_per_posture must be positive")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "length_range", (int(lo), int(hi)))
        object.__setattr__(self, "burst_duration_s", tuple(float(v) for v in self.burst_duration_s))
        object.__setattr__(self, "postures",
                           tuple(PostureLabel.parse(p).value for p in self.postures))
        object.__setattr__(self, "locations",
                           tuple(SensorLocation.parse(l).value for l in self.locations))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_range"] = list(self.length_range)
        d["burst_duration_s"] = list(self.burst_duration_s)
        d["postures"] = list(self.postures)
        d["locations"] = list(self.locations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        d = dict(d)
        for key in ("length_range", "burst_duration_s", "postures", "locations"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def subject_id(subject: int) -> str:
    return f"s{subject + 1:02d}"


def _loc_index(loc: SensorLocation) -> int:
    return list(SensorLocation).index(loc)


def _lab_index(lab: PostureLabel) -> int:
    return list(PostureLabel).index(lab)


def subject_rotation(cfg: SynthConfig, subject: int, location) -> Rotation:
    """Placement rotation for one subject at one site, shared by all their episodes."""
    loc = SensorLocation.parse(location)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, subject, _loc_index(loc))))
    std = cfg.high_tier_jitter_deg if loc in HIGH_TIER else cfg.jitter_deg
    axis = _unit(rng.normal(size=3))
    angle = np.deg2rad(rng.normal(0.0, std)) if std > 0 else 0.0
    return Rotation.from_rotvec(axis * angle)


def _movement(cfg: SynthConfig, n: int, rng: np.random.Generator) -> Rotation | None:
    t = np.arange(n) / cfg.sample_rate_hz
    rotvec = np.zeros((n, 3))
    if cfg.sway_deg > 0:
        amp = np.deg2rad(cfg.sway_deg)
        freq = rng.uniform(0.1, 0.4, size=3)
        phase = rng.uniform(0.0, 2 * np.pi, size=3)
        rotvec += amp * np.sin(2 * np.pi * freq * t[:, None] + phase)
    sway = Rotation.from_rotvec(rotvec)
    duration = n / cfg.sample_rate_hz
    n_bursts = int(rng.poisson(cfg.burst_rate_hz * duration)) if cfg.burst_rate_hz > 0 else 0
    burst_vec = np.zeros((n, 3))
    for _ in range(n_bursts):
        start = rng.uniform(0.0, duration)
        length = rng.uniform(*cfg.burst_duration_s)
        axis = _unit(rng.normal(size=3))
        peak = np.deg2rad(cfg.burst_amplitude_deg) * rng.uniform(0.5, 1.0)
        phase = (t - start) / length
        inside = (phase >= 0) & (phase <= 1)
        burst_vec[inside] += np.outer(peak * np.sin(np.pi * phase[inside]) ** 2, axis)
    if cfg.sway_deg == 0 and n_bursts == 0:
        return None
    return Rotation.from_rotvec(burst_vec) * sway


def generate_episode(cfg: SynthConfig, subject: int, posture, location,
                     rng: np.random.Generator | int | None = None,
                     episode_index: int = 0, episode_id: str = "") -> Episode:
    """One synthetic episode.

    ``rng`` drives the length, movement and noise draws; when omitted it is
    derived from ``(cfg.seed, subject, location, posture, episode_index)``.
    The placement rotation never depends on ``rng``.
    """
    lab = PostureLabel.parse(posture)
    loc = SensorLocation.parse(location)
    if rng is None or isinstance(rng, (int, np.integer)):
        key = (1, subject, _loc_index(loc), _lab_index(lab), episode_index)
        base = cfg.seed if rng is None else int(rng)
        rng = np.random.default_rng(np.random.SeedSequence(base, spawn_key=key))
    orient = orientation(lab, loc, cfg.orientation_overrides)
    lo, hi = cfg.length_range
    n = int(rng.integers(lo, hi + 1))
    g = np.broadcast_to(orient.gravity, (n, 3))
    if orient.high_tier:
        move = _movement(cfg, n, rng)
        if move is not None:
            g = move.apply(g)
    samples = subject_rotation(cfg, subject, loc).apply(g)
    if cfg.noise_std > 0:
        samples = samples + rng.normal(0.0, cfg.noise_std, size=(n, 3))
    return Episode(samples, cfg.sample_rate_hz, subject_id(subject), loc, lab,
                   provenance=f"synth:seed={cfg.seed}", episode_id=episode_id)


def generate_dataset(cfg: SynthConfig = SynthConfig()) -> Dataset:
    """All subjects x sites x postures x repeats, ordered in that nesting.

    Within a subject and site, episodes are ordered repeat-major then by
    posture, and numbered ``subject:location:k``, matching what segmenting the
    written stream back into episodes yields.
    """
    labels = tuple(PostureLabel.parse(p) for p in cfg.postures)
    episodes: list[Episode] = []
    for subj in range(cfg.subjects):
        for loc_name in cfg.locations:
            loc = SensorLocation.parse(loc_name)
            k = 0
            for rep in range(cfg.episodes_per_posture):
                for lab in labels:
                    eid = f"{subject_id(subj)}:{loc.value}:{k}"
                    episodes.append(generate_episode(cfg, subj, lab, loc,
                                                     episode_index=rep, episode_id=eid))
                    k += 1
    return Dataset(tuple(episodes), labels, provenance=f"synth:seed={cfg.seed}")


def generate_locations(cfg: SynthConfig, locations: Sequence) -> Dataset:
    """Shortcut for a subset of sites with otherwise identical draws."""
    from dataclasses import replace
    return generate_dataset(replace(cfg, locations=tuple(locations)))
