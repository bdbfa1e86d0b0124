from __future__ import annotations

import numpy as np

from posturetrack.signal import Episode


def episode(samples, label: str = "supine", subject: str = "s00", location: str = "chest",
            rate: float = 30.0, episode_id: str = "", provenance: str = "") -> Episode:
    return Episode(np.asarray(samples, dtype=float), rate, subject, location, label,
                   provenance=provenance, episode_id=episode_id)


def constant_episode(n: int, value=(0.0, 0.0, 1.0), **kw) -> Episode:
    return episode(np.tile(np.asarray(value, dtype=float), (n, 1)), **kw)
