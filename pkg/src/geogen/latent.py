"""Latent movement sequences: slotwise aggregation, interpolation, filtering, normalization.

A trajectory of irregular check-ins becomes a temporally regular sequence of
L = floor(duration / interval) slots, each holding a mean coordinate and a
check-in count (the intensity). Empty interior slots are filled by linear
interpolation between the nearest observed neighbours; empty boundary runs
are filled by treating the sequence as a loop from the last observed slot
back to the first. Filled slots keep intensity 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import GeoPoint, Trajectory


class LatentError(ValueError):
    """Raised for degenerate latent sequences (no check-ins, nothing above threshold)."""


@dataclass
class LatentMovementSequence:
    coords: np.ndarray      # (L, 2) lat, lon in degrees
    intensity: np.ndarray   # (L,) non-negative integer counts
    interval: float         # slot width in seconds
    duration: float

    def __post_init__(self):
        L = int(self.duration // self.interval)
        if self.coords.shape != (L, 2):
            raise ValueError(f"expected {L} slots, got coords of shape {self.coords.shape}")
        if self.intensity.shape != (L,):
            raise ValueError("intensity length must match slot count")
        if np.any(self.intensity < 0):
            raise ValueError("intensities must be non-negative")

    def __len__(self) -> int:
        return self.coords.shape[0]

    def as_array(self) -> np.ndarray:
        """Stack into the (L, 3) tensor layout: lat, lon, intensity."""
        return np.concatenate([self.coords, self.intensity[:, None].astype(float)], axis=1)


@dataclass
class FilteredSequence:
    """Slots that carried real check-ins, as (point, midpoint-time) pairs."""

    points: list[tuple[GeoPoint, float]]
    max_len: int

    def __post_init__(self):
        if len(self.points) > self.max_len:
            raise ValueError("filtered sequence exceeds max_len")
        prev = -1.0
        for _, t in self.points:
            if t <= prev:
                raise ValueError("filtered times must be strictly increasing")
            prev = t

    def __len__(self) -> int:
        return len(self.points)

    def latlon(self) -> np.ndarray:
        return np.array([[p.lat, p.lon] for p, _ in self.points], dtype=float)

    def times(self) -> np.ndarray:
        return np.array([t for _, t in self.points], dtype=float)


def interpolate_interior(coords: np.ndarray, i_p: int, i_n: int, i: int) -> np.ndarray:
    """Affine interpolation of the coordinate at slot i between observed slots i_p < i < i_n."""
    if i_n == i_p:
        raise ValueError("interpolation endpoints coincide")
    frac = (i - i_p) / (i_n - i_p)
    return coords[i_p] + frac * (coords[i_n] - coords[i_p])


def interpolate_circular(coords: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Fill leading/trailing empty runs by wrapping from the last observed slot to the first.

    For an empty boundary index i, with i_last/i_first the last/first observed
    slots and g = i_first + L - i_last the wrapped gap:

        l_i = l_last + (((i - i_last) mod L) / g) * (l_first - l_last)
    """
    if not observed.any():
        raise LatentError("no observed slots to interpolate from")
    L = coords.shape[0]
    idx = np.flatnonzero(observed)
    i_first, i_last = int(idx[0]), int(idx[-1])
    g = i_first + L - i_last
    out = coords.copy()
    boundary = list(range(i_last + 1, L)) + list(range(0, i_first))
    for i in boundary:
        frac = ((i - i_last) % L) / g
        out[i] = coords[i_last] + frac * (coords[i_first] - coords[i_last])
    return out


def reconstruct(traj: Trajectory, interval: float, catalog_coords: np.ndarray) -> LatentMovementSequence:
    """Aggregate a trajectory into slotwise (mean coordinate, count) and fill the gaps.

    ``catalog_coords`` maps POI index to (lat, lon) degrees. Check-ins at or
    beyond L * interval (possible when interval does not divide duration) are
    left out of the slot grid.
    """
    if len(traj.checkins) == 0:
        raise LatentError("cannot reconstruct an empty trajectory")
    L = int(traj.duration // interval)
    if L < 2:
        raise ValueError(f"interval {interval} leaves fewer than 2 slots for duration {traj.duration}")

    coords = np.zeros((L, 2), dtype=float)
    intensity = np.zeros(L, dtype=np.int64)
    sums = np.zeros((L, 2), dtype=float)
    for c in traj.checkins:
        i = int(c.t // interval)
        if i >= L:
            continue
        sums[i] += catalog_coords[c.poi]
        intensity[i] += 1

    observed = intensity > 0
    if not observed.any():
        raise LatentError("trajectory has no check-ins inside the slot grid")
    coords[observed] = sums[observed] / intensity[observed, None]

    # interior gaps: nearest observed slot on each side
    idx = np.flatnonzero(observed)
    for a, b in zip(idx[:-1], idx[1:]):
        for i in range(a + 1, b):
            coords[i] = interpolate_interior(coords, int(a), int(b), i)
    coords = interpolate_circular(coords, observed)

    return LatentMovementSequence(coords, intensity, float(interval), float(traj.duration))


def filter_sequence(seq: LatentMovementSequence, gamma: int = 1, max_len: int = 75) -> FilteredSequence:
    """Keep slots with intensity >= gamma, stamped with their midpoint times.

    Slot i (0-indexed) gets time (i + 0.5) * interval. Sequences longer than
    ``max_len`` are truncated to their first ``max_len`` points.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    kept = np.flatnonzero(seq.intensity >= gamma)
    if kept.size == 0:
        raise LatentError(f"no slots with intensity >= {gamma}")
    kept = kept[:max_len]
    points = [
        (GeoPoint(float(seq.coords[i, 0]), float(seq.coords[i, 1])), (int(i) + 0.5) * seq.interval)
        for i in kept
    ]
    return FilteredSequence(points, max_len)


# --- normalization ------------------------------------------------------------

CHANNELS = ("lat", "lon", "intensity")


@dataclass
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def compute_norm_stats(batch: np.ndarray) -> NormStats:
    """Per-channel mean/std over a (B, L, 3) batch. Errors on constant channels."""
    if batch.ndim != 3 or batch.shape[-1] != 3:
        raise ValueError(f"expected batch of shape (B, L, 3), got {batch.shape}")
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    mean = batch.mean(axis=(0, 1))
    std = batch.std(axis=(0, 1))
    for k, name in enumerate(CHANNELS):
        if std[k] == 0.0:
            raise ValueError(f"channel '{name}' is constant; cannot z-score")
    return NormStats(mean, std)


def normalize(batch: np.ndarray, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Z-score a (B, L, 3) batch; stats are computed from the batch when not given."""
    if stats is None:
        stats = compute_norm_stats(batch)
    return (batch - stats.mean) / stats.std, stats


def denormalize(batch: np.ndarray, stats: NormStats, round_intensity: bool = False) -> np.ndarray:
    """Exact inverse of :func:`normalize`.

    With ``round_intensity`` the intensity channel is rounded to the nearest
    non-negative integer, the form filter_sequence expects.
    """
    out = batch * stats.std + stats.mean
    if round_intensity:
        out = out.copy()
        out[..., 2] = np.maximum(np.rint(out[..., 2]), 0.0)
    return out


def save_latents(path, data: np.ndarray, interval: float, duration: float, stats: NormStats) -> None:
    """Persist a raw (un-normalized) latent batch with its grid and stats header."""
    np.savez(
        path,
        data=data,
        interval=np.array(interval),
        duration=np.array(duration),
        mean=stats.mean,
        std=stats.std,
    )


def load_latents(path) -> tuple[np.ndarray, float, float, NormStats]:
    with np.load(path) as z:
        return (
            z["data"],
            float(z["interval"]),
            float(z["duration"]),
            NormStats(z["mean"], z["std"]),
        )
