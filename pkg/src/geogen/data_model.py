"""Domain types and dataset plumbing: parsing, trajectory assembly, splitting, POI catalog.

Input files are flat TSVs, one check-in per row:

    user_id <TAB> poi_id <TAB> lat <TAB> lon <TAB> category <TAB> iso8601_timestamp

The category field may be empty (Gowalla has no categories).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np


class DatasetError(ValueError):
    """Raised for unusable inputs: empty datasets, conflicting POIs, bad splits."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class CheckIn:
    poi: int        # integer index into the POI catalog
    t: float        # seconds since the trajectory window start

    def __post_init__(self):
        if self.poi < 0:
            raise ValueError(f"negative poi index: {self.poi}")
        if self.t < 0:
            raise ValueError(f"negative check-in time: {self.t}")


@dataclass
class Trajectory:
    """One user's check-ins over a fixed-duration window, timestamps rebased to 0."""

    checkins: list[CheckIn]
    duration: float
    window_start: float = 0.0  # epoch seconds; used only for hour-of-day statistics

    def __post_init__(self):
        if len(self.checkins) < 1:
            raise ValueError("trajectory must contain at least one check-in")
        prev = -1.0
        for c in self.checkins:
            if c.t <= prev:
                raise ValueError("check-in timestamps must be strictly increasing")
            if c.t >= self.duration:
                raise ValueError(f"check-in time {c.t} outside window of duration {self.duration}")
            prev = c.t

    def __len__(self) -> int:
        return len(self.checkins)

    def poi_ids(self) -> list[int]:
        return [c.poi for c in self.checkins]

    def times(self) -> np.ndarray:
        return np.array([c.t for c in self.checkins], dtype=float)


@dataclass(frozen=True)
class RawRecord:
    """One parsed input row, before POI ids are remapped to catalog indices."""

    user: str
    poi: str
    point: GeoPoint
    category: Optional[str]
    timestamp: float  # UTC epoch seconds


@dataclass
class PoiIndex:
    """Mapping from raw POI ids to dense catalog indices, with coordinates and categories."""

    ids: list[str]                    # raw id per catalog index
    index: dict[str, int]             # raw id -> catalog index
    coords: np.ndarray                # (P, 2) lat, lon in degrees
    category: np.ndarray              # (P,) category index; 0 is reserved for "none"
    category_count: int

    @property
    def n_pois(self) -> int:
        return len(self.ids)


@dataclass
class POICatalog:
    coords: np.ndarray       # (P, 2) degrees
    category: np.ndarray     # (P,) int
    freq: np.ndarray         # (P, 24) hour-of-day visit frequencies
    category_count: int

    def __post_init__(self):
        if np.any(self.freq < 0):
            raise ValueError("frequency rows must be non-negative")

    @property
    def n_pois(self) -> int:
        return self.coords.shape[0]

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.coords, self.category.astype(np.int64), self.freq):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.category_count).encode())
        return h.hexdigest()[:16]


@dataclass
class DatasetSplit:
    train: list[Trajectory]
    val: list[Trajectory]
    test: list[Trajectory]
    seed: int
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_checkins(path: str | Path, format: str = "foursquare") -> tuple[list[RawRecord], int]:
    """Parse a TSV check-in file.

    Returns (records in file order, count of malformed rows skipped). Rows
    are skipped when they have the wrong column count, non-numeric or
    out-of-range coordinates, or an unparseable timestamp.
    """
    if format not in ("foursquare", "gowalla"):
        raise ValueError(f"unknown dataset format: {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    records: list[RawRecord] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                skipped += 1
                continue
            user, poi, lat_s, lon_s, cat, ts = parts
            try:
                point = GeoPoint(float(lat_s), float(lon_s))
                timestamp = _parse_timestamp(ts)
            except (ValueError, OverflowError):
                skipped += 1
                continue
            category = cat.strip() or None
            records.append(RawRecord(user, poi, point, category, timestamp))
    if not records:
        raise DatasetError(f"no valid check-in rows in {path} ({skipped} skipped)")
    return records, skipped


def index_pois(records: list[RawRecord]) -> PoiIndex:
    """Assign dense indices to raw POI ids (sorted for determinism).

    Raises DatasetError when one POI id appears with conflicting coordinates.
    """
    coords: dict[str, GeoPoint] = {}
    cats: dict[str, Optional[str]] = {}
    conflicts = []
    for r in records:
        seen = coords.get(r.poi)
        if seen is None:
            coords[r.poi] = r.point
            cats[r.poi] = r.category
        elif (seen.lat, seen.lon) != (r.point.lat, r.point.lon):
            conflicts.append(r.poi)
        elif cats[r.poi] is None and r.category is not None:
            cats[r.poi] = r.category
    if conflicts:
        raise DatasetError(f"POIs with conflicting coordinates: {sorted(set(conflicts))}")

    ids = sorted(coords)
    index = {pid: i for i, pid in enumerate(ids)}
    coord_arr = np.array([[coords[pid].lat, coords[pid].lon] for pid in ids], dtype=float)

    names = sorted({c for c in cats.values() if c is not None})
    cat_index = {name: i + 1 for i, name in enumerate(names)}  # 0 reserved for "none"
    cat_arr = np.array([cat_index.get(cats[pid], 0) for pid in ids], dtype=np.int64)
    return PoiIndex(ids, index, coord_arr, cat_arr, category_count=len(names) + 1)


def build_trajectories(
    records: list[RawRecord],
    poi_index: PoiIndex,
    window: float,
    min_len: int = 10,
) -> list[Trajectory]:
    """Cut each user's record stream into consecutive fixed-length windows.

    Windows are aligned to each user's first check-in. Timestamps are rebased
    to the window start; duplicate timestamps within a window are resolved by
    shifting the later check-in forward by one second (cascading). Windows
    with fewer than ``min_len`` check-ins are dropped, as are check-ins whose
    shifted time would fall outside the window.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    by_user: dict[str, list[RawRecord]] = {}
    for r in records:
        by_user.setdefault(r.user, []).append(r)

    out: list[Trajectory] = []
    for user in sorted(by_user):
        recs = sorted(by_user[user], key=lambda r: r.timestamp)
        t0 = recs[0].timestamp
        windows: dict[int, list[RawRecord]] = {}
        for r in recs:
            k = int((r.timestamp - t0) // window)
            windows.setdefault(k, []).append(r)
        for k in sorted(windows):
            group = windows[k]
            start = t0 + k * window
            checkins: list[CheckIn] = []
            prev = -1.0
            for r in group:
                t = r.timestamp - start
                if t <= prev:
                    t = prev + 1.0
                if t >= window:
                    continue
                checkins.append(CheckIn(poi_index.index[r.poi], t))
                prev = t
            if len(checkins) >= min_len:
                out.append(Trajectory(checkins, duration=float(window), window_start=start))
    return out


def split_dataset(
    trajs: list[Trajectory],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Deterministic shuffled split; floor-sized val/test, remainder to train."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(trajs)
    if n < 3:
        raise DatasetError(f"need at least 3 trajectories to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(np.floor(ratios[1] * n))
    n_test = int(np.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    order = [trajs[i] for i in perm]
    return DatasetSplit(
        train=order[:n_train],
        val=order[n_train:n_train + n_val],
        test=order[n_train + n_val:],
        seed=seed,
        ratios=ratios,
    )


def build_poi_catalog(poi_index: PoiIndex, trajs: list[Trajectory]) -> POICatalog:
    """Build the catalog backing the shared POI embedding codebook.

    Frequency rows are hour-of-day histograms over the check-ins of the
    corpus (the assembled trajectories). POIs present in the input file but
    absent from every trajectory keep an all-zero row.
    """
    if not trajs:
        raise DatasetError("cannot build a catalog from zero trajectories")
    counts = np.zeros((poi_index.n_pois, 24), dtype=float)
    for traj in trajs:
        for c in traj.checkins:
            hour = datetime.fromtimestamp(traj.window_start + c.t, tz=timezone.utc).hour
            counts[c.poi, hour] += 1.0
    totals = counts.sum(axis=1, keepdims=True)
    freq = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return POICatalog(
        coords=poi_index.coords.copy(),
        category=poi_index.category.copy(),
        freq=freq,
        category_count=poi_index.category_count,
    )


# --- persistence -------------------------------------------------------------

_SPLIT_COLUMNS = "traj_id\tpoi_id\tlat\tlon\tt_seconds\twindow_start"


def save_trajectories(path: str | Path, trajs: list[Trajectory], catalog: POICatalog) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(_SPLIT_COLUMNS + "\n")
        for tid, traj in enumerate(trajs):
            for c in traj.checkins:
                lat, lon = catalog.coords[c.poi]
                fh.write(f"{tid}\t{c.poi}\t{lat:.6f}\t{lon:.6f}\t{c.t:.3f}\t{traj.window_start:.3f}\n")


def load_trajectories(path: str | Path, duration: float) -> list[Trajectory]:
    groups: dict[int, list[tuple[int, float]]] = {}
    starts: dict[int, float] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != _SPLIT_COLUMNS.strip():
            raise DatasetError(f"unexpected split file header in {path}")
        for line in fh:
            tid_s, poi_s, _lat, _lon, t_s, ws_s = line.rstrip("\n").split("\t")
            tid = int(tid_s)
            groups.setdefault(tid, []).append((int(poi_s), float(t_s)))
            starts[tid] = float(ws_s)
    return [
        Trajectory([CheckIn(p, t) for p, t in groups[tid]], duration, starts[tid])
        for tid in sorted(groups)
    ]


def save_catalog(path: str | Path, catalog: POICatalog) -> None:
    np.savez(
        path,
        coords=catalog.coords,
        category=catalog.category,
        freq=catalog.freq,
        category_count=np.array(catalog.category_count),
    )


def load_catalog(path: str | Path) -> POICatalog:
    with np.load(path) as z:
        return POICatalog(
            coords=z["coords"],
            category=z["category"],
            freq=z["freq"],
            category_count=int(z["category_count"]),
        )
