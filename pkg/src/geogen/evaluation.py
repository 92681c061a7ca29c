"""Fidelity metrics (four distributions compared by Jensen-Shannon divergence),
CDF/density report emission, and the next check-in utility benchmark."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data_model import Trajectory
from .geo import equirectangular_km, haversine_km


class EvaluationError(ValueError):
    pass


# --- per-trajectory metrics -----------------------------------------------------


def _traj_latlon(traj: Trajectory, coords: np.ndarray) -> np.ndarray:
    return coords[np.array(traj.poi_ids(), dtype=int)]


def metric_distance(traj: Trajectory, coords: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-hop haversine distances (km) between consecutive check-ins and their total."""
    pts = _traj_latlon(traj, coords)
    if len(pts) < 2:
        return np.empty(0), 0.0
    hops = haversine_km(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])
    return np.atleast_1d(hops), float(np.sum(hops))


def metric_radius(traj: Trajectory, coords: np.ndarray) -> float:
    """Half the maximum pairwise distance between the trajectory's locations."""
    pts = _traj_latlon(traj, coords)
    n = len(pts)
    if n < 2:
        return 0.0
    i, j = np.triu_indices(n, k=1)
    d = haversine_km(pts[i, 0], pts[i, 1], pts[j, 0], pts[j, 1])
    return 0.5 * float(np.max(d))


def metric_interval(traj: Trajectory) -> np.ndarray:
    t = traj.times()
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise EvaluationError("timestamps must be strictly increasing")
    return dt


def metric_length(traj: Trajectory) -> int:
    return len(traj)


# --- histograms and divergence ----------------------------------------------------

PROB_FLOOR = 1e-10


@dataclass
class Histogram:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if len(self.edges) != len(self.probs) + 1:
            raise ValueError("need B+1 edges for B probabilities")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.probs.sum()}, expected 1")


def build_histogram(
    values,
    bins: int = 100,
    edges: np.ndarray | None = None,
    integer_bins: bool = False,
) -> Histogram:
    """Equal-width histogram with an epsilon floor on every bin.

    Shared edges can be passed in so two histograms become comparable; with
    ``integer_bins`` the edges are unit-width cells centered on 1..max.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EvaluationError("cannot build a histogram from zero values")
    if edges is None:
        lo, hi = float(values.min()), float(values.max())
        if integer_bins:
            edges = np.arange(0.5, max(hi, 1.0) + 1.0, 1.0)
        elif lo == hi:
            edges = np.array([lo, lo + 1.0])
        else:
            edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    probs = counts.astype(float) / counts.sum()
    probs = np.maximum(probs, PROB_FLOOR)
    probs = probs / probs.sum()
    return Histogram(np.asarray(edges, dtype=float), probs)


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits; symmetric, 0 iff equal, at most 1."""
    if not np.array_equal(p.edges, q.edges):
        raise EvaluationError("histograms must share bin edges")
    m = 0.5 * (p.probs + q.probs)
    return 0.5 * _kl_bits(p.probs, m) + 0.5 * _kl_bits(q.probs, m)


# --- the fidelity report -----------------------------------------------------------

METRICS = ("distance", "radius", "interval", "length")


@dataclass
class FidelityReport:
    jsd_distance: float
    jsd_radius: float
    jsd_interval: float
    jsd_length: float
    jsd_distance_total: float  # total-travel-distance variant, reported separately
    cdf: dict = field(default_factory=dict)  # metric -> side -> (values, cumulative)

    def scores(self) -> dict:
        return {
            "distance": self.jsd_distance,
            "radius": self.jsd_radius,
            "interval": self.jsd_interval,
            "length": self.jsd_length,
        }


def _pool_metrics(trajs: list[Trajectory], coords: np.ndarray) -> dict[str, np.ndarray]:
    hop_lists, totals, radii, intervals, lengths = [], [], [], [], []
    for t in trajs:
        hops, total = metric_distance(t, coords)
        hop_lists.append(hops)
        totals.append(total)
        radii.append(metric_radius(t, coords))
        intervals.append(metric_interval(t))
        lengths.append(metric_length(t))
    return {
        "distance": np.concatenate(hop_lists) if hop_lists else np.empty(0),
        "distance_total": np.asarray(totals, dtype=float),
        "radius": np.asarray(radii, dtype=float),
        "interval": np.concatenate(intervals) if intervals else np.empty(0),
        "length": np.asarray(lengths, dtype=float),
    }


def _cdf_points(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(values)
    return v, np.arange(1, len(v) + 1) / len(v)


def fidelity_report(
    real: list[Trajectory],
    synth: list[Trajectory],
    coords: np.ndarray,
    bins: int = 100,
) -> FidelityReport:
    """Four JSD scores over pooled metric distributions, plus CDF points per side."""
    if not real or not synth:
        raise EvaluationError("both trajectory sets must be non-empty")
    rm = _pool_metrics(real, coords)
    sm = _pool_metrics(synth, coords)

    scores = {}
    cdf: dict = {}
    for name in METRICS + ("distance_total",):
        rv, sv = rm[name], sm[name]
        if rv.size == 0 or sv.size == 0:
            raise EvaluationError(f"metric '{name}' has no values on one side")
        pooled = np.concatenate([rv, sv])
        if name == "length":
            edges = np.arange(0.5, max(float(pooled.max()), 1.0) + 1.0, 1.0)
        elif float(pooled.min()) == float(pooled.max()):
            edges = np.array([float(pooled.min()), float(pooled.min()) + 1.0])
        else:
            edges = np.linspace(float(pooled.min()), float(pooled.max()), bins + 1)
        score = jsd(build_histogram(rv, edges=edges), build_histogram(sv, edges=edges))
        scores[name] = score
        cdf[name] = {"real": _cdf_points(rv), "synthetic": _cdf_points(sv)}

    return FidelityReport(
        jsd_distance=scores["distance"],
        jsd_radius=scores["radius"],
        jsd_interval=scores["interval"],
        jsd_length=scores["length"],
        jsd_distance_total=scores["distance_total"],
        cdf=cdf,
    )


# --- utility benchmark ---------------------------------------------------------------


class _NextCheckinPredictor(nn.Module):
    """Fixed yardstick: one GRU layer plus a linear readout over (x_km, y_km, dt)."""

    def __init__(self, hidden: int = 64):
        super().__init__()
        self.rnn = nn.GRU(3, hidden, batch_first=True)
        self.head = nn.Linear(hidden, 3)

    def forward(self, x):
        h, _ = self.rnn(x)
        return self.head(h)


def _predictor_tensors(trajs, coords, lat0, lon0, dt_scale):
    """Per-trajectory feature sequences: planar km offsets plus normalized gaps."""
    seqs = []
    for t in trajs:
        if len(t) < 2:
            continue
        pts = _traj_latlon(t, coords)
        x, y = equirectangular_km(pts[:, 0], pts[:, 1], lat0, lon0)
        ts = t.times()
        dt = np.concatenate([[ts[0]], np.diff(ts)]) / dt_scale
        seqs.append(np.stack([x, y, dt], axis=1).astype(np.float32))
    return seqs


def utility_benchmark(
    synth_train: list[Trajectory],
    real_test: list[Trajectory],
    coords: np.ndarray,
    seed: int = 0,
    epochs: int = 20,
    hidden: int = 64,
) -> tuple[float, float]:
    """Train a small next check-in predictor on synthetic data, test on real data.

    Returns (RMSE over normalized inter-event times, mean planar Euclidean
    distance in km). Deterministic under the seed.
    """
    all_pts = np.concatenate(
        [_traj_latlon(t, coords) for t in synth_train + real_test if len(t) >= 1]
    )
    lat0, lon0 = float(np.mean(all_pts[:, 0])), float(np.mean(all_pts[:, 1]))
    max_dt = 0.0
    for t in synth_train + real_test:
        if len(t) >= 2:
            max_dt = max(max_dt, float(np.max(np.diff(t.times()))))
    if max_dt <= 0:
        raise EvaluationError("need trajectories with at least 2 check-ins on both sides")
    train_seqs = _predictor_tensors(synth_train, coords, lat0, lon0, max_dt)
    test_seqs = _predictor_tensors(real_test, coords, lat0, lon0, max_dt)
    if not train_seqs or not test_seqs:
        raise EvaluationError("need trajectories with at least 2 check-ins on both sides")

    torch.manual_seed(seed)
    model = _NextCheckinPredictor(hidden)
    opt = torch.optim.Adam(model.parameters(), lr=1e-2)
    train = [torch.from_numpy(s) for s in train_seqs]
    for _ in range(epochs):
        for seq in train:
            x, y = seq[None, :-1], seq[None, 1:]
            opt.zero_grad()
            loss = ((model(x) - y) ** 2).mean()
            loss.backward()
            opt.step()

    model.eval()
    sq_time, dist, count = 0.0, 0.0, 0
    with torch.no_grad():
        for s in test_seqs:
            seq = torch.from_numpy(s)
            pred = model(seq[None, :-1])[0].numpy()
            true = s[1:]
            sq_time += float(np.sum((pred[:, 2] - true[:, 2]) ** 2))
            dist += float(np.sum(np.hypot(pred[:, 0] - true[:, 0], pred[:, 1] - true[:, 1])))
            count += len(true)
    return float(np.sqrt(sq_time / count)), dist / count


# --- report emission -------------------------------------------------------------------


def write_report(report: FidelityReport, rmse: float | None, ed: float | None, path) -> None:
    payload = {
        "jsd_distance": report.jsd_distance,
        "jsd_radius": report.jsd_radius,
        "jsd_interval": report.jsd_interval,
        "jsd_length": report.jsd_length,
        "jsd_distance_total": report.jsd_distance_total,
        "utility_rmse": rmse,
        "utility_ed_km": ed,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_cdf_csvs(report: FidelityReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for metric, sides in report.cdf.items():
        for side, (values, cum) in sides.items():
            path = out_dir / f"cdf_{metric}_{side}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["value", "cumulative_probability"])
                for v, c in zip(values, cum):
                    w.writerow([f"{v:.6f}", f"{c:.6f}"])
            written.append(path)
    return written


def density_grid(trajs: list[Trajectory], coords: np.ndarray, cell_deg: float = 0.005) -> dict:
    """Check-in counts per (lat, lon) grid cell; total mass equals check-in count."""
    counts: dict[tuple[int, int], int] = {}
    for t in trajs:
        for pt in _traj_latlon(t, coords):
            key = (int(np.floor(pt[0] / cell_deg)), int(np.floor(pt[1] / cell_deg)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def write_density_csv(counts: dict, cell_deg: float, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lat_cell_min", "lon_cell_min", "count"])
        for (i, j), c in sorted(counts.items()):
            w.writerow([f"{i * cell_deg:.6f}", f"{j * cell_deg:.6f}", c])
