"""Statistics-based attack: histograms of step vectors and start points plus
the median event interval, sampled bin-by-weight then uniformly inside the
chosen bin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..ingest import Trajectory


@dataclass(frozen=True)
class Hist2D:
    counts: np.ndarray  # (nx, ny)
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "x_edges": self.x_edges.tolist(), "y_edges": self.y_edges.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Hist2D:
        return cls(np.asarray(d["counts"], dtype=np.int64), np.asarray(d["x_edges"], dtype=float), np.asarray(d["y_edges"], dtype=float))


def bin_index(v: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each value; the last bin is closed on the right. Degenerate
    (zero-width) ranges put everything in bin 0."""
    n = len(edges) - 1
    lo, hi = edges[0], edges[-1]
    if hi <= lo:
        return np.zeros(len(v), dtype=int)
    idx = np.searchsorted(edges, v, side="right") - 1
    return np.clip(idx, 0, n - 1)


def _edges(v: np.ndarray, n: int) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.full(n + 1, lo)
    return np.linspace(lo, hi, n + 1)


def histogram2d(points: np.ndarray, bins: tuple[int, int]) -> Hist2D:
    """Histogram whose bin ranges span exactly the observed data."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    xe = _edges(points[:, 0], bins[0])
    ye = _edges(points[:, 1], bins[1])
    counts = np.zeros(bins, dtype=np.int64)
    np.add.at(counts, (bin_index(points[:, 0], xe), bin_index(points[:, 1], ye)), 1)
    return Hist2D(counts, xe, ye)


def sample_hist(h: Hist2D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points: bins drawn by count, positions uniform within the bin."""
    flat = rng.choice(h.counts.size, size=n, p=h.probabilities().ravel())
    ix, iy = np.unravel_index(flat, h.counts.shape)
    ux, uy = rng.random(n), rng.random(n)
    x = h.x_edges[ix] + ux * (h.x_edges[ix + 1] - h.x_edges[ix])
    y = h.y_edges[iy] + uy * (h.y_edges[iy + 1] - h.y_edges[iy])
    return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class StatsProfile:
    dv_hist: Hist2D
    start_hist: Hist2D
    median_dt: float

    def to_dict(self) -> dict:
        return {"dv_hist": self.dv_hist.to_dict(), "start_hist": self.start_hist.to_dict(), "median_dt": self.median_dt}

    @classmethod
    def from_dict(cls, d: dict) -> StatsProfile:
        return cls(Hist2D.from_dict(d["dv_hist"]), Hist2D.from_dict(d["start_hist"]), float(d["median_dt"]))


def build_stats_profile(
    ts: Sequence[Trajectory], dv_bins: tuple[int, int] = (64, 64), start_bins: tuple[int, int] = (32, 32)
) -> StatsProfile:
    ts = [t for t in ts if len(t)]
    if not ts:
        raise ValueError("cannot build a statistics profile from no data")
    dvs = np.vstack([np.diff(t.xy, axis=0) for t in ts if len(t) > 1] or [np.zeros((0, 2))])
    if len(dvs) == 0:
        raise ValueError("need at least one trajectory with two events")
    starts = np.stack([t.xy[0] for t in ts])
    dts = np.concatenate([np.diff(t.ts) for t in ts])
    median_dt = float(np.median(dts))
    if not median_dt > 0:
        raise ValueError("median event interval must be positive; clean the data first")
    return StatsProfile(histogram2d(dvs, dv_bins), histogram2d(starts, start_bins), median_dt)


def sample_stats_sequence(
    p: StatsProfile, length: int, seed: int | np.random.Generator = 0, user_id: str = "", session_id: str = "stats"
) -> Trajectory:
    """Start point plus ``length - 1`` sampled steps, accumulated and clamped
    to the unit square, at multiples of the median interval."""
    rng = np.random.default_rng(seed)
    start = sample_hist(p.start_hist, 1, rng)[0]
    steps = sample_hist(p.dv_hist, max(length - 1, 0), rng)
    xy = np.empty((length, 2))
    if length:
        xy[0] = np.clip(start, 0.0, 1.0)
        for i in range(1, length):
            xy[i] = np.clip(xy[i - 1] + steps[i - 1], 0.0, 1.0)
    ts = p.median_dt * np.arange(length)
    return Trajectory(ts, xy, user_id, session_id, {"attack": "stats"})


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())
