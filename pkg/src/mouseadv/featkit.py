"""Engineered trajectory features, standardization, the 10-dim cluster
features and k-means.

The 64-entry schema (``FEATURE_NAMES``) is documented in
``docs/feature_schema.md``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import ABS, DV, VEL, RepSeq, Trajectory

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "mf64-v1"

_SERIES = (
    "velocity_x",
    "velocity_y",
    "speed",
    "acceleration_x",
    "acceleration_y",
    "tangential_acceleration",
    "jerk",
    "angle",
    "angular_velocity",
    "curvature",
)
_STATS = ("mean", "std", "min", "max", "median")
_SCALARS = ("duration", "path_length", "net_displacement", "straightness", "dt_mean", "dt_std")

FEATURE_NAMES: tuple[str, ...] = (
    tuple(f"{s}_{st}" for s in _SERIES for st in _STATS)
    + _SCALARS
    + tuple(f"octant_{k}" for k in range(8))
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 64

CLUSTER_FEATURE_NAMES = (
    "velocity_x_mean",
    "velocity_x_std",
    "velocity_y_mean",
    "velocity_y_std",
    "acceleration_x_mean",
    "acceleration_x_std",
    "acceleration_y_mean",
    "acceleration_y_std",
    "angle_mean",
    "angle_std",
)

MIN_EVENTS = 4


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_version: str = SCHEMA_VERSION
    # names of entries where an undefined quantity was replaced by 0
    substituted: tuple[str, ...] = ()


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Map angles into ``(-pi, pi]``."""
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _stats5(x: np.ndarray) -> np.ndarray:
    return np.stack([x.mean(1), x.std(1), x.min(1), x.max(1), np.median(x, axis=1)], axis=1)


def extract_features_batch(ts: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Features for a batch of equal-length trajectories.

    Args:
        ts: ``(B, N)`` timestamps, strictly increasing along axis 1.
        xy: ``(B, N, 2)`` positions.

    Returns:
        ``(B, 64)`` matrix in ``FEATURE_NAMES`` order.
    """
    ts = np.asarray(ts, dtype=float)
    xy = np.asarray(xy, dtype=float)
    if ts.ndim != 2 or xy.shape != ts.shape + (2,):
        raise ValueError(f"expected ts (B, N) and xy (B, N, 2), got {ts.shape} and {xy.shape}")
    if ts.shape[1] < MIN_EVENTS:
        raise ValueError(f"need at least {MIN_EVENTS} events, got {ts.shape[1]}")
    dt = np.diff(ts, axis=1)
    d = np.diff(xy, axis=1)
    step = np.hypot(d[..., 0], d[..., 1])
    v = d / dt[..., None]
    speed = step / dt
    a = np.diff(v, axis=1) / dt[:, 1:, None]
    tan_acc = np.diff(speed, axis=1) / dt[:, 1:]
    jerk = np.linalg.norm(np.diff(a, axis=1), axis=2) / dt[:, 2:]
    angle = np.arctan2(d[..., 1], d[..., 0])  # 0 for zero-motion steps
    dang = wrap_angle(np.diff(angle, axis=1))
    ang_vel = dang / dt[:, 1:]
    seg = step[:, 1:]
    curv = np.divide(dang, seg, out=np.zeros_like(dang), where=seg > 0)

    series = (v[..., 0], v[..., 1], speed, a[..., 0], a[..., 1], tan_acc, jerk, angle, ang_vel, curv)
    blocks = [_stats5(s) for s in series]

    duration = ts[:, -1] - ts[:, 0]
    path = step.sum(1)
    net = np.linalg.norm(xy[:, -1] - xy[:, 0], axis=1)
    straight = np.divide(net, path, out=np.zeros_like(net), where=path > 0)
    scalars = np.stack([duration, path, net, straight, dt.mean(1), dt.std(1)], axis=1)

    moving = step > 0
    octant = np.floor(np.mod(angle, 2 * np.pi) / (np.pi / 4)).astype(int) % 8
    counts = np.stack([((octant == k) & moving).sum(1) for k in range(8)], axis=1).astype(float)
    n_moving = moving.sum(1, keepdims=True)
    hist = np.divide(counts, n_moving, out=np.zeros_like(counts), where=n_moving > 0)

    return np.concatenate(blocks + [scalars, hist], axis=1)


def _stats5_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``_stats5(x)`` contracted with ``g`` ``(B, 5)``.

    min, max and median route to the selected elements (first index on
    ties; the two middle elements share an even-length median).
    """
    B, M = x.shape
    rows = np.arange(B)
    out = np.repeat(g[:, :1] / M, M, axis=1)
    std = x.std(1, keepdims=True)
    out += np.divide(g[:, 1:2] * (x - x.mean(1, keepdims=True)), M * std, out=np.zeros_like(x), where=std > 0)
    out[rows, x.argmin(1)] += g[:, 2]
    out[rows, x.argmax(1)] += g[:, 3]
    order = np.argsort(x, axis=1, kind="stable")
    if M % 2:
        out[rows, order[:, M // 2]] += g[:, 4]
    else:
        out[rows, order[:, M // 2 - 1]] += 0.5 * g[:, 4]
        out[rows, order[:, M // 2]] += 0.5 * g[:, 4]
    return out


def extract_features_backward(ts: np.ndarray, xy: np.ndarray, dfeat: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of ``extract_features_batch`` wrt ``xy``.

    Timestamps are constants. The octant histogram is piecewise constant and
    the angle wrap is treated as locally smooth, so both contribute nothing;
    the result is the gradient wherever the features are differentiable.
    """
    ts = np.asarray(ts, dtype=float)
    xy = np.asarray(xy, dtype=float)
    g = np.asarray(dfeat, dtype=float)
    dt = np.diff(ts, axis=1)
    d = np.diff(xy, axis=1)
    step = np.hypot(d[..., 0], d[..., 1])
    v = d / dt[..., None]
    speed = step / dt
    a = np.diff(v, axis=1) / dt[:, 1:, None]
    e = np.diff(a, axis=1)
    e_norm = np.linalg.norm(e, axis=2)
    angle = np.arctan2(d[..., 1], d[..., 0])
    dang = wrap_angle(np.diff(angle, axis=1))
    seg = step[:, 1:]
    moving = step > 0

    blk = [g[:, 5 * k : 5 * k + 5] for k in range(10)]
    d_vx = _stats5_backward(v[..., 0], blk[0])
    d_vy = _stats5_backward(v[..., 1], blk[1])
    d_speed = _stats5_backward(speed, blk[2])
    d_a = np.stack([_stats5_backward(a[..., 0], blk[3]), _stats5_backward(a[..., 1], blk[4])], axis=2)
    d_tan = _stats5_backward(np.diff(speed, axis=1) / dt[:, 1:], blk[5])
    d_jerk = _stats5_backward(e_norm / dt[:, 2:], blk[6])
    d_angle = _stats5_backward(angle, blk[7])
    d_angvel = _stats5_backward(dang / dt[:, 1:], blk[8])
    d_curv = _stats5_backward(np.divide(dang, seg, out=np.zeros_like(dang), where=seg > 0), blk[9])
    _, d_path, d_net, d_straight = g[:, 50], g[:, 51], g[:, 52], g[:, 53]

    net_vec = xy[:, -1] - xy[:, 0]
    net = np.linalg.norm(net_vec, axis=1)
    path = step.sum(1)
    has_path = path > 0
    safe_path = np.where(has_path, path, 1.0)
    d_net = d_net + np.where(has_path, d_straight / safe_path, 0.0)
    d_path = d_path - np.where(has_path, d_straight * net / safe_path**2, 0.0)

    # jerk -> acceleration
    d_e = np.divide((d_jerk / dt[:, 2:])[..., None] * e, e_norm[..., None], out=np.zeros_like(e), where=e_norm[..., None] > 0)
    d_a = d_a.copy()
    d_a[:, 1:] += d_e
    d_a[:, :-1] -= d_e
    # acceleration -> velocity
    q = d_a / dt[:, 1:, None]
    d_v = np.stack([d_vx, d_vy], axis=2)
    d_v[:, 1:] += q
    d_v[:, :-1] -= q
    # tangential acceleration -> speed
    r = d_tan / dt[:, 1:]
    d_speed = d_speed.copy()
    d_speed[:, 1:] += r
    d_speed[:, :-1] -= r
    # angular velocity and curvature -> angle differences and segment lengths
    safe_seg = np.where(seg > 0, seg, 1.0)
    d_dang = d_angvel / dt[:, 1:] + np.where(seg > 0, d_curv / safe_seg, 0.0)
    d_step = d_speed / dt + d_path[:, None]
    d_step[:, 1:] -= np.where(seg > 0, d_curv * dang / safe_seg**2, 0.0)
    d_angle = d_angle.copy()
    d_angle[:, 1:] += d_dang
    d_angle[:, :-1] -= d_dang

    # everything onto the position differences
    sq = np.where(moving, step**2, 1.0)
    dd = d_v / dt[..., None]
    dd += np.where(moving[..., None], d_step[..., None] * d / np.where(moving, step, 1.0)[..., None], 0.0)
    dd[..., 0] += np.where(moving, -d_angle * d[..., 1] / sq, 0.0)
    dd[..., 1] += np.where(moving, d_angle * d[..., 0] / sq, 0.0)

    dxy = np.zeros_like(xy)
    dxy[:, 1:] += dd
    dxy[:, :-1] -= dd
    has_net = net > 0
    u = np.divide(net_vec, np.where(has_net, net, 1.0)[:, None]) * has_net[:, None]
    dxy[:, -1] += d_net[:, None] * u
    dxy[:, 0] -= d_net[:, None] * u
    return dxy


def extract_features(t: Trajectory) -> FeatureVector:
    if len(t) < MIN_EVENTS:
        raise ValueError(f"trajectory {t.session_id!r} has {len(t)} events; need {MIN_EVENTS}")
    if np.any(np.diff(t.ts) <= 0):
        raise ValueError(f"timestamps of {t.session_id!r} are not strictly increasing")
    values = extract_features_batch(t.ts[None], t.xy[None])[0]
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite features for {t.session_id!r}")
    step = np.hypot(*np.diff(t.xy, axis=0).T)
    subs: list[str] = []
    if np.any(step == 0):
        subs += [n for n in FEATURE_NAMES if n.startswith(("angle_", "angular_velocity_", "curvature_"))]
    if step.sum() == 0:
        subs += ["straightness"] + [f"octant_{k}" for k in range(8)]
    return FeatureVector(values, substituted=tuple(subs))


def feature_matrix(ts: Iterable[Trajectory]) -> np.ndarray:
    """Stack features; equal-length inputs go through one batched call."""
    ts = list(ts)
    if not ts:
        return np.zeros((0, N_FEATURES))
    if len({len(t) for t in ts}) == 1:
        return extract_features_batch(np.stack([t.ts for t in ts]), np.stack([t.xy for t in ts]))
    return np.stack([extract_features(t).values for t in ts])


def write_feature_csv(matrix: np.ndarray, path: str | Path, names: Sequence[str] = FEATURE_NAMES) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


# -- standardization ------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Standardizer:
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


def standardize_fit(vs: np.ndarray | Sequence[FeatureVector]) -> Standardizer:
    """Per-column mean and population std; zero-variance columns get scale 1
    so that they standardize to 0."""
    x = _as_matrix(vs)
    if len(x) < 2:
        raise ValueError("need at least two vectors to fit a standardizer")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)
    return Standardizer(mean, scale)


def standardize_apply(s: Standardizer, v: np.ndarray | FeatureVector) -> np.ndarray:
    if isinstance(v, FeatureVector):
        v = v.values
    return s.apply(v)


def _as_matrix(vs) -> np.ndarray:
    if isinstance(vs, np.ndarray):
        return np.atleast_2d(vs.astype(float))
    return np.stack([v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=float) for v in vs])


# -- cluster features -----------------------------------------------------------


def velocities_of(r: RepSeq) -> np.ndarray:
    """Per-step velocity ``(L, 2)`` of a representation."""
    if r.kind == VEL:
        return r.points.copy()
    if r.kind == DV:
        return r.points / r.dts[:, None]
    pos = np.vstack([r.origin[None], r.points])
    return np.diff(pos, axis=0) / r.dts[:, None]


def cluster_features_batch(vel: np.ndarray, dts: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Mean/std of velocity, acceleration and movement angle.

    Args:
        vel: ``(B, L, 2)`` velocities.
        dts: ``(B, L)`` time steps belonging to each velocity.

    Returns:
        ``(B, 10)`` features in ``CLUSTER_FEATURE_NAMES`` order and a cache
        for :func:`cluster_features_backward`.
    """
    vel = np.asarray(vel, dtype=float)
    dts = np.asarray(dts, dtype=float)
    if vel.shape[1] < 2:
        raise ValueError("cluster features need at least 2 velocity steps")
    acc = np.diff(vel, axis=1) / dts[:, 1:, None]
    ang = np.arctan2(vel[..., 1], vel[..., 0])
    series = [vel[..., 0], vel[..., 1], acc[..., 0], acc[..., 1], ang]
    cols = []
    for s in series:
        cols += [s.mean(1), s.std(1)]
    return np.stack(cols, axis=1), (vel, dts, series)


def cluster_features_backward(cache: tuple, dfeat: np.ndarray) -> np.ndarray:
    """Gradient of the cluster features wrt the velocity input."""
    vel, dts, series = cache
    grads = []
    for k, s in enumerate(series):
        n = s.shape[1]
        m = s.mean(1, keepdims=True)
        sd = s.std(1, keepdims=True)
        g_mean = dfeat[:, 2 * k : 2 * k + 1] / n
        dstd = np.divide(s - m, n * sd, out=np.zeros_like(s), where=sd > 0)
        grads.append(g_mean + dfeat[:, 2 * k + 1 : 2 * k + 2] * dstd)
    dvel = np.zeros_like(vel)
    dvel[..., 0] += grads[0]
    dvel[..., 1] += grads[1]
    for axis, g in ((0, grads[2]), (1, grads[3])):
        g = g / dts[:, 1:]
        dvel[:, 1:, axis] += g
        dvel[:, :-1, axis] -= g
    r2 = vel[..., 0] ** 2 + vel[..., 1] ** 2
    inv = np.divide(1.0, r2, out=np.zeros_like(r2), where=r2 > 0)
    dvel[..., 0] += grads[4] * (-vel[..., 1]) * inv
    dvel[..., 1] += grads[4] * vel[..., 0] * inv
    return dvel


@dataclass(frozen=True)
class ClusterFeatures:
    values: np.ndarray
    zero_motion_steps: int = 0


def cluster_features(r: RepSeq) -> ClusterFeatures:
    if len(r) < 3:
        raise ValueError("cluster features need a sequence of at least 3 steps")
    vel = velocities_of(r)
    f, _ = cluster_features_batch(vel[None], r.dts[None])
    zero = int(np.count_nonzero(np.all(vel == 0, axis=1)))
    return ClusterFeatures(f[0], zero)


# -- k-means --------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    history: tuple[float, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {"centroids": self.centroids.tolist(), "inertia": self.inertia}

    @classmethod
    def from_dict(cls, d: dict) -> KMeansModel:
        return cls(np.asarray(d["centroids"], dtype=float), float(d["inertia"]))


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)


def kmeans_fit(
    xs: np.ndarray | Sequence[ClusterFeatures],
    k: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> KMeansModel:
    """Lloyd's algorithm from k-means++ seeding.

    ``history`` records the inertia after every assignment step.
    """
    x = np.stack([v.values for v in xs]) if not isinstance(xs, np.ndarray) else np.asarray(xs, dtype=float)
    if len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    cents = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = _sq_dists(x, np.array(cents)).min(1)
        total = d2.sum()
        if total <= 0:
            logger.warning("fewer distinct points than k=%d; duplicating centroids", k)
            cents.append(x[rng.integers(len(x))])
        else:
            cents.append(x[rng.choice(len(x), p=d2 / total)])
    c = np.array(cents)

    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, c)
        labels = d2.argmin(1)
        history.append(float(d2[np.arange(len(x)), labels].sum()))
        new = c.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(0)
        shift = float(np.sqrt(((new - c) ** 2).sum(1)).max())
        c = new
        if shift < tol:
            break
    inertia = float(_sq_dists(x, c).min(1).sum())
    history.append(inertia)
    return KMeansModel(c, inertia, tuple(history))


def nearest_centroid_distance(m: KMeansModel, x: np.ndarray | ClusterFeatures) -> float:
    if isinstance(x, ClusterFeatures):
        x = x.values
    x = np.asarray(x, dtype=float)
    if x.shape != m.centroids.shape[1:]:
        raise ValueError(f"feature dimension {x.shape} does not match centroids {m.centroids.shape}")
    return float(np.sqrt(((m.centroids - x) ** 2).sum(1)).min())


def nearest_centroid_distance_batch(m: KMeansModel, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances ``(B,)`` and their gradient ``(B, 10)`` wrt the features."""
    diff = f[:, None, :] - m.centroids[None]
    dist = np.sqrt((diff**2).sum(-1))
    j = dist.argmin(1)
    idx = np.arange(len(f))
    dmin = dist[idx, j]
    g = np.divide(diff[idx, j], dmin[:, None], out=np.zeros_like(f), where=dmin[:, None] > 0)
    return dmin, g
