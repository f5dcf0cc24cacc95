"""Mouse-event ingestion: parsing, cleaning, segmentation, normalization,
dataset reshuffling, augmentation, sequence representations and a seeded
synthetic-user generator.

Coordinates are held as float arrays. Raw sessions carry pixel values; after
:func:`normalize` they lie in ``[0, 1]``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ABS, DV, VEL = "ABS", "DV", "VEL"
REP_KINDS = (ABS, DV, VEL)

DEFAULT_GAP_S = 1.0
DEFAULT_MIN_LEN = 51
MINI_SESSION_GAP_S = 2 * 3600.0

CANDIDATE_RESOLUTIONS: tuple[tuple[int, int], ...] = (
    (640, 480),
    (800, 600),
    (1024, 768),
    (1280, 720),
    (1280, 1024),
    (1366, 768),
    (1440, 900),
    (1600, 900),
    (1680, 1050),
    (1920, 1080),
    (2560, 1440),
    (3840, 2160),
)


class EmptySessionError(ValueError):
    """A session yielded no usable movement events."""


class MouseEvent(NamedTuple):
    ts: float
    x: float
    y: float


@dataclass
class Trajectory:
    """Ordered mouse events of one session (or a piece of one).

    ``xy`` has shape ``(n, 2)``; ``ts`` has shape ``(n,)`` in seconds.
    ``meta`` carries bookkeeping such as parse skip counts, clamp counts,
    the dataset label and the resolution used for normalization.
    """

    ts: np.ndarray
    xy: np.ndarray
    user_id: str = ""
    session_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.ts = np.asarray(self.ts, dtype=float).reshape(-1)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(self.ts) != len(self.xy):
            raise ValueError(f"ts has {len(self.ts)} entries but xy has {len(self.xy)}")

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def events(self) -> list[MouseEvent]:
        return [MouseEvent(float(t), float(x), float(y)) for t, (x, y) in zip(self.ts, self.xy)]

    @classmethod
    def from_events(cls, events: Iterable[Sequence[float]], **kwargs) -> Trajectory:
        rows = [tuple(e) for e in events]
        if not rows:
            return cls(np.zeros(0), np.zeros((0, 2)), **kwargs)
        arr = np.asarray(rows, dtype=float)
        return cls(arr[:, 0], arr[:, 1:3], **kwargs)

    def with_data(self, ts: np.ndarray, xy: np.ndarray, **meta) -> Trajectory:
        return Trajectory(ts, xy, self.user_id, self.session_id, {**self.meta, **meta})

    @property
    def dataset(self) -> str:
        return self.meta.get("dataset", "")


@dataclass(frozen=True)
class Resolution:
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass
class RepSeq:
    """Fixed-length sequence in one of the ABS/DV/VEL representations.

    A window of ``seqlen + 1`` absolute points ``p_0..p_L`` is stored as
    ``origin = p_0``, ``t0`` its timestamp, ``dts[i] = t_{i+1} - t_i`` and
    ``points`` of length ``L``: ``p_1..p_L`` for ABS, ``p_{i+1} - p_i`` for
    DV and that difference divided by ``dts[i]`` for VEL.
    """

    kind: str
    points: np.ndarray
    dts: np.ndarray
    origin: np.ndarray
    t0: float = 0.0
    user_id: str = ""
    session_id: str = ""
    dataset: str = ""

    def __post_init__(self) -> None:
        if self.kind not in REP_KINDS:
            raise ValueError(f"unknown representation {self.kind!r}")
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.dts = np.asarray(self.dts, dtype=float).reshape(-1)
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        if len(self.points) != len(self.dts):
            raise ValueError("points and dts must have equal length")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class DatasetSplit:
    """Per-user disjoint parts: authenticator train/test and attacker-side
    train/test."""

    auth_train: list[Trajectory]
    auth_test: list[Trajectory]
    attacker_train: list[Trajectory]
    attacker_test: list[Trajectory]
    excluded_users: list[str] = field(default_factory=list)

    def parts(self) -> dict[str, list[Trajectory]]:
        return {
            "auth_train": self.auth_train,
            "auth_test": self.auth_test,
            "attacker_train": self.attacker_train,
            "attacker_test": self.attacker_test,
        }


PART_NAMES = ("auth_train", "auth_test", "attacker_train", "attacker_test")


# -- parsing -----------------------------------------------------------------


@dataclass(frozen=True)
class FieldMap:
    """Column mapping for a record-per-line mouse log.

    ``state`` names an optional event-type column; when set, only rows whose
    value is in ``keep_states`` are retained.
    """

    ts: str = "ts"
    x: str = "x"
    y: str = "y"
    state: str | None = None
    keep_states: tuple[str, ...] = ()


FORMATS: dict[str, FieldMap] = {
    "canonical": FieldMap(),
    "balabit": FieldMap(ts="timestamp", state="state", keep_states=("Move",)),
    # TWOS logs differ between releases; override through ``field_map``.
    "twos": FieldMap(ts="timestamp", state="event", keep_states=("move", "MouseMove", "Move")),
}

_HEADER_ALIASES = {
    "client timestamp": "timestamp",
    "record timestamp": "record_timestamp",
}


def parse_session(
    raw_text: str | Iterable[str],
    format: str = "canonical",
    *,
    field_map: FieldMap | None = None,
    user_id: str = "",
    session_id: str = "",
) -> Trajectory:
    """Parse a CSV mouse log into a trajectory of movement events.

    Malformed records are skipped; their count is stored in
    ``meta["skipped"]``. Rows filtered out by state (clicks, scrolls) are
    counted in ``meta["filtered"]``.

    Raises:
        EmptySessionError: if no movement event survives.
    """
    fmap = field_map or FORMATS[format]
    lines = raw_text.splitlines() if isinstance(raw_text, str) else list(raw_text)
    reader = csv.reader(line for line in lines if line.strip())
    try:
        header = next(reader)
    except StopIteration:
        raise EmptySessionError("no header line") from None
    header = [_HEADER_ALIASES.get(h.strip(), h.strip()) for h in header]
    try:
        its, ix, iy = header.index(fmap.ts), header.index(fmap.x), header.index(fmap.y)
    except ValueError:
        raise ValueError(f"header {header} lacks {fmap.ts}/{fmap.x}/{fmap.y}") from None
    istate = header.index(fmap.state) if fmap.state and fmap.state in header else None

    rows: list[tuple[float, float, float]] = []
    skipped = filtered = 0
    for rec in reader:
        try:
            if istate is not None and rec[istate].strip() not in fmap.keep_states:
                filtered += 1
                continue
            row = (float(rec[its]), float(rec[ix]), float(rec[iy]))
        except (IndexError, ValueError):
            skipped += 1
            continue
        if not all(math.isfinite(v) for v in row) or row[0] < 0:
            skipped += 1
            continue
        rows.append(row)
    if not rows:
        raise EmptySessionError(f"session {session_id!r}: no usable movement events")
    traj = Trajectory.from_events(rows, user_id=user_id, session_id=session_id)
    traj.meta.update(skipped=skipped, filtered=filtered)
    return traj


def write_session(t: Trajectory, path: str | Path) -> None:
    """Write ``t`` in the canonical ``ts,x,y`` layout (lossless float repr)."""
    buf = io.StringIO()
    buf.write("ts,x,y\n")
    for ts, (x, y) in zip(t.ts.tolist(), t.xy.tolist()):
        buf.write(f"{_num(ts)},{_num(x)},{_num(y)}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def load_dataset(root: str | Path, format: str = "canonical", dataset: str | None = None) -> list[Trajectory]:
    """Load ``<root>/<user_id>/<session_id>.csv`` files, sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} not found")
    label = dataset if dataset is not None else root.name
    out = []
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(user_dir.glob("*.csv")):
            try:
                t = parse_session(f.read_text(encoding="utf-8"), format, user_id=user_dir.name, session_id=f.stem)
            except EmptySessionError:
                logger.warning("skipping empty session %s", f)
                continue
            t.meta["dataset"] = label
            out.append(t)
    return out


def save_dataset(sessions: Iterable[Trajectory], root: str | Path) -> list[Path]:
    root = Path(root)
    paths = []
    for t in sessions:
        d = root / t.user_id
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"{t.session_id}.csv"
        write_session(t, p)
        paths.append(p)
    return paths


# -- cleaning and segmentation -------------------------------------------------


def clean(t: Trajectory) -> Trajectory:
    """Sort by time, then drop repeated events and events whose timestamp
    does not increase."""
    order = np.argsort(t.ts, kind="stable")
    ts, xy = t.ts[order], t.xy[order]
    keep = np.ones(len(ts), dtype=bool)
    last = -np.inf
    for i, v in enumerate(ts):
        if v > last:
            last = v
        else:
            keep[i] = False
    return t.with_data(ts[keep], xy[keep])


def split_at_gaps(t: Trajectory, gap_threshold: float = DEFAULT_GAP_S) -> list[Trajectory]:
    """Cut ``t`` wherever consecutive timestamps differ by more than
    ``gap_threshold``; concatenating the pieces gives back ``t``."""
    if len(t) == 0:
        return []
    cuts = np.flatnonzero(np.diff(t.ts) > gap_threshold) + 1
    bounds = [0, *cuts.tolist(), len(t)]
    return [
        Trajectory(t.ts[a:b], t.xy[a:b], t.user_id, f"{t.session_id}#{k}", dict(t.meta))
        for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def segment(t: Trajectory, gap_threshold: float = DEFAULT_GAP_S, min_len: int = DEFAULT_MIN_LEN) -> list[Trajectory]:
    return [s for s in split_at_gaps(t, gap_threshold) if len(s) >= min_len]


# -- resolution and normalization -----------------------------------------------


def estimate_resolution(
    ts: Iterable[Trajectory], candidates: Sequence[tuple[int, int]] = CANDIDATE_RESOLUTIONS
) -> Resolution:
    """Smallest-area candidate resolution covering every observed coordinate.

    Falls back to the observed maxima rounded up to a multiple of 8.
    """
    maxes = [t.xy.max(axis=0) for t in ts if len(t)]
    if not maxes:
        raise ValueError("cannot estimate a resolution without events")
    mx, my = np.max(maxes, axis=0)
    fits = [Resolution(w, h) for w, h in candidates if w >= mx and h >= my]
    if fits:
        return min(fits, key=lambda r: (r.area, r.width))
    return Resolution(int(math.ceil(mx / 8) * 8), int(math.ceil(my / 8) * 8))


def normalize(t: Trajectory, r: Resolution) -> Trajectory:
    if len(t) and (t.xy.min() < 0 or t.xy[:, 0].max() > r.width or t.xy[:, 1].max() > r.height):
        raise ValueError(f"coordinates of {t.session_id!r} exceed resolution {r.width}x{r.height}")
    scale = np.array([r.width, r.height], dtype=float)
    return t.with_data(t.ts.copy(), t.xy / scale, resolution=(r.width, r.height))


def denormalize(t: Trajectory, r: Resolution) -> Trajectory:
    scale = np.array([r.width, r.height], dtype=float)
    return t.with_data(t.ts.copy(), t.xy * scale)


# -- dataset reshuffling ------------------------------------------------------


def mini_sessions(t: Trajectory, gap: float = MINI_SESSION_GAP_S) -> list[Trajectory]:
    """Break a long session at idle gaps of at least ``gap`` seconds."""
    if len(t) < 2:
        return [t]
    cuts = np.flatnonzero(np.diff(t.ts) >= gap) + 1
    if len(cuts) == 0:
        return [t]
    bounds = [0, *cuts.tolist(), len(t)]
    return [
        Trajectory(t.ts[a:b], t.xy[a:b], t.user_id, f"{t.session_id}~{k}", dict(t.meta))
        for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def _train_test(items: list[Trajectory]) -> tuple[list[Trajectory], list[Trajectory]]:
    n = len(items)
    if n < 2:
        return list(items), []
    n_test = min(n - 1, max(1, int(round(0.2 * n))))
    return items[: n - n_test], items[n - n_test :]


def reshuffle_split(sessions: Iterable[Trajectory], seed: int) -> DatasetSplit:
    """Redistribute whole sessions into authenticator and attacker halves,
    each further split 80/20 into train and test, per user.

    Users with fewer than 4 sessions are broken into mini-sessions first;
    users still below 2 sessions are excluded.
    """
    by_user: dict[str, list[Trajectory]] = {}
    for s in sessions:
        by_user.setdefault(s.user_id, []).append(s)

    rng = np.random.default_rng(seed)
    split = DatasetSplit([], [], [], [])
    for user in sorted(by_user):
        items = sorted(by_user[user], key=lambda s: s.session_id)
        if len(items) < 4:
            items = [m for s in items for m in mini_sessions(s)]
        if len(items) < 2:
            logger.warning("excluding user %s: fewer than 2 sessions", user)
            split.excluded_users.append(user)
            continue
        if len(items) < 4:
            logger.warning("user %s has %d sessions; some split parts will lack this user", user, len(items))
        perm = rng.permutation(len(items))
        items = [items[i] for i in perm]
        half = (len(items) + 1) // 2
        auth_tr, auth_te = _train_test(items[:half])
        att_tr, att_te = _train_test(items[half:])
        split.auth_train += auth_tr
        split.auth_test += auth_te
        split.attacker_train += att_tr
        split.attacker_test += att_te
    return split


# -- augmentation -------------------------------------------------------------


def rotate(t: Trajectory, degrees: float) -> Trajectory:
    """Rotate about the centroid and clamp into ``[0, 1]``.

    ``meta["clamped"]`` counts the coordinates moved by the clamp.
    """
    if len(t) == 0:
        return t.with_data(t.ts.copy(), t.xy.copy(), clamped=0, rotation_deg=degrees)
    a = math.radians(degrees)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    c = t.xy.mean(axis=0)
    xy = (t.xy - c) @ rot.T + c
    clipped = np.clip(xy, 0.0, 1.0)
    n_clamped = int(np.count_nonzero(clipped != xy))
    return t.with_data(t.ts.copy(), clipped, clamped=n_clamped, rotation_deg=degrees)


def augment(t: Trajectory, n: int = 10, max_deg: float = 5.0, seed: int | np.random.Generator = 0) -> list[Trajectory]:
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-max_deg, max_deg, size=n)
    out = []
    for k, ang in enumerate(angles):
        r = rotate(t, float(ang))
        r.session_id = t.session_id
        r.meta["augment_index"] = k
        out.append(r)
    return out


# -- representations ----------------------------------------------------------


def to_rep(t: Trajectory, kind: str, seqlen: int) -> list[RepSeq]:
    """Cut ``t`` into non-overlapping windows of ``seqlen + 1`` events.

    Windows containing a zero time step are discarded for VEL.
    """
    if kind not in REP_KINDS:
        raise ValueError(f"unknown representation {kind!r}")
    w = seqlen + 1
    out = []
    for start in range(0, len(t) - w + 1, w):
        ts = t.ts[start : start + w]
        xy = t.xy[start : start + w]
        dts = np.diff(ts)
        if kind == VEL and np.any(dts <= 0):
            continue
        if kind == ABS:
            pts = xy[1:].copy()
        elif kind == DV:
            pts = np.diff(xy, axis=0)
        else:
            pts = np.diff(xy, axis=0) / dts[:, None]
        out.append(RepSeq(kind, pts, dts, xy[0].copy(), float(ts[0]), t.user_id, t.session_id, t.dataset))
    return out


def rep_positions(kind: str, points: np.ndarray, dts: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Absolute positions ``(L + 1, 2)`` from a representation."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    origin = np.asarray(origin, dtype=float).reshape(1, 2)
    if kind == ABS:
        return np.vstack([origin, points])
    steps = points if kind == DV else points * np.asarray(dts, dtype=float)[:, None]
    return np.vstack([origin, origin + np.cumsum(steps, axis=0)])


def from_rep(r: RepSeq) -> Trajectory:
    xy = rep_positions(r.kind, r.points, r.dts, r.origin)
    ts = r.t0 + np.concatenate([[0.0], np.cumsum(r.dts)])
    meta = {"dataset": r.dataset} if r.dataset else {}
    return Trajectory(ts, xy, r.user_id, r.session_id, meta)


def convert_rep(r: RepSeq, kind: str) -> RepSeq:
    t = from_rep(r)
    (out,) = to_rep(t, kind, len(r))
    return out


# -- synthetic users ----------------------------------------------------------


@dataclass(frozen=True)
class UserStyle:
    """Latent movement parameters of one synthetic user."""

    speed: float  # movement-speed multiplier
    curvature: float  # signed lateral bow as a fraction of the distance
    noise: float  # px, innovation scale of the AR(1) jitter
    noise_ar: float  # AR(1) coefficient of the jitter ("colour")
    pause_rate: float  # probability of a long idle pause between movements
    dt_mean: float  # seconds between events
    dt_jitter: float  # relative spread of the event interval
    direction: float  # preferred movement axis, radians
    anisotropy: float  # concentration of movement directions around that axis
    reach: float  # typical movement distance as a fraction of the screen width
    overshoot: float  # relative overshoot at the end of a movement
    resolution: tuple[int, int]


def draw_user_style(rng: np.random.Generator) -> UserStyle:
    res_choices = [(1920, 1080), (1680, 1050), (1440, 900), (1280, 1024), (2560, 1440)]
    return UserStyle(
        speed=float(rng.uniform(0.5, 2.0)),
        curvature=float(rng.uniform(-0.3, 0.3)),
        noise=float(rng.uniform(0.1, 1.0)),
        noise_ar=float(rng.uniform(0.0, 0.9)),
        pause_rate=float(rng.uniform(0.02, 0.15)),
        dt_mean=float(rng.uniform(0.007, 0.009)),
        dt_jitter=float(rng.uniform(0.05, 0.35)),
        direction=float(rng.uniform(0, math.pi)),
        anisotropy=float(rng.uniform(0.5, 3.0)),
        reach=float(rng.uniform(0.08, 0.4)),
        overshoot=float(rng.uniform(0.0, 0.12)),
        resolution=res_choices[int(rng.integers(len(res_choices)))],
    )


def _movement(
    style: UserStyle, rng: np.random.Generator, start: np.ndarray, target: np.ndarray, t0: float
) -> tuple[np.ndarray, np.ndarray]:
    dist = float(np.linalg.norm(target - start))
    duration = (0.15 + 0.15 * math.log2(1 + dist / 30)) / style.speed * rng.uniform(0.85, 1.15)
    n_dt = max(3, int(duration / style.dt_mean))
    dts = style.dt_mean * (1 + style.dt_jitter * rng.uniform(-1, 1, size=n_dt))
    ts = t0 + np.cumsum(dts)
    tau = (ts - t0) / (ts[-1] - t0)
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5  # minimum-jerk profile
    over = style.overshoot * np.sin(np.pi * tau) ** 2 * (tau > 0.5)
    d = target - start
    normal = np.array([-d[1], d[0]])
    bow = style.curvature * np.sin(np.pi * s)
    xy = start + np.outer(s + over, d) + np.outer(bow, normal)
    jitter = np.zeros((n_dt, 2))
    e = rng.normal(0, style.noise, size=(n_dt, 2))
    for i in range(n_dt):
        jitter[i] = (style.noise_ar * jitter[i - 1] if i else 0) + e[i]
    return ts, xy + jitter


def synth_session(style: UserStyle, rng: np.random.Generator, n_moves: int) -> tuple[np.ndarray, np.ndarray]:
    w, h = style.resolution
    size = np.array([w - 1, h - 1], dtype=float)
    pos = size * rng.uniform(0.2, 0.8, size=2)
    t = 0.0
    ts_parts, xy_parts = [], []
    for _ in range(n_moves):
        ang = style.direction + rng.vonmises(0.0, style.anisotropy) + (math.pi if rng.random() < 0.5 else 0.0)
        dist = w * style.reach * rng.lognormal(0.0, 0.35)
        target = pos + dist * np.array([math.cos(ang), math.sin(ang)])
        target = np.clip(target, 0.05 * size, 0.95 * size)
        if np.linalg.norm(target - pos) < 20:
            target = np.clip(pos + (size / 2 - pos) * 0.5, 0, size)
        ts, xy = _movement(style, rng, pos, target, t)
        ts_parts.append(ts)
        xy_parts.append(xy)
        pos = target
        t = float(ts[-1])
        t += rng.uniform(1.5, 4.0) if rng.random() < style.pause_rate else rng.uniform(0.05, 0.4)
    ts = np.concatenate(ts_parts)
    xy = np.clip(np.rint(np.concatenate(xy_parts)), 0, size)
    ts = np.round(ts, 6)
    # the device reports only polls where the pixel position changed
    moved = np.concatenate([[True], np.any(xy[1:] != xy[:-1], axis=1)])
    return ts[moved], xy[moved]


def synth_users(
    n_users: int,
    sessions_per_user: int,
    seed: int = 0,
    moves_per_session: int = 40,
    dataset: str = "synth",
) -> list[Trajectory]:
    """Seeded synthetic mouse sessions, one fixed movement style per user.

    Movements are minimum-jerk point-to-point arcs with a user-specific bow,
    overshoot, AR(1) jitter, polling interval and preferred direction. Pixel
    coordinates are integers; polls without a pixel change are not reported,
    so event intervals grow during slow motion. Timestamps are strictly
    increasing.
    """
    if n_users < 2:
        raise ValueError("need at least two users")
    root = np.random.default_rng(seed)
    user_seeds = root.integers(0, 2**63 - 1, size=n_users)
    out = []
    for u, us in enumerate(user_seeds):
        rng = np.random.default_rng(int(us))
        style = draw_user_style(rng)
        for s in range(sessions_per_user):
            ts, xy = synth_session(style, rng, moves_per_session)
            t = Trajectory(ts, xy, f"user{u:02d}", f"session{s:03d}", {"dataset": dataset})
            out.append(t)
    return out


def style_of(n_users: int, seed: int) -> list[UserStyle]:
    """The latent styles ``synth_users`` draws for the same seed."""
    root = np.random.default_rng(seed)
    return [draw_user_style(np.random.default_rng(int(s))) for s in root.integers(0, 2**63 - 1, size=n_users)]
