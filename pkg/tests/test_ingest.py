from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mouseadv import ingest
from mouseadv.ingest import ABS, DV, VEL, Resolution, Trajectory

BALABIT = """record timestamp,client timestamp,button,state,x,y
0.0,0.0,NoButton,Move,10,10
0.1,0.016,NoButton,Move,12,11
0.2,0.033,Left,Pressed,12,11
0.3,0.050,Left,Released,12,11
0.4,0.066,NoButton,Move,15,13
0.5,0.083,NoButton,Drag,16,13
0.6,0.100,NoButton,Move,18,14
"""


def _traj(pts, ts=None, **kw):
    pts = np.asarray(pts, dtype=float)
    ts = np.arange(len(pts), dtype=float) * 0.01 if ts is None else ts
    return Trajectory(ts, pts, **kw)


# -- parsing -----------------------------------------------------------------------


def test_parse_canonical():
    t = ingest.parse_session("ts,x,y\n0.0,10,10\n0.008,12,11")
    assert len(t) == 2
    assert t.events[1] == (0.008, 12.0, 11.0)


def test_parse_skips_malformed_line():
    t = ingest.parse_session("ts,x,y\n0.0,10,10\n0.01,abc,4\n0.02,3\n0.03,1,1\n")
    assert len(t) == 2
    assert t.meta["skipped"] == 2


def test_parse_balabit_keeps_move_rows_only():
    t = ingest.parse_session(BALABIT, "balabit")
    # line filter oracle
    moves = [ln for ln in BALABIT.splitlines()[1:] if ln.split(",")[3] == "Move"]
    assert len(t) == len(moves) == 4
    assert t.meta["filtered"] == 3
    np.testing.assert_allclose(t.ts, [float(ln.split(",")[1]) for ln in moves])


def test_parse_errors():
    with pytest.raises(ingest.EmptySessionError):
        ingest.parse_session("ts,x,y\n0,a,b\n")
    with pytest.raises(ingest.EmptySessionError):
        ingest.parse_session("")
    with pytest.raises(ValueError):
        ingest.parse_session("time,px,py\n0,1,1\n")


def test_dataset_roundtrip(tmp_path):
    ss = ingest.synth_users(2, 2, seed=3, moves_per_session=4)
    ingest.save_dataset(ss, tmp_path / "d")
    back = ingest.load_dataset(tmp_path / "d", dataset="synth")
    assert [(t.user_id, t.session_id) for t in back] == [(t.user_id, t.session_id) for t in ss]
    for a, b in zip(ss, back):
        np.testing.assert_array_equal(a.ts, b.ts)
        np.testing.assert_array_equal(a.xy, b.xy)
    with pytest.raises(FileNotFoundError):
        ingest.load_dataset(tmp_path / "nope")


# -- cleaning and segmentation ----------------------------------------------------------


def test_clean_examples():
    t = Trajectory.from_events([(0, 5, 5), (0, 5, 5), (1, 6, 6)])
    assert ingest.clean(t).events == [(0, 5, 5), (1, 6, 6)]
    c = ingest.clean(t)
    assert ingest.clean(c).events == c.events


def test_clean_removes_exactly_k_duplicates():
    rng = np.random.default_rng(0)
    base = _traj(rng.integers(0, 100, size=(200, 2)))
    dup_at = np.sort(rng.choice(200, 17, replace=False))
    idx = np.sort(np.concatenate([np.arange(200), dup_at]))
    t = Trajectory(base.ts[idx], base.xy[idx])
    # counting oracle: a duplicate is an event equal to its predecessor
    k = sum(1 for i in range(1, len(t)) if t.events[i] == t.events[i - 1])
    assert k == 17
    assert len(ingest.clean(t)) == len(t) - k


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 5), st.integers(0, 5)), max_size=40))
def test_clean_idempotent_and_strict(rows):
    t = Trajectory.from_events([(a / 10, x, y) for a, x, y in rows])
    c = ingest.clean(t)
    assert np.all(np.diff(c.ts) > 0)
    assert ingest.clean(c).events == c.events


def _scan_boundaries(ts, gap):
    out, start = [], 0
    for i in range(1, len(ts)):
        if ts[i] - ts[i - 1] > gap:
            out.append((start, i))
            start = i
    out.append((start, len(ts)))
    return out


def test_segment_examples():
    t = _traj(np.ones((60, 2)))
    (s,) = ingest.segment(t, 1.0, 1)
    np.testing.assert_array_equal(s.ts, t.ts)
    ts = np.concatenate([np.arange(60) * 0.01, 10.6 + np.arange(60) * 0.01])
    assert len(ingest.segment(_traj(np.ones((120, 2)), ts), 1.0, 51)) == 2


@pytest.mark.parametrize("seed", range(5))
def test_segment_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    dts = np.where(rng.random(300) < 0.05, rng.uniform(1.1, 5, 300), rng.uniform(0.005, 0.9, 300))
    ts = np.cumsum(dts)
    t = _traj(rng.random((300, 2)), ts)
    pieces = ingest.split_at_gaps(t, 1.0)
    got = []
    pos = 0
    for p in pieces:
        got.append((pos, pos + len(p)))
        pos += len(p)
    assert got == _scan_boundaries(ts, 1.0)
    np.testing.assert_array_equal(np.concatenate([p.ts for p in pieces]), ts)
    kept = ingest.segment(t, 1.0, 10)
    assert [len(p) for p in kept] == [b - a for a, b in got if b - a >= 10]


# -- resolution and normalization ---------------------------------------------------------


def _area_oracle(mx, my):
    best = None
    for w, h in ingest.CANDIDATE_RESOLUTIONS:
        if w >= mx and h >= my and (best is None or w * h < best[0] * best[1]):
            best = (w, h)
    return best


@pytest.mark.parametrize("mx,my", [(1900, 1060), (640, 480), (2100, 1200), (1300, 700), (1400, 1000)])
def test_estimate_resolution(mx, my):
    r = ingest.estimate_resolution([_traj([[0, 0], [mx, my]])])
    assert (r.width, r.height) == _area_oracle(mx, my)
    if (mx, my) == (2100, 1200):
        assert (r.width, r.height) == (2560, 1440)


def test_estimate_resolution_fallback_and_empty():
    r = ingest.estimate_resolution([_traj([[0, 0], [4000, 2170]])])
    assert (r.width, r.height) == (4000, 2176)
    with pytest.raises(ValueError):
        ingest.estimate_resolution([])


def test_normalize():
    r = Resolution(1920, 1080)
    t = _traj([[960, 540], [0, 0], [1919, 7]])
    n = ingest.normalize(t, r)
    np.testing.assert_allclose(n.xy[:2], [[0.5, 0.5], [0, 0]])
    np.testing.assert_array_equal(n.ts, t.ts)
    np.testing.assert_allclose(ingest.denormalize(n, r).xy, t.xy, atol=1e-9)
    with pytest.raises(ValueError):
        ingest.normalize(_traj([[1921, 5]]), r)


# -- reshuffling ---------------------------------------------------------------------


def _sessions(n_users, n_sessions):
    return [
        _traj(np.zeros((5, 2)), user_id=f"u{u}", session_id=f"s{s:02d}") for u in range(n_users) for s in range(n_sessions)
    ]


def test_reshuffle_split_sizes_and_determinism():
    sp = ingest.reshuffle_split(_sessions(2, 10), seed=4)
    for u in ("u0", "u1"):
        counts = [sum(t.user_id == u for t in part) for part in sp.parts().values()]
        assert counts == [4, 1, 4, 1]
    again = ingest.reshuffle_split(_sessions(2, 10), seed=4)
    key = lambda s: {k: [(t.user_id, t.session_id) for t in v] for k, v in s.parts().items()}  # noqa: E731
    assert key(sp) == key(again)
    assert key(sp) != key(ingest.reshuffle_split(_sessions(2, 10), seed=5))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 15), min_size=1, max_size=5), st.integers(0, 1000))
def test_reshuffle_split_disjoint_and_covering(per_user, seed):
    sessions = [
        _traj(np.zeros((3, 2)), user_id=f"u{u}", session_id=f"s{s}") for u, n in enumerate(per_user) for s in range(n)
    ]
    sp = ingest.reshuffle_split(sessions, seed)
    seen = {}
    for name, part in sp.parts().items():
        for t in part:
            key = (t.user_id, t.session_id)
            assert key not in seen, f"{key} in {seen.get(key)} and {name}"
            seen[key] = name
    assert set(seen) == {(t.user_id, t.session_id) for t in sessions}
    for u, n in enumerate(per_user):
        half_a = sum(t.user_id == f"u{u}" for t in sp.auth_train + sp.auth_test)
        assert abs(half_a - (n - half_a)) <= 1


def test_reshuffle_mini_sessions_and_exclusion():
    long = np.concatenate([np.arange(10) * 0.01, 7300 + np.arange(10) * 0.01, 14700 + np.arange(10) * 0.01])
    a = _traj(np.zeros((30, 2)), long, user_id="a", session_id="s0")
    b = _traj(np.zeros((10, 2)), user_id="b", session_id="s0")
    sp = ingest.reshuffle_split([a, b], seed=0)
    assert sp.excluded_users == ["b"]
    assert sum(len(p) for p in sp.parts().values()) == 3
    assert ingest.mini_sessions(a)[1].session_id == "s0~1"


# -- augmentation ---------------------------------------------------------------------------


def test_rotate_example_before_clamp():
    t = _traj([[0.0, 0.0], [1.0, 0.0]])
    r = ingest.rotate(t, 90.0)
    # about the centroid (0.5, 0): (0.5, -0.5) -> clamped to (0.5, 0)
    np.testing.assert_allclose(r.xy, [[0.5, 0.0], [0.5, 0.5]], atol=1e-12)
    assert r.meta["clamped"] == 1


def test_augment_zero_angle_is_identity():
    t = _traj(np.random.default_rng(0).uniform(0.2, 0.8, (20, 2)))
    for c in ingest.augment(t, n=4, max_deg=0.0):
        np.testing.assert_allclose(c.xy, t.xy, atol=1e-12)
        np.testing.assert_array_equal(c.ts, t.ts)


@pytest.mark.parametrize("seed", range(3))
def test_augment_preserves_speed_profile(seed):
    rng = np.random.default_rng(seed)
    t = _traj(0.5 + 0.05 * rng.normal(size=(50, 2)), np.cumsum(rng.uniform(0.005, 0.01, 50)))
    copies = ingest.augment(t, n=10, max_deg=5.0, seed=seed)
    assert len(copies) == 10
    speed = lambda x: np.hypot(*np.diff(x.xy, axis=0).T) / np.diff(x.ts)  # noqa: E731
    for c in copies:
        assert c.meta["clamped"] == 0
        assert abs(c.meta["rotation_deg"]) <= 5.0
        np.testing.assert_allclose(speed(c), speed(t), atol=1e-9)


# -- representations ---------------------------------------------------------------------------


def test_rep_examples():
    t = _traj([[0, 0], [1, 2], [3, 3]], np.array([0.0, 0.5, 1.0]))
    (dv,) = ingest.to_rep(t, DV, 2)
    np.testing.assert_allclose(dv.points, [[1, 2], [2, 1]])
    (vel,) = ingest.to_rep(t, VEL, 2)
    np.testing.assert_allclose(vel.points[0], [2, 4])
    (ab,) = ingest.to_rep(t, ABS, 2)
    np.testing.assert_allclose(ab.points, [[1, 2], [3, 3]])
    for r in (dv, vel, ab):
        np.testing.assert_allclose(ingest.from_rep(r).xy, t.xy, atol=1e-12)
        np.testing.assert_allclose(ingest.from_rep(r).ts, t.ts)


def test_to_rep_windows_and_zero_dt():
    t = _traj(np.random.default_rng(0).random((23, 2)))
    assert len(ingest.to_rep(t, DV, 5)) == 3
    ts = t.ts.copy()
    ts[3] = ts[2]
    z = Trajectory(ts, t.xy)
    assert len(ingest.to_rep(z, VEL, 5)) == 2
    assert len(ingest.to_rep(z, DV, 5)) == 3
    with pytest.raises(ValueError):
        ingest.to_rep(t, "ACC", 5)
    with pytest.raises(ValueError):
        ingest.RepSeq("DV", np.zeros((3, 2)), np.zeros(2), np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([ABS, DV, VEL]), st.integers(2, 12))
def test_rep_roundtrip(seed, kind, L):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(L + 1, 4 * (L + 1)))
    t = _traj(rng.random((n, 2)), np.cumsum(rng.uniform(0.001, 0.02, n)))
    reps = ingest.to_rep(t, kind, L)
    assert len(reps) == n // (L + 1)
    for k, r in enumerate(reps):
        assert len(r) == L
        back = ingest.from_rep(r)
        w = slice(k * (L + 1), (k + 1) * (L + 1))
        np.testing.assert_allclose(back.xy, t.xy[w], atol=1e-9)
        np.testing.assert_allclose(back.ts, t.ts[w], atol=1e-9)
        other = ingest.convert_rep(r, DV if kind != DV else VEL)
        np.testing.assert_allclose(ingest.from_rep(other).xy, t.xy[w], atol=1e-9)


def test_vel_is_dv_over_dt():
    rng = np.random.default_rng(2)
    t = _traj(rng.random((11, 2)), np.cumsum(rng.uniform(0.005, 0.01, 11)))
    (dv,) = ingest.to_rep(t, DV, 10)
    (vel,) = ingest.to_rep(t, VEL, 10)
    np.testing.assert_allclose(vel.points, dv.points / dv.dts[:, None])
    assert np.all(vel.dts > 0)


# -- synthetic users ---------------------------------------------------------------------------


def test_synth_deterministic_and_clean():
    a = ingest.synth_users(2, 2, seed=11, moves_per_session=10)
    b = ingest.synth_users(2, 2, seed=11, moves_per_session=10)
    for x, y in zip(a, b):
        assert x.ts.tobytes() == y.ts.tobytes() and x.xy.tobytes() == y.xy.tobytes()
    for t in a:
        c = ingest.clean(t)
        assert len(c) == len(t)
        assert np.all(np.diff(t.ts) > 0)
        assert np.all(t.xy == np.rint(t.xy))
    with pytest.raises(ValueError):
        ingest.synth_users(1, 2)


def test_synth_users_differ_in_mean_speed():
    # the slowest and the fastest latent user out of five
    styles = ingest.style_of(5, seed=0)
    order = np.argsort([s.speed for s in styles])
    users = [f"user{order[0]:02d}", f"user{order[-1]:02d}"]
    ss = ingest.synth_users(5, 30, seed=0)
    speeds = []
    for u in users:
        mine = [t for t in ss if t.user_id == u]
        res = ingest.estimate_resolution(mine)
        vals = [np.mean(np.hypot(*r.points.T)) for t in mine for r in ingest.to_rep(ingest.normalize(t, res), VEL, 50)]
        speeds.append(np.array(vals[:100]))
    a, b = speeds
    assert len(a) == len(b) == 100
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(a.mean() - b.mean()) >= 3 * se


def test_style_of_matches_synth_seed():
    styles = ingest.style_of(3, seed=5)
    assert len(styles) == 3 and len({s.speed for s in styles}) == 3
    assert all(0.007 <= s.dt_mean <= 0.009 for s in styles)
