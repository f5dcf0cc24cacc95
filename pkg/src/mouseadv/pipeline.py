"""Experiment plumbing shared by the CLI and the acceptance suite: dataset
preparation into fixed-length windows and per-user authenticator training
with validation-based calibration."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import auth, featkit, ingest
from .ingest import VEL, DatasetSplit, Trajectory

logger = logging.getLogger(__name__)


@dataclass
class PrepConfig:
    seqlen: int = 50
    gap_threshold: float = ingest.DEFAULT_GAP_S
    augment_n: int = 10
    augment_deg: float = 5.0
    val_frac: float = 0.2


@dataclass
class Prepared:
    """Normalized windows of ``seqlen + 1`` events for each split part.

    ``augmented`` holds the rotated copies (plus originals) of the two
    training parts.
    """

    config: PrepConfig
    parts: dict[str, list[Trajectory]]
    augmented: dict[str, list[Trajectory]]
    users: list[str]
    split: DatasetSplit | None = field(default=None, repr=False)
    normalized: dict[str, list[Trajectory]] = field(default_factory=dict, repr=False)

    def of_user(self, part: str, user: str, augmented: bool = False) -> list[Trajectory]:
        src = self.augmented[part] if augmented else self.parts[part]
        return [t for t in src if t.user_id == user]

    def of_others(self, part: str, user: str, augmented: bool = False) -> list[Trajectory]:
        src = self.augmented[part] if augmented else self.parts[part]
        return [t for t in src if t.user_id != user]

    def counts(self) -> dict:
        out = {}
        for name, items in self.parts.items():
            per_user: dict[str, int] = {}
            for t in items:
                per_user[t.user_id] = per_user.get(t.user_id, 0) + 1
            out[name] = per_user
        return out


def windows(t: Trajectory, seqlen: int) -> list[Trajectory]:
    """Non-overlapping windows of ``seqlen + 1`` events."""
    w = seqlen + 1
    return [
        Trajectory(t.ts[i : i + w], t.xy[i : i + w], t.user_id, t.session_id, {**t.meta, "window": i // w})
        for i in range(0, len(t) - w + 1, w)
    ]


def part_windows(sessions: Sequence[Trajectory], cfg: PrepConfig) -> list[Trajectory]:
    out = []
    for s in sessions:
        for seg in ingest.segment(s, cfg.gap_threshold, cfg.seqlen + 1):
            out += windows(seg, cfg.seqlen)
    return out


def prepare(sessions: Sequence[Trajectory], seed: int = 0, cfg: PrepConfig | None = None) -> Prepared:
    """Clean, split per user, normalize by each user's estimated
    resolution, cut into windows and augment the two training parts."""
    cfg = cfg or PrepConfig()
    cleaned = [ingest.clean(s) for s in sessions]
    by_user: dict[str, list[Trajectory]] = {}
    for s in cleaned:
        by_user.setdefault(s.user_id, []).append(s)
    resolutions = {u: ingest.estimate_resolution(ss) for u, ss in by_user.items()}
    split = ingest.reshuffle_split(cleaned, seed)
    normalized = {
        name: [ingest.normalize(s, resolutions[s.user_id]) for s in items] for name, items in split.parts().items()
    }
    return from_normalized(normalized, seed, cfg, split)


def from_normalized(
    normalized: dict[str, list[Trajectory]], seed: int, cfg: PrepConfig, split: DatasetSplit | None = None
) -> Prepared:
    parts = {name: part_windows(items, cfg) for name, items in normalized.items()}
    rng = np.random.default_rng(seed + 1)
    augmented = {}
    for name in ("auth_train", "attacker_train"):
        aug = []
        for w in parts[name]:
            aug.append(w)
            if cfg.augment_n:
                aug += ingest.augment(w, cfg.augment_n, cfg.augment_deg, rng)
        augmented[name] = aug
    users = sorted({t.user_id for t in parts["auth_train"]})
    return Prepared(cfg, parts, augmented, users, split, normalized)


PREP_FORMAT = "mouseadv-prep"


def manifest_of(p: Prepared, seed: int, dataset: str = "") -> dict:
    def per_user(items: Sequence[Trajectory]) -> dict[str, int]:
        out: dict[str, int] = {}
        for t in items:
            out[t.user_id] = out.get(t.user_id, 0) + 1
        return dict(sorted(out.items()))

    return {
        "format": PREP_FORMAT,
        "version": 1,
        "dataset": dataset,
        "seed": seed,
        "config": asdict(p.config),
        "users": p.users,
        "excluded_users": sorted(p.split.excluded_users) if p.split else [],
        "sessions": {k: per_user(v) for k, v in p.normalized.items()},
        "windows": {k: per_user(v) for k, v in p.parts.items()},
        "augmented": {k: per_user(v) for k, v in p.augmented.items()},
    }


def save_prepared(p: Prepared, out: str | Path, seed: int, dataset: str = "") -> dict:
    """Normalized split sessions as canonical CSV under ``<out>/<part>/``,
    augmented windows as ``<out>/augmented/<part>/<user>.npz`` and a
    ``manifest.json`` with counts, config and seed."""
    out = Path(out)
    for part, sessions in p.normalized.items():
        ingest.save_dataset(sessions, out / part)
    for part, items in p.augmented.items():
        d = out / "augmented" / part
        d.mkdir(parents=True, exist_ok=True)
        for user in sorted({t.user_id for t in items}):
            mine = [t for t in items if t.user_id == user]
            np.savez(
                d / f"{user}.npz",
                ts=np.stack([t.ts for t in mine]),
                xy=np.stack([t.xy for t in mine]),
                session=np.array([t.session_id for t in mine]),
            )
    manifest = manifest_of(p, seed, dataset)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_prepared(root: str | Path) -> Prepared:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no prepared dataset at {root} (manifest.json missing)")
    m = json.loads(mpath.read_text(encoding="utf-8"))
    if m.get("format") != PREP_FORMAT:
        raise ValueError(f"{mpath} is not a prepared-dataset manifest")
    cfg = PrepConfig(**m["config"])
    normalized = {}
    for part in ingest.PART_NAMES:
        d = root / part
        normalized[part] = ingest.load_dataset(d, dataset=m.get("dataset") or root.name) if d.is_dir() else []
    parts = {name: part_windows(items, cfg) for name, items in normalized.items()}
    augmented = {}
    for part in ("auth_train", "attacker_train"):
        items = []
        for f in sorted((root / "augmented" / part).glob("*.npz")):
            z = np.load(f)
            items += [Trajectory(t, xy, f.stem, str(s)) for t, xy, s in zip(z["ts"], z["xy"], z["session"])]
        augmented[part] = items
    return Prepared(cfg, parts, augmented, list(m["users"]), None, normalized)


def split_validation(items: Sequence[Trajectory], frac: float) -> tuple[list[Trajectory], list[Trajectory]]:
    """Hold out whole sessions (last ``frac`` of sessions in id order)."""
    sessions = sorted({t.session_id for t in items})
    n_val = max(1, int(round(frac * len(sessions)))) if len(sessions) > 1 else 0
    val_ids = set(sessions[len(sessions) - n_val :])
    fit = [t for t in items if t.session_id not in val_ids]
    val = [t for t in items if t.session_id in val_ids]
    if not val:
        val = list(fit)
    return fit, val


def _with_augmented(p: Prepared, part: str, keep: Sequence[Trajectory]) -> list[Trajectory]:
    ids = {(t.user_id, t.session_id) for t in keep}
    return [t for t in p.augmented[part] if (t.user_id, t.session_id) in ids]


@dataclass
class UserAuth:
    user: str
    model: object
    roc: auth.RocResult
    val_roc: auth.RocResult


def train_user_authenticator(
    p: Prepared,
    user: str,
    kind: str,
    seed: int = 0,
    part: str = "auth_train",
    cnn_hyper: auth.CnnHyper | None = None,
    svm_epochs: int = 400,
    evaluate_on: str | None = "auth_test",
) -> UserAuth:
    """Fit ``kind`` ("SVM" or "1DCNN") for ``user`` on ``part``, calibrate it
    at the EER point on held-out sessions of the same part, and evaluate on
    ``evaluate_on``."""
    pos_fit, pos_val = split_validation(p.of_user(part, user), p.config.val_frac)
    neg_all = p.of_others(part, user)
    neg_fit, neg_val = [], []
    for other in sorted({t.user_id for t in neg_all}):
        f, v = split_validation([t for t in neg_all if t.user_id == other], p.config.val_frac)
        neg_fit += f
        neg_val += v
    pos_train = _with_augmented(p, part, pos_fit)
    neg_train = _with_augmented(p, part, neg_fit)
    if kind == "SVM":
        model = auth.train_svm(
            featkit.feature_matrix(pos_train), featkit.feature_matrix(neg_train), epochs=svm_epochs, seed=seed
        )
    elif kind == "1DCNN":
        L = p.config.seqlen
        pos_r = [r for t in pos_train for r in ingest.to_rep(t, VEL, L)]
        neg_r = [r for t in neg_train for r in ingest.to_rep(t, VEL, L)]
        model = auth.train_cnn(pos_r, neg_r, cnn_hyper, seed=seed)
    else:
        raise ValueError(f"unknown authenticator {kind!r}")
    model = auth.calibrate_threshold(model, pos_val, neg_val)
    val_roc = auth.evaluate(model, pos_val, neg_val)
    roc = val_roc
    if evaluate_on:
        roc = auth.evaluate(model, p.of_user(evaluate_on, user), p.of_others(evaluate_on, user))
    return UserAuth(user, model, roc, val_roc)


# -- attack runs ---------------------------------------------------------------------
#
# Attacker-side material always comes from the attacker parts of the split:
# the victim's ``attacker_train`` windows (generator / surrogate training,
# statistics, start points) and other users' ``attacker_test`` windows
# (arbitrary sequences to perturb). Surrogate negatives come from a
# different dataset.


def attacker_reps(p: Prepared, user: str, kind: str, augmented: bool = False) -> list[ingest.RepSeq]:
    L = p.config.seqlen
    return [r for t in p.of_user("attacker_train", user, augmented) for r in ingest.to_rep(t, kind, L)]


def perturbation_seeds(p: Prepared, user: str, n: int | None = None, seed: int = 0) -> list[ingest.RepSeq]:
    L = p.config.seqlen
    seqs = [r for t in p.of_others("attacker_test", user) for r in ingest.to_rep(t, VEL, L)]
    if n is not None and len(seqs) > n:
        idx = np.sort(np.random.default_rng(seed).permutation(len(seqs))[:n])
        seqs = [seqs[i] for i in idx]
    return seqs


def cross_negatives(other: Prepared, seqlen: int) -> list[ingest.RepSeq]:
    return [r for t in other.parts["attacker_train"] for r in ingest.to_rep(t, VEL, seqlen)]


def run_stats_attack(p: Prepared, user: str, n: int = 1000, seed: int = 0, **profile_kw) -> list[Trajectory]:
    from .attacks import stats

    prof = stats.build_stats_profile(p.of_user("attacker_train", user), **profile_kw)
    rng = np.random.default_rng(seed)
    L = p.config.seqlen + 1
    return [stats.sample_stats_sequence(prof, L, rng, user, f"stats{i:05d}") for i in range(n)]


def run_imitation_attack(
    p: Prepared,
    user: str,
    cfg=None,
    n: int = 1000,
    seed: int = 0,
    method: str = "start_point",
    hyper=None,
    kmeans_pool: Sequence[ingest.RepSeq] | None = None,
):
    """Train a generator on the victim's attacker-side windows and produce
    ``n`` trajectories of ``seqlen + 1`` events. Returns (samples, model)."""
    from .attacks import imitation as im

    cfg = cfg or im.GeneratorConfig(seqlen=p.config.seqlen)
    if cfg.seqlen != p.config.seqlen:
        raise ValueError(f"generator seqlen {cfg.seqlen} != prepared seqlen {p.config.seqlen}")
    reps = attacker_reps(p, user, cfg.rep_kind)
    if not reps:
        raise ValueError(f"user {user!r} has no attacker-side windows")
    km = None
    if cfg.reg_kind == im.REG_CLUSTER:
        pool = kmeans_pool if kmeans_pool is not None else reps
        km = im.fit_cluster_kmeans([ingest.convert_rep(r, VEL) if r.kind != VEL else r for r in pool], seed=seed)
    g = im.train_generator(reps, cfg, hyper, seed=seed, kmeans=km)
    rng = np.random.default_rng(seed + 1)
    idx = rng.integers(0, len(reps), size=n)
    L = p.config.seqlen + 1
    if method == "start_point":
        out = im.generate_start_point_batch(
            g, np.stack([reps[i].points[0] for i in idx]), L, origins=np.stack([reps[i].origin for i in idx])
        )
    elif method == "start_sequence":
        out = im.generate_start_sequence_batch(g, [reps[i] for i in idx], L)
    else:
        raise ValueError(f"unknown generation method {method!r}")
    for i, t in enumerate(out):
        t.user_id = user
        t.session_id = f"imit{i:05d}"
    return out, g


def run_surrogate_attack(
    p: Prepared,
    other: Prepared,
    user: str,
    arch: str,
    n: int = 1000,
    seed: int = 0,
    fgsm=None,
    hyper=None,
):
    """Train a surrogate (victim's attacker-side windows vs. cross-dataset
    negatives) and perturb other users' attacker-side windows.

    Returns (adversarial VEL sequences, surrogate, trace)."""
    from .attacks import surrogate as su

    L = p.config.seqlen
    pos = attacker_reps(p, user, VEL, augmented=True)
    neg = cross_negatives(other, L)
    s = su.train_surrogate(pos, neg, arch, hyper, seed=seed, trained_on={"user": user})
    cfg = fgsm or su.FgsmConfig.from_data(pos)
    adv, trace = su.fgsm_many(s, perturbation_seeds(p, user, n, seed), cfg)
    return adv, s, trace
