"""Target authenticators: a linear SVM over engineered features and a 1D CNN
over velocity sequences, plus ROC/AUC/EER evaluation and EER-point
threshold calibration.

Every scoring model exposes ``score_trajectories`` (higher = more
legitimate), a ``threshold`` and ``decide``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import featkit
from .featkit import FeatureVector, Standardizer
from .gradcore import (
    AdamState,
    ConvParams,
    DenseParams,
    Param,
    adam_step,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    loss_eval,
    zero_grads,
)
from .gradcore.checkpoint import checkpoint_dict, parse_checkpoint
from .gradcore.losses import BCE, HINGE
from .ingest import VEL, RepSeq, Trajectory, to_rep

logger = logging.getLogger(__name__)


class ModalityError(TypeError):
    """Input type does not match what the model consumes."""


class NotCalibratedError(RuntimeError):
    pass


def balance_negatives(n_pos: int, n_neg: int, ratio: float | None, rng: np.random.Generator) -> np.ndarray:
    """Indices of negatives kept after downsampling to ``ratio * n_pos``."""
    if ratio is None or n_neg <= ratio * n_pos:
        return np.arange(n_neg)
    return np.sort(rng.choice(n_neg, int(ratio * n_pos), replace=False))


class _Decides:
    threshold: float | None

    def decide(self, scores: np.ndarray) -> np.ndarray:
        if self.threshold is None:
            raise NotCalibratedError(f"{type(self).__name__} has no calibrated threshold")
        return np.asarray(scores) >= self.threshold

    def accepts(self, samples: Sequence[Trajectory]) -> np.ndarray:
        return self.decide(self.score_trajectories(samples))

    def score_trajectories(self, samples: Sequence[Trajectory]) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


# -- SVM ------------------------------------------------------------------------


@dataclass
class SvmModel(_Decides):
    w: np.ndarray
    b: float
    standardizer: Standardizer
    threshold: float | None = None
    history: list[float] = field(default_factory=list, repr=False)

    kind = "SVM"

    def score_features(self, x: np.ndarray) -> np.ndarray:
        return self.standardizer.apply(x) @ self.w + self.b

    def score_trajectories(self, samples: Sequence[Trajectory]) -> np.ndarray:
        return self.score_features(featkit.feature_matrix(samples))

    def to_checkpoint(self) -> dict:
        arch = {"kind": self.kind, "n_features": len(self.w), "schema": featkit.SCHEMA_VERSION}
        params = {"w": self.w, "b": np.array([self.b]), "mean": self.standardizer.mean, "scale": self.standardizer.scale}
        return checkpoint_dict(arch, params, {"threshold": self.threshold})

    @classmethod
    def from_checkpoint(cls, d: dict) -> SvmModel:
        arch, p, cfg = parse_checkpoint(d)
        return cls(p["w"], float(p["b"][0]), Standardizer(p["mean"], p["scale"]), cfg.get("threshold"))


def svm_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, C: float) -> float:
    n = len(y)
    return float(np.maximum(0.0, 1 - y * (x @ w + b)).mean() + (w @ w) / (2 * C * n))


def train_svm(
    pos: np.ndarray,
    neg: np.ndarray,
    C: float = 1.0,
    epochs: int = 400,
    seed: int = 0,
    lr: float = 0.05,
    neg_ratio: float | None = 3.0,
) -> SvmModel:
    """Linear SVM by full-batch subgradient descent (Adam) on the primal

    ``mean(max(0, 1 - y (w.x + b))) + |w|^2 / (2 C n)``

    with features standardized on the training set. ``history`` holds the
    objective before every step.
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    neg = np.atleast_2d(np.asarray(neg, dtype=float))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("SVM training needs both positive and negative examples")
    rng = np.random.default_rng(seed)
    neg = neg[balance_negatives(len(pos), len(neg), neg_ratio, rng)]
    x_raw = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    std = featkit.standardize_fit(x_raw) if len(x_raw) >= 2 else Standardizer(np.zeros(x_raw.shape[1]), np.ones(x_raw.shape[1]))
    x = std.apply(x_raw)
    n = len(y)
    w = Param(np.zeros(x.shape[1]))
    b = Param(np.zeros(1))
    params = {"w": w, "b": b}
    opt = AdamState(lr=lr, decay_every=max(1, epochs // 4), decay_factor=0.5)
    history = []
    for _ in range(epochs):
        zero_grads(params)
        s = x @ w.values + b.values[0]
        loss, ds = loss_eval(HINGE, s, y)
        history.append(loss + float(w.values @ w.values) / (2 * C * n))
        w.grad += x.T @ ds + w.values / (C * n)
        b.grad += ds.sum()
        adam_step(opt, params)
        opt.end_epoch()
    history.append(svm_objective(w.values, float(b.values[0]), x, y, C))
    return SvmModel(w.values.copy(), float(b.values[0]), std, history=history)


# -- 1D CNN ---------------------------------------------------------------------


@dataclass(frozen=True)
class CnnArch:
    seqlen: int = 50
    channels1: int = 16
    channels2: int = 32
    kernel_a: int = 5
    stride_a: int = 1
    kernel_b: int = 10
    stride_b: int = 2
    kernel2: int = 3


@dataclass
class CnnHyper:
    lr: float = 3e-3
    epochs: int = 30
    batch_size: int = 64
    decay_every: int = 15
    decay_factor: float = 0.5
    neg_ratio: float | None = 3.0


class CnnNet:
    """Two first-layer branches at different time scales (kernel 5 / stride 1
    and kernel 10 / stride 2), a second conv layer whose weights are shared
    by both branches, ELU after every conv, global average pooling and a
    dense head producing one score."""

    def __init__(self, arch: CnnArch, rng: np.random.Generator, input_scale: float = 1.0):
        self.arch = arch
        self.input_scale = float(input_scale)
        self.branch_a = ConvParams.init(rng, 2, arch.channels1, arch.kernel_a, arch.stride_a)
        self.branch_b = ConvParams.init(rng, 2, arch.channels1, arch.kernel_b, arch.stride_b)
        self.shared = ConvParams.init(rng, arch.channels1, arch.channels2, arch.kernel2, 1)
        self.head = DenseParams.init(rng, arch.channels2, 1)

    def params(self) -> dict[str, Param]:
        return {
            **self.branch_a.params("branch_a."),
            **self.branch_b.params("branch_b."),
            **self.shared.params("shared."),
            **self.head.params("head."),
        }

    def forward(self, vel: np.ndarray) -> tuple[np.ndarray, tuple]:
        """``vel`` is ``(B, L, 2)``; returns scores ``(B,)``."""
        x = np.transpose(vel, (0, 2, 1)) / self.input_scale
        a, ca = conv1d_forward(self.branch_a, x, "elu")
        b, cb = conv1d_forward(self.branch_b, x, "elu")
        a2, ca2 = conv1d_forward(self.shared, a, "elu")
        b2, cb2 = conv1d_forward(self.shared, b, "elu")
        pooled = 0.5 * (a2.mean(2) + b2.mean(2))
        s, ch = dense_forward(self.head, pooled)
        return s[:, 0], (ca, cb, ca2, cb2, ch, a2.shape, b2.shape)

    def backward(self, cache: tuple, dscore: np.ndarray) -> np.ndarray:
        ca, cb, ca2, cb2, ch, sa, sb = cache
        dpool = dense_backward(self.head, ch, dscore[:, None])
        da2 = np.repeat((0.5 * dpool / sa[2])[:, :, None], sa[2], axis=2)
        db2 = np.repeat((0.5 * dpool / sb[2])[:, :, None], sb[2], axis=2)
        da = conv1d_backward(self.shared, ca2, da2)
        db = conv1d_backward(self.shared, cb2, db2)
        dx = conv1d_backward(self.branch_a, ca, da) + conv1d_backward(self.branch_b, cb, db)
        return np.transpose(dx, (0, 2, 1)) / self.input_scale

    def input_grad(self, vel: np.ndarray, dscore: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Scores and d(score)/d(vel) (param grads are discarded)."""
        s, cache = self.forward(vel)
        saved = {k: p.grad.copy() for k, p in self.params().items()}
        g = self.backward(cache, np.ones_like(s) if dscore is None else dscore)
        for k, p in self.params().items():
            p.grad[...] = saved[k]
        return s, g


@dataclass
class CnnModel(_Decides):
    net: CnnNet
    threshold: float | None = None
    history: list[float] = field(default_factory=list, repr=False)

    kind = "1DCNN"

    @property
    def seqlen(self) -> int:
        return self.net.arch.seqlen

    def score_vel(self, vel: np.ndarray) -> np.ndarray:
        vel = np.asarray(vel, dtype=float)
        if vel.ndim == 2:
            vel = vel[None]
        if len(vel) == 0:
            return np.zeros(0)
        return np.concatenate([self.net.forward(vel[i : i + 512])[0] for i in range(0, len(vel), 512)])

    def score_trajectories(self, samples: Sequence[Trajectory]) -> np.ndarray:
        return self.score_vel(vel_batch(samples, self.seqlen))

    def to_checkpoint(self) -> dict:
        arch = {"kind": self.kind, **asdict(self.net.arch), "input_scale": self.net.input_scale}
        return checkpoint_dict(arch, self.net.params(), {"threshold": self.threshold})

    @classmethod
    def from_checkpoint(cls, d: dict) -> CnnModel:
        arch, p, cfg = parse_checkpoint(d)
        arch.pop("kind")
        scale = arch.pop("input_scale")
        net = CnnNet(CnnArch(**arch), np.random.default_rng(0), scale)
        for k, v in net.params().items():
            v.values[...] = p[k]
        return cls(net, cfg.get("threshold"))


def vel_batch(samples: Sequence[Trajectory] | Sequence[RepSeq], seqlen: int) -> np.ndarray:
    """``(B, seqlen, 2)`` velocities from the first window of each sample."""
    out = []
    for s in samples:
        if isinstance(s, RepSeq):
            if s.kind != VEL:
                raise ModalityError(f"expected VEL sequences, got {s.kind}")
            out.append(s.points[:seqlen])
            continue
        reps = to_rep(s, VEL, seqlen)
        if not reps:
            raise ValueError(f"sample {s.session_id!r} has fewer than {seqlen + 1} usable events")
        out.append(reps[0].points)
    return np.stack(out) if out else np.zeros((0, seqlen, 2))


def _check_uniform(seqs: Sequence[RepSeq]) -> int:
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"mixed sequence lengths {sorted(lengths)}")
    if any(s.kind != VEL for s in seqs):
        raise ModalityError("CNN training expects VEL sequences")
    return lengths.pop()


def train_cnn(
    pos: Sequence[RepSeq],
    neg: Sequence[RepSeq],
    hyper: CnnHyper | None = None,
    seed: int = 0,
    arch: CnnArch | None = None,
) -> CnnModel:
    """Train the CNN with BCE on the sigmoid of its score (legitimate = 1)."""
    hyper = hyper or CnnHyper()
    if not pos or not neg:
        raise ValueError("CNN training needs both classes")
    L = _check_uniform(list(pos) + list(neg))
    arch = replace(arch or CnnArch(), seqlen=L)
    rng = np.random.default_rng(seed)
    neg = [neg[i] for i in balance_negatives(len(pos), len(neg), hyper.neg_ratio, rng)]
    x = np.stack([s.points for s in list(pos) + list(neg)])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    scale = float(np.std(x)) or 1.0
    net = CnnNet(arch, rng, input_scale=scale)
    params = net.params()
    opt = AdamState(lr=hyper.lr, decay_every=hyper.decay_every, decay_factor=hyper.decay_factor)
    history = [_bce(net, x, y)]
    for _ in range(hyper.epochs):
        order = rng.permutation(len(y))
        for i in range(0, len(y), hyper.batch_size):
            idx = order[i : i + hyper.batch_size]
            zero_grads(params)
            s, cache = net.forward(x[idx])
            _, ds = loss_eval(BCE, s, y[idx])
            net.backward(cache, ds)
            adam_step(opt, params)
        opt.end_epoch()
        history.append(_bce(net, x, y))
    return CnnModel(net, history=history)


def _bce(net: CnnNet, x: np.ndarray, y: np.ndarray) -> float:
    s = np.concatenate([net.forward(x[i : i + 512])[0] for i in range(0, len(x), 512)])
    return loss_eval(BCE, s, y)[0]


# -- generic scoring --------------------------------------------------------------


def score(model, x) -> float | np.ndarray:
    """Score one input in the model's own modality (or a trajectory)."""
    if isinstance(x, Trajectory):
        return float(model.score_trajectories([x])[0])
    if isinstance(model, SvmModel):
        if isinstance(x, RepSeq):
            raise ModalityError("the SVM scores feature vectors, not sequences")
        v = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
        out = model.score_features(v)
        return float(out) if np.ndim(out) == 0 else out
    if isinstance(model, CnnModel):
        if isinstance(x, FeatureVector):
            raise ModalityError("the CNN scores VEL sequences, not feature vectors")
        if isinstance(x, RepSeq):
            if x.kind != VEL:
                raise ModalityError(f"the CNN scores VEL sequences, got {x.kind}")
            x = x.points
        out = model.score_vel(np.asarray(x, dtype=float))
        return float(out[0]) if np.ndim(x) == 2 else out
    if hasattr(model, "score_trajectories"):
        raise ModalityError(f"{type(model).__name__} scores trajectories only")
    raise TypeError(f"not a scoring model: {type(model).__name__}")


# -- ROC --------------------------------------------------------------------------


@dataclass
class RocResult:
    auc: float
    eer: float
    threshold_at_eer: float
    roc_points: list[tuple[float, float, float]]

    def summary(self) -> dict:
        return {"auc": self.auc, "eer": self.eer, "threshold_at_eer": self.threshold_at_eer, "n_points": len(self.roc_points)}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for row in self.roc_points:
                w.writerow([repr(float(v)) for v in row])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2), encoding="utf-8")


def auc_pairs(pos: np.ndarray, neg: np.ndarray) -> float:
    """P(pos > neg) + P(tie) / 2 by explicit pair counting."""
    d = np.asarray(pos, dtype=float)[:, None] - np.asarray(neg, dtype=float)[None, :]
    return float(((d > 0).sum() + 0.5 * (d == 0).sum()) / d.size)


def average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(v, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return ranks


def auc_sweep(pos: np.ndarray, neg: np.ndarray) -> float:
    """Same quantity from a sorted sweep with tie-averaged ranks."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    ranks = average_ranks(np.concatenate([pos, neg]))
    n1, n0 = len(pos), len(neg)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    return float(u / (n1 * n0))


def roc_eval(pos_scores, neg_scores, pair_limit: int = 10_000) -> RocResult:
    pos = np.asarray(pos_scores, dtype=float).ravel()
    neg = np.asarray(neg_scores, dtype=float).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC evaluation needs both positive and negative scores")
    auc = auc_pairs(pos, neg) if len(pos) * len(neg) <= pair_limit else auc_sweep(pos, neg)

    thr = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = (len(pos) - np.searchsorted(pos_sorted, thr, side="left")) / len(pos)
    fpr = (len(neg) - np.searchsorted(neg_sorted, thr, side="left")) / len(neg)
    points = [(0.0, 0.0, float("inf"))] + list(zip(fpr.tolist(), tpr.tolist(), thr.tolist()))

    f = np.array([p[0] for p in points])
    fnr = 1 - np.array([p[1] for p in points])
    gap = f - fnr  # non-decreasing along the curve
    best = int(np.argmin(np.abs(gap)))
    k = int(np.searchsorted(gap, 0.0, side="left"))
    if k < len(gap) and gap[k] == 0:
        eer = float(f[k])
    elif 0 < k < len(gap):
        lam = -gap[k - 1] / (gap[k] - gap[k - 1])
        eer = float(f[k - 1] + lam * (f[k] - f[k - 1]))
    else:
        eer = float(0.5 * (f[best] + fnr[best]))
    t_eer = points[best][2]
    if not np.isfinite(t_eer):
        t_eer = float(thr[0])
    return RocResult(auc, eer, float(t_eer), points)


def calibrate_threshold(model, val_pos, val_neg):
    """Copy of ``model`` thresholded at the validation EER point.

    ``val_pos``/``val_neg`` are trajectories, or precomputed score arrays.
    """
    ps = _scores(model, val_pos)
    ns = _scores(model, val_neg)
    r = roc_eval(ps, ns)
    out = replace(model, threshold=r.threshold_at_eer)
    return out


def _scores(model, xs) -> np.ndarray:
    if isinstance(xs, np.ndarray) and xs.dtype.kind == "f":
        return xs
    return model.score_trajectories(list(xs))


def evaluate(model, pos: Sequence[Trajectory], neg: Sequence[Trajectory]) -> RocResult:
    return roc_eval(model.score_trajectories(pos), model.score_trajectories(neg))


def load_model(d: dict):
    kind = d["arch"]["kind"]
    if kind == SvmModel.kind:
        return SvmModel.from_checkpoint(d)
    if kind == CnnModel.kind:
        return CnnModel.from_checkpoint(d)
    raise ValueError(f"unknown model kind {kind!r}")
