"""Imitation-based attack: a stacked-GRU next-step generator trained with
teacher forcing on the victim's sequences, then rolled out closed-loop from
a start point or a start sequence.

The network works on per-dimension standardized inputs; the MSE is taken in
that standardized space and the regularizers in representation units.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import featkit
from ..featkit import KMeansModel
from ..gradcore import (
    AdamState,
    DenseParams,
    GruCellParams,
    Param,
    adam_step,
    clip_grad_norm,
    dense_backward,
    dense_forward,
    gru_backward,
    gru_cell_step,
    gru_forward,
    loss_eval,
    zero_grads,
)
from ..gradcore.checkpoint import checkpoint_dict, parse_checkpoint
from ..gradcore.losses import MSE
from ..ingest import ABS, DV, REP_KINDS, VEL, RepSeq, Trajectory, rep_positions

logger = logging.getLogger(__name__)

REG_NONE, REG_DERIVATIVE, REG_CLUSTER = "No", "Derivative", "Cluster"
REG_KINDS = (REG_NONE, REG_DERIVATIVE, REG_CLUSTER)


@dataclass(frozen=True)
class GeneratorConfig:
    rep_kind: str = DV
    reg_kind: str = REG_NONE
    seqlen: int = 50
    reg_weight: float = 0.1
    hidden: int = 128
    layers: int = 2

    def __post_init__(self) -> None:
        if self.rep_kind not in REP_KINDS:
            raise ValueError(f"unknown representation {self.rep_kind!r}")
        if self.reg_kind not in REG_KINDS:
            raise ValueError(f"unknown regularizer {self.reg_kind!r}")


@dataclass
class GenHyper:
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 64
    decay_every: int = 15
    decay_factor: float = 0.5
    clip_norm: float = 5.0


class GeneratorNet:
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        dims = [2] + [cfg.hidden] * cfg.layers
        self.layers = [GruCellParams.init(rng, dims[i], dims[i + 1]) for i in range(cfg.layers)]
        self.head = DenseParams.init(rng, cfg.hidden, 2)

    def params(self) -> dict[str, Param]:
        out: dict[str, Param] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"gru{i}."))
        out.update(self.head.params("head."))
        return out

    def forward(self, xs: np.ndarray) -> tuple[np.ndarray, tuple]:
        """``xs`` time-first ``(T, B, 2)`` standardized; returns predictions
        of the next step, same shape."""
        hs, gc = gru_forward(self.layers, xs)
        T, B, H = hs.shape
        y, dc = dense_forward(self.head, hs.reshape(T * B, H))
        return y.reshape(T, B, 2), (gc, dc, hs.shape)

    def backward(self, cache: tuple, dy: np.ndarray) -> None:
        gc, dc, shape = cache
        T, B, H = shape
        dh = dense_backward(self.head, dc, dy.reshape(T * B, 2))
        gru_backward(self.layers, gc, dh.reshape(T, B, H))

    def step(self, x: np.ndarray, hs: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
        """One closed-loop step for a batch ``(B, 2)``."""
        new = []
        inp = x
        for layer, h in zip(self.layers, hs):
            inp, _ = gru_cell_step(layer, inp, h)
            new.append(inp)
        y, _ = dense_forward(self.head, inp)
        return y, new

    def zero_state(self, batch: int) -> list[np.ndarray]:
        return [np.zeros((batch, self.cfg.hidden)) for _ in self.layers]


@dataclass
class GeneratorModel:
    net: GeneratorNet
    in_mean: np.ndarray
    in_scale: np.ndarray
    median_dt: float
    kmeans: KMeansModel | None = None
    derivative_target: np.ndarray | None = None
    history: list[float] = field(default_factory=list, repr=False)
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def cfg(self) -> GeneratorConfig:
        return self.net.cfg

    def scale_in(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean) / self.in_scale

    def scale_out(self, y: np.ndarray) -> np.ndarray:
        return y * self.in_scale + self.in_mean

    def to_checkpoint(self) -> dict:
        arch = {"kind": "generator", **asdict(self.cfg)}
        params = dict(self.net.params())
        params.update(in_mean=self.in_mean, in_scale=self.in_scale, median_dt=np.array([self.median_dt]))
        if self.kmeans is not None:
            params["kmeans_centroids"] = self.kmeans.centroids
        if self.derivative_target is not None:
            params["derivative_target"] = self.derivative_target
        return checkpoint_dict(arch, params)

    @classmethod
    def from_checkpoint(cls, d: dict) -> GeneratorModel:
        arch, p, _ = parse_checkpoint(d)
        arch.pop("kind")
        net = GeneratorNet(GeneratorConfig(**arch), np.random.default_rng(0))
        for k, v in net.params().items():
            v.values[...] = p[k]
        km = KMeansModel(p["kmeans_centroids"], 0.0) if "kmeans_centroids" in p else None
        return cls(net, p["in_mean"], p["in_scale"], float(p["median_dt"][0]), km, p.get("derivative_target"))


# -- regularizers ------------------------------------------------------------------


def _pred_velocity(kind: str, pred: np.ndarray, dts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Velocities implied by teacher-forced predictions.

    ``pred`` is ``(B, L-1, 2)`` in representation units, predicting points
    ``1..L-1`` whose time steps are ``dts[:, 1:]``. Returns velocities and
    their matching time steps.
    """
    if kind == VEL:
        return pred, dts[:, 1:]
    if kind == DV:
        return pred / dts[:, 1:, None], dts[:, 1:]
    return np.diff(pred, axis=1) / dts[:, 2:, None], dts[:, 2:]


def _pred_velocity_backward(kind: str, dvel: np.ndarray, dts: np.ndarray, shape: tuple) -> np.ndarray:
    if kind == VEL:
        return dvel
    if kind == DV:
        return dvel / dts[:, 1:, None]
    g = dvel / dts[:, 2:, None]
    dpred = np.zeros(shape)
    dpred[:, 1:] += g
    dpred[:, :-1] -= g
    return dpred


def derivative_series(kind: str, vel: np.ndarray, vdts: np.ndarray) -> np.ndarray:
    """Mean velocity (ABS, DV) or mean acceleration (VEL) per sequence."""
    if kind == VEL:
        return (np.diff(vel, axis=1) / vdts[:, 1:, None]).mean(1)
    return vel.mean(1)


def _derivative_backward(kind: str, g: np.ndarray, vel: np.ndarray, vdts: np.ndarray) -> np.ndarray:
    if kind == VEL:
        n = vel.shape[1] - 1
        ga = np.repeat(g[:, None, :] / n, n, axis=1) / vdts[:, 1:, None]
        dvel = np.zeros_like(vel)
        dvel[:, 1:] += ga
        dvel[:, :-1] -= ga
        return dvel
    return np.repeat(g[:, None, :] / vel.shape[1], vel.shape[1], axis=1)


def regularizer(model: GeneratorModel, pred: np.ndarray, dts: np.ndarray) -> tuple[float, np.ndarray]:
    """Regularization value and its gradient wrt ``pred`` (representation
    units, ``(B, L-1, 2)``)."""
    cfg = model.cfg
    if cfg.reg_kind == REG_NONE:
        return 0.0, np.zeros_like(pred)
    vel, vdts = _pred_velocity(cfg.rep_kind, pred, dts)
    B = len(pred)
    if cfg.reg_kind == REG_DERIVATIVE:
        m = derivative_series(cfg.rep_kind, vel, vdts)
        diff = m - model.derivative_target
        value = cfg.reg_weight * float((diff**2).sum(1).mean())
        g = cfg.reg_weight * 2 * diff / B
        dvel = _derivative_backward(cfg.rep_kind, g, vel, vdts)
    else:
        if model.kmeans is None:
            raise ValueError("cluster regularization needs a fitted k-means model")
        f, cache = featkit.cluster_features_batch(vel, vdts)
        dist, gf = featkit.nearest_centroid_distance_batch(model.kmeans, f)
        value = cfg.reg_weight * float(dist.mean())
        dvel = featkit.cluster_features_backward(cache, cfg.reg_weight * gf / B)
    return value, _pred_velocity_backward(cfg.rep_kind, dvel, dts, pred.shape)


# -- training -----------------------------------------------------------------------


def _stack(seqs: Sequence[RepSeq], kind: str) -> tuple[np.ndarray, np.ndarray]:
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"mixed sequence lengths {sorted(lengths)}")
    if any(s.kind != kind for s in seqs):
        raise ValueError(f"generator expects {kind} sequences")
    return np.stack([s.points for s in seqs]), np.stack([s.dts for s in seqs])


def teacher_forced(model: GeneratorModel, pts: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Predictions ``(B, L-1, 2)`` in standardized units from inputs
    ``pts[:, :-1]``."""
    xs = np.transpose(model.scale_in(pts[:, :-1]), (1, 0, 2))
    y, cache = model.net.forward(xs)
    return np.transpose(y, (1, 0, 2)), cache


def total_loss(model: GeneratorModel, pts: np.ndarray, dts: np.ndarray) -> tuple[float, float]:
    """(teacher-forced MSE, MSE + regularizer) over a data set."""
    mse_sum = reg_sum = 0.0
    n = len(pts)
    for i in range(0, n, 256):
        p, d = pts[i : i + 256], dts[i : i + 256]
        y, _ = teacher_forced(model, p)
        m, _ = loss_eval(MSE, y, model.scale_in(p[:, 1:]))
        r, _ = regularizer(model, model.scale_out(y), d)
        mse_sum += m * len(p)
        reg_sum += r * len(p)
    return mse_sum / n, (mse_sum + reg_sum) / n


def train_generator(
    user_seqs: Sequence[RepSeq],
    cfg: GeneratorConfig,
    hyper: GenHyper | None = None,
    seed: int = 0,
    kmeans: KMeansModel | None = None,
) -> GeneratorModel:
    """Teacher-forced next-step training on one user's sequences.

    ``history`` holds the full-data teacher-forced MSE before training and
    after every epoch; ``loss_history`` the same for MSE plus regularizer.
    """
    hyper = hyper or GenHyper()
    if not user_seqs:
        raise ValueError("no training sequences")
    if cfg.reg_kind == REG_CLUSTER and kmeans is None:
        raise ValueError("cluster regularization needs a fitted k-means model")
    pts, dts = _stack(user_seqs, cfg.rep_kind)
    rng = np.random.default_rng(seed)
    flat = pts.reshape(-1, 2)
    scale = flat.std(0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    model = GeneratorModel(
        GeneratorNet(cfg, rng),
        flat.mean(0),
        scale,
        float(np.median(dts)),
        kmeans=kmeans,
    )
    if cfg.reg_kind == REG_DERIVATIVE:
        vel, vdts = _pred_velocity(cfg.rep_kind, pts[:, 1:], dts)
        model.derivative_target = derivative_series(cfg.rep_kind, vel, vdts).mean(0)

    params = model.net.params()
    opt = AdamState(lr=hyper.lr, decay_every=hyper.decay_every, decay_factor=hyper.decay_factor)
    m0, l0 = total_loss(model, pts, dts)
    model.history.append(m0)
    model.loss_history.append(l0)
    for _ in range(hyper.epochs):
        order = rng.permutation(len(pts))
        for i in range(0, len(pts), hyper.batch_size):
            idx = order[i : i + hyper.batch_size]
            p, d = pts[idx], dts[idx]
            zero_grads(params)
            y, cache = teacher_forced(model, p)
            _, dy = loss_eval(MSE, y, model.scale_in(p[:, 1:]))
            if cfg.reg_kind != REG_NONE:
                _, dpred = regularizer(model, model.scale_out(y), d)
                dy = dy + dpred * model.in_scale
            model.net.backward(cache, np.transpose(dy, (1, 0, 2)))
            if hyper.clip_norm:
                clip_grad_norm(params, hyper.clip_norm)
            adam_step(opt, params)
        opt.end_epoch()
        m, l = total_loss(model, pts, dts)
        model.history.append(m)
        model.loss_history.append(l)
    return model


# -- generation ---------------------------------------------------------------------


def rollout(model: GeneratorModel, start: np.ndarray, steps: int) -> np.ndarray:
    """Closed-loop predictions ``(B, steps, 2)`` in representation units
    starting from ``start`` ``(B, 2)`` with a zero hidden state."""
    start = np.atleast_2d(np.asarray(start, dtype=float))
    B = len(start)
    hs = model.net.zero_state(B)
    x = model.scale_in(start)
    out = np.empty((B, steps, 2))
    for k in range(steps):
        y, hs = model.net.step(x, hs)
        out[:, k] = model.scale_out(y)
        x = y
    return out


def _to_trajectory(xy: np.ndarray, dt: float, **meta) -> Trajectory:
    clipped = np.clip(xy, 0.0, 1.0)
    n_clamped = int(np.count_nonzero(clipped != xy))
    return Trajectory(dt * np.arange(len(xy)), clipped, meta.pop("user_id", ""), meta.pop("session_id", "gen"), {**meta, "clamped": n_clamped})


def generate_start_point_batch(
    g: GeneratorModel,
    starts: np.ndarray,
    length: int,
    median_dt: float | None = None,
    origins: np.ndarray | None = None,
) -> list[Trajectory]:
    """Trajectories of ``length`` events from single start elements.

    For ABS the start is the first position. For DV/VEL it is the first
    step (or velocity) taken from ``origins`` (absolute positions).
    """
    kind = g.cfg.rep_kind
    dt = g.median_dt if median_dt is None else median_dt
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    B = len(starts)
    if kind != ABS and origins is None:
        raise ValueError(f"{kind} generation needs absolute origins")
    # ABS needs ``length`` elements, DV/VEL ``length - 1`` (positions follow from the origin)
    n_pts = length if kind == ABS else max(length - 1, 0)
    preds = rollout(g, starts, n_pts - 1) if n_pts > 1 else np.zeros((B, 0, 2))
    out = []
    for b in range(B):
        pts = np.vstack([starts[b : b + 1], preds[b]])[:n_pts]
        if kind == ABS:
            xy = pts
        else:
            xy = rep_positions(kind, pts, np.full(len(pts), dt), np.atleast_2d(origins)[b])
        out.append(_to_trajectory(xy, dt, attack="imitation", method="start_point", rep=kind))
    return out


def generate_start_point(
    g: GeneratorModel, start: np.ndarray, length: int, median_dt: float | None = None, origin: np.ndarray | None = None
) -> Trajectory:
    origins = None if origin is None else np.atleast_2d(origin)
    return generate_start_point_batch(g, np.atleast_2d(start), length, median_dt, origins)[0]


def continue_queue(g: GeneratorModel, seed_points: np.ndarray, steps: int) -> np.ndarray:
    """Queue-style continuation: each new element is the prediction at the end
    of the current window (run from a zero state); it is appended and the
    oldest element dropped. ``seed_points`` is ``(B, L, 2)``."""
    window = model_in = g.scale_in(np.asarray(seed_points, dtype=float))
    B, L, _ = window.shape
    out = np.empty((B, steps, 2))
    for k in range(steps):
        y, _ = g.net.forward(np.transpose(model_in, (1, 0, 2)))
        nxt = y[-1]
        out[:, k] = g.scale_out(nxt)
        model_in = np.concatenate([model_in[:, 1:], nxt[:, None]], axis=1)
    return out


def generate_start_sequence_batch(
    g: GeneratorModel, seed_seqs: Sequence[RepSeq], length: int, median_dt: float | None = None
) -> list[Trajectory]:
    """``length``-event continuations of recorded seed sequences."""
    kind = g.cfg.rep_kind
    for s in seed_seqs:
        if len(s) != g.cfg.seqlen:
            raise ValueError(f"seed sequence length {len(s)} != generator seqlen {g.cfg.seqlen}")
        if s.kind != kind:
            raise ValueError(f"seed sequence is {s.kind}, generator expects {kind}")
    dt = g.median_dt if median_dt is None else median_dt
    if length == 0:
        return [Trajectory(np.zeros(0), np.zeros((0, 2)), s.user_id, "gen") for s in seed_seqs]
    seeds = np.stack([s.points for s in seed_seqs])
    cont = continue_queue(g, seeds, length)
    out = []
    for s, c in zip(seed_seqs, cont):
        end = rep_positions(s.kind, s.points, s.dts, s.origin)[-1]
        xy = c if kind == ABS else rep_positions(kind, c, np.full(length, dt), end)[1:]
        out.append(_to_trajectory(xy, dt, attack="imitation", method="start_sequence", rep=kind))
    return out


def generate_start_sequence(g: GeneratorModel, seed_seq: RepSeq, length: int, median_dt: float | None = None) -> Trajectory:
    return generate_start_sequence_batch(g, [seed_seq], length, median_dt)[0]


def fit_cluster_kmeans(seqs: Sequence[RepSeq], k: int = 5, seed: int = 0) -> KMeansModel:
    """k-means on the 10 cluster features of sequences (of any users)."""
    feats = np.stack([featkit.cluster_features(s).values for s in seqs])
    return featkit.kmeans_fit(feats, k=k, seed=seed)
