"""Surrogate-based attack: a locally trained stand-in classifier plus
iterative sign-gradient ascent on its legitimate-class log-probability.

Every surrogate consumes VEL sequences ``(B, L, 2)`` and exposes
``logp_grad(vel, dts, origins)`` returning ``log p_legit`` and its input
gradient. Scalar-score models map a score ``s`` to the two logits
``(0, s)``, so ``log p_legit = -softplus(-s)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import auth, featkit
from ..gradcore import (
    AdamState,
    DenseParams,
    GruCellParams,
    NonFiniteGradientError,
    Param,
    adam_step,
    clip_grad_norm,
    dense_backward,
    dense_forward,
    gru_backward,
    gru_forward,
    loss_eval,
    sigmoid,
    zero_grads,
)
from ..gradcore.losses import CE2
from ..ingest import VEL, RepSeq

logger = logging.getLogger(__name__)

GRU_RNN, FC, CNN_LIKE, SVM_LIKE, LINEAR = "GRU-RNN", "FC", "CNN-like", "SVM-like", "linear"
ARCHS = (GRU_RNN, FC, CNN_LIKE, SVM_LIKE, LINEAR)
TARGET_TO_SURROGATE = {"SVM": SVM_LIKE, "1DCNN": CNN_LIKE}


def log_sigmoid(s: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -s)


def _log_softmax_legit(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``log p`` of class 1 and its gradient wrt the two logits."""
    m = logits.max(1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(1))
    p = np.exp(logits - lse[:, None])
    g = -p
    g[:, 1] += 1.0
    return logits[:, 1] - lse, g


# -- networks -----------------------------------------------------------------------


class GruSurrogateNet:
    """Three stacked GRU layers, then dense + ReLU and dense to two logits
    read from the final hidden state."""

    def __init__(self, rng: np.random.Generator, hidden: int = 100, layers: int = 3, scale: np.ndarray | None = None):
        dims = [2] + [hidden] * layers
        self.layers = [GruCellParams.init(rng, dims[i], dims[i + 1]) for i in range(layers)]
        self.fc1 = DenseParams.init(rng, hidden, hidden)
        self.fc2 = DenseParams.init(rng, hidden, 2)
        self.scale = np.ones(2) if scale is None else np.asarray(scale, dtype=float)

    def params(self) -> dict[str, Param]:
        out: dict[str, Param] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"gru{i}."))
        out.update(self.fc1.params("fc1."))
        out.update(self.fc2.params("fc2."))
        return out

    def forward(self, vel: np.ndarray) -> tuple[np.ndarray, tuple]:
        xs = np.transpose(vel / self.scale, (1, 0, 2))
        hs, gc = gru_forward(self.layers, xs)
        h1, c1 = dense_forward(self.fc1, hs[-1], "relu")
        y, c2 = dense_forward(self.fc2, h1)
        return y, (gc, c1, c2, hs.shape)

    def backward(self, cache: tuple, dlogits: np.ndarray) -> np.ndarray:
        gc, c1, c2, shape = cache
        dh1 = dense_backward(self.fc2, c2, dlogits)
        dlast = dense_backward(self.fc1, c1, dh1)
        dhs = np.zeros(shape)
        dhs[-1] = dlast
        dxs, _ = gru_backward(self.layers, gc, dhs)
        return np.transpose(dxs, (1, 0, 2)) / self.scale


class FcSurrogateNet:
    """Flattened interleaved (x0, y0, x1, y1, ...) input, dense + ELU, dense to
    two logits."""

    def __init__(self, rng: np.random.Generator, seqlen: int, hidden: int = 100, scale: np.ndarray | None = None):
        self.seqlen = seqlen
        self.fc1 = DenseParams.init(rng, 2 * seqlen, hidden)
        self.fc2 = DenseParams.init(rng, hidden, 2)
        self.scale = np.ones(2) if scale is None else np.asarray(scale, dtype=float)

    def params(self) -> dict[str, Param]:
        return {**self.fc1.params("fc1."), **self.fc2.params("fc2.")}

    def forward(self, vel: np.ndarray) -> tuple[np.ndarray, tuple]:
        x = (vel / self.scale).reshape(len(vel), -1)
        h, c1 = dense_forward(self.fc1, x, "elu")
        y, c2 = dense_forward(self.fc2, h)
        return y, (c1, c2, vel.shape)

    def backward(self, cache: tuple, dlogits: np.ndarray) -> np.ndarray:
        c1, c2, shape = cache
        dh = dense_backward(self.fc2, c2, dlogits)
        dx = dense_backward(self.fc1, c1, dh)
        return dx.reshape(shape) / self.scale


class LinearSurrogateNet:
    """Two logits ``(0, <w, vel> + b)``; used as a closed-form reference."""

    def __init__(self, w: np.ndarray, b: float = 0.0):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)

    def params(self) -> dict[str, Param]:
        return {}

    def forward(self, vel: np.ndarray) -> tuple[np.ndarray, tuple]:
        s = np.einsum("blc,lc->b", vel, self.w) + self.b
        return np.stack([np.zeros_like(s), s], axis=1), (len(vel),)

    def backward(self, cache: tuple, dlogits: np.ndarray) -> np.ndarray:
        return dlogits[:, 1, None, None] * self.w[None]


# -- model wrapper ------------------------------------------------------------------


@dataclass
class SurrogateModel:
    arch: str
    net: object
    seqlen: int
    trained_on: dict = field(default_factory=dict)
    heldout_accuracy: float | None = None
    history: list[float] = field(default_factory=list, repr=False)
    fd_step: float = 1e-4
    # SVM-like input gradient: central differences, or the exact backward
    # through the feature pipeline (same gradient wherever it exists, far cheaper)
    svm_gradient: str = "finite-difference"

    def logits(self, vel: np.ndarray, dts: np.ndarray | None = None, origins: np.ndarray | None = None) -> np.ndarray:
        """Two logits per sequence (class 1 = legitimate)."""
        vel = np.asarray(vel, dtype=float)
        if self.arch == CNN_LIKE:
            s = self.net.score_vel(vel)
        elif self.arch == SVM_LIKE:
            s = self._svm_score(vel, dts, origins)
        else:
            return np.concatenate([self.net.forward(vel[i : i + 512])[0] for i in range(0, len(vel), 512)] or [np.zeros((0, 2))])
        return np.stack([np.zeros_like(s), s], axis=1)

    def logp(self, vel: np.ndarray, dts: np.ndarray | None = None, origins: np.ndarray | None = None) -> np.ndarray:
        return _log_softmax_legit(self.logits(vel, dts, origins))[0]

    def decide(self, vel: np.ndarray, dts: np.ndarray | None = None, origins: np.ndarray | None = None) -> np.ndarray:
        """Legitimate when ``p_legit >= 0.5``."""
        return self.logp(vel, dts, origins) >= np.log(0.5)

    def logp_grad(
        self, vel: np.ndarray, dts: np.ndarray | None = None, origins: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        vel = np.asarray(vel, dtype=float)
        if self.arch == CNN_LIKE:
            s, g = self.net.net.input_grad(vel)
            return log_sigmoid(s), sigmoid(-s)[:, None, None] * g
        if self.arch == SVM_LIKE:
            if self.svm_gradient == "analytic":
                return self._svm_analytic(vel, dts, origins)
            if self.svm_gradient != "finite-difference":
                raise ValueError(f"unknown SVM-like gradient mode {self.svm_gradient!r}")
            return self._svm_fd(vel, dts, origins)
        y, cache = self.net.forward(vel)
        lp, gl = _log_softmax_legit(y)
        return lp, self.net.backward(cache, gl)

    # SVM-like: the target's feature pipeline, differentiated numerically

    @staticmethod
    def _positions(vel: np.ndarray, dts: np.ndarray, origins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if dts is None or origins is None:
            raise ValueError("the SVM-like surrogate needs time steps and origins")
        B = len(vel)
        steps = vel * dts[..., None]
        xy = np.concatenate([origins[:, None, :], origins[:, None, :] + np.cumsum(steps, axis=1)], axis=1)
        ts = np.concatenate([np.zeros((B, 1)), np.cumsum(dts, axis=1)], axis=1)
        return ts, xy

    def _svm_score(self, vel: np.ndarray, dts: np.ndarray, origins: np.ndarray) -> np.ndarray:
        ts, xy = self._positions(vel, dts, origins)
        return self.net.score_features(featkit.extract_features_batch(ts, xy))

    def _svm_analytic(self, vel: np.ndarray, dts: np.ndarray, origins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ts, xy = self._positions(vel, dts, origins)
        s = self.net.score_features(featkit.extract_features_batch(ts, xy))
        dfeat = sigmoid(-s)[:, None] * (self.net.w / self.net.standardizer.scale)[None]
        dxy = featkit.extract_features_backward(ts, xy, dfeat)
        # position j + 1 accumulates vel[i] * dts[i] for every i <= j
        tail = np.cumsum(dxy[:, :0:-1], axis=1)[:, ::-1]
        return log_sigmoid(s), tail * dts[..., None]

    def _svm_fd(self, vel: np.ndarray, dts: np.ndarray, origins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Central differences of ``log p`` wrt every coordinate; all
        perturbed copies of a sequence are scored in one batch."""
        B, L, C = vel.shape
        n = L * C
        h = self.fd_step
        lp = log_sigmoid(self._svm_score(vel, dts, origins))
        grad = np.empty_like(vel)
        eye = np.eye(n).reshape(n, L, C) * h
        for b in range(B):
            pert = np.concatenate([vel[b][None] + eye, vel[b][None] - eye])
            d = np.repeat(dts[b][None], 2 * n, axis=0)
            o = np.repeat(origins[b][None], 2 * n, axis=0)
            f = log_sigmoid(self._svm_score(pert, d, o))
            grad[b] = ((f[:n] - f[n:]) / (2 * h)).reshape(L, C)
        return lp, grad


@dataclass
class SurHyper:
    lr: float = 3e-3
    epochs: int = 60
    batch_size: int = 64
    decay_every: int = 10
    decay_factor: float = 0.5
    clip_norm: float = 5.0
    holdout: float = 0.2
    hidden: int = 100
    neg_ratio: float | None = 3.0
    svm_epochs: int = 400
    svm_gradient: str = "finite-difference"


def _holdout_split(n: int, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    k = int(round(frac * n)) if n > 1 else 0
    return order[k:], order[:k]


def _as_vel(seqs: Sequence[RepSeq]) -> np.ndarray:
    if any(s.kind != VEL for s in seqs):
        raise auth.ModalityError("surrogates consume VEL sequences")
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"mixed sequence lengths {sorted(lengths)}")
    return np.stack([s.points for s in seqs])


def train_surrogate(
    pos: Sequence[RepSeq],
    neg: Sequence[RepSeq],
    arch: str,
    hyper: SurHyper | None = None,
    seed: int = 0,
    trained_on: dict | None = None,
) -> SurrogateModel:
    """Fit a surrogate (legitimate = ``pos``) and report held-out accuracy
    on a seeded ``hyper.holdout`` fraction of each class."""
    hyper = hyper or SurHyper()
    if arch not in ARCHS or arch == LINEAR:
        raise ValueError(f"unknown surrogate architecture {arch!r}")
    if not pos or not neg:
        raise ValueError("surrogate training needs both classes")
    rng = np.random.default_rng(seed)
    neg = [neg[i] for i in auth.balance_negatives(len(pos), len(neg), hyper.neg_ratio, rng)]
    pos_fit, pos_ho = _holdout_split(len(pos), hyper.holdout, rng)
    neg_fit, neg_ho = _holdout_split(len(neg), hyper.holdout, rng)
    fit_p, fit_n = [pos[i] for i in pos_fit], [neg[i] for i in neg_fit]
    ho = [pos[i] for i in pos_ho] + [neg[i] for i in neg_ho]
    ho_y = np.concatenate([np.ones(len(pos_ho)), np.zeros(len(neg_ho))])
    L = len(pos[0])
    desc = dict(trained_on or {}, n_pos=len(fit_p), n_neg=len(fit_n))

    if arch == CNN_LIKE:
        ch = auth.CnnHyper(hyper.lr, hyper.epochs, hyper.batch_size, hyper.decay_every, hyper.decay_factor, None)
        cnn = auth.train_cnn(fit_p, fit_n, ch, seed=seed)
        model = SurrogateModel(arch, cnn, L, desc, history=cnn.history)
    elif arch == SVM_LIKE:
        from ..ingest import from_rep

        feats = lambda ss: featkit.feature_matrix([from_rep(s) for s in ss])  # noqa: E731
        svm = auth.train_svm(feats(fit_p), feats(fit_n), epochs=hyper.svm_epochs, seed=seed, neg_ratio=None)
        model = SurrogateModel(arch, svm, L, desc, history=svm.history, svm_gradient=hyper.svm_gradient)
    else:
        x = _as_vel(list(fit_p) + list(fit_n))
        y = np.concatenate([np.ones(len(fit_p)), np.zeros(len(fit_n))]).astype(int)
        scale = x.reshape(-1, 2).std(0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        net = GruSurrogateNet(rng, hyper.hidden, scale=scale) if arch == GRU_RNN else FcSurrogateNet(rng, L, hyper.hidden, scale)
        model = SurrogateModel(arch, net, L, desc)
        _fit_logits(model, x, y, hyper, rng)

    if len(ho):
        vel = _as_vel(ho)
        dts = np.stack([s.dts for s in ho])
        origins = np.stack([s.origin for s in ho])
        model.heldout_accuracy = float(np.mean(model.decide(vel, dts, origins) == (ho_y == 1)))
    return model


def _fit_logits(model: SurrogateModel, x: np.ndarray, y: np.ndarray, hyper: SurHyper, rng: np.random.Generator) -> None:
    net = model.net
    params = net.params()
    opt = AdamState(lr=hyper.lr, decay_every=hyper.decay_every, decay_factor=hyper.decay_factor)
    model.history.append(loss_eval(CE2, model.logits(x), y)[0])
    for _ in range(hyper.epochs):
        order = rng.permutation(len(y))
        for i in range(0, len(y), hyper.batch_size):
            idx = order[i : i + hyper.batch_size]
            zero_grads(params)
            out, cache = net.forward(x[idx])
            _, d = loss_eval(CE2, out, y[idx])
            net.backward(cache, d)
            if hyper.clip_norm and model.arch == GRU_RNN:
                clip_grad_norm(params, hyper.clip_norm)
            adam_step(opt, params)
        opt.end_epoch()
        model.history.append(loss_eval(CE2, model.logits(x), y)[0])


# -- FGSM ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.001
    iterations: int = 300
    lo: tuple[float, float] | None = None
    hi: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")

    @classmethod
    def from_data(cls, seqs: Sequence[RepSeq], **kw) -> FgsmConfig:
        """Clamp bounds at the observed per-dimension min/max of ``seqs``."""
        v = np.concatenate([s.points for s in seqs])
        return cls(lo=tuple(v.min(0)), hi=tuple(v.max(0)), **kw)


@dataclass
class FgsmTrace:
    logp: np.ndarray  # (iterations + 1, B)
    clamped: np.ndarray  # (iterations, B) clamp binding at that step
    linf: np.ndarray  # (iterations + 1, B) ||z_k - z_0||_inf


def fgsm_batch(
    s: SurrogateModel, vel: np.ndarray, cfg: FgsmConfig, dts: np.ndarray | None = None, origins: np.ndarray | None = None
) -> tuple[np.ndarray, FgsmTrace]:
    """``z <- clamp(z + eps * sign(grad log p_legit(z)))`` for every sequence
    in the batch, ``cfg.iterations`` times.

    The clamp box is widened per coordinate to contain ``z0``, so the
    perturbation never exceeds ``k * eps`` after ``k`` steps.
    """
    z0 = np.asarray(vel, dtype=float)
    z = z0.copy()
    lo = -np.inf if cfg.lo is None else np.asarray(cfg.lo, dtype=float)
    hi = np.inf if cfg.hi is None else np.asarray(cfg.hi, dtype=float)
    # a seed already outside the box keeps its own values as the bound
    lo, hi = np.minimum(lo, z0), np.maximum(hi, z0)
    B = len(z)
    logps = np.empty((cfg.iterations + 1, B))
    clamped = np.zeros((cfg.iterations, B), dtype=bool)
    linf = np.zeros((cfg.iterations + 1, B))
    for k in range(cfg.iterations):
        lp, g = s.logp_grad(z, dts, origins)
        if not np.all(np.isfinite(g)):
            bad = np.unique(np.nonzero(~np.isfinite(g))[0])
            raise NonFiniteGradientError(f"non-finite input gradient at iteration {k} for sequences {bad.tolist()}")
        logps[k] = lp
        stepped = z + cfg.epsilon * np.sign(g)
        z = np.clip(stepped, lo, hi)
        clamped[k] = np.any(z != stepped, axis=(1, 2))
        linf[k + 1] = np.abs(z - z0).max(axis=(1, 2)) if z.size else 0.0
    logps[-1] = s.logp(z, dts, origins)
    return z, FgsmTrace(logps, clamped, linf)


def fgsm_attack(s: SurrogateModel, z0: RepSeq, cfg: FgsmConfig) -> RepSeq:
    if z0.kind != VEL:
        raise auth.ModalityError("FGSM perturbs VEL sequences")
    z, _ = fgsm_batch(s, z0.points[None], cfg, z0.dts[None], z0.origin[None])
    return RepSeq(VEL, z[0], z0.dts.copy(), z0.origin.copy(), z0.t0, z0.user_id, z0.session_id, z0.dataset)


def fgsm_many(s: SurrogateModel, seqs: Sequence[RepSeq], cfg: FgsmConfig, chunk: int = 256) -> tuple[list[RepSeq], FgsmTrace]:
    """Attack a collection in chunks; returns the perturbed sequences and
    the concatenated trace."""
    out: list[RepSeq] = []
    traces = []
    for i in range(0, len(seqs), chunk):
        part = seqs[i : i + chunk]
        vel = _as_vel(part)
        z, tr = fgsm_batch(s, vel, cfg, np.stack([r.dts for r in part]), np.stack([r.origin for r in part]))
        traces.append(tr)
        out += [RepSeq(VEL, zz, r.dts.copy(), r.origin.copy(), r.t0, r.user_id, r.session_id, r.dataset) for zz, r in zip(z, part)]
    if not traces:
        e = np.zeros((cfg.iterations + 1, 0))
        return out, FgsmTrace(e, np.zeros((cfg.iterations, 0), dtype=bool), e)
    return out, FgsmTrace(*(np.concatenate([getattr(t, f) for t in traces], axis=1) for f in ("logp", "clamped", "linf")))


def matched_surrogate_attack(
    target_arch: str,
    pos: Sequence[RepSeq],
    neg: Sequence[RepSeq],
    seeds: Sequence[RepSeq],
    cfg: FgsmConfig,
    hyper: SurHyper | None = None,
    seed: int = 0,
) -> tuple[list[RepSeq], SurrogateModel]:
    """Train a surrogate sharing the target's architecture on attacker data
    and perturb ``seeds`` against it."""
    if target_arch not in TARGET_TO_SURROGATE:
        raise ValueError(f"no matched surrogate for target {target_arch!r}")
    s = train_surrogate(pos, neg, TARGET_TO_SURROGATE[target_arch], hyper, seed, {"matched": target_arch})
    adv, _ = fgsm_many(s, seeds, cfg)
    return adv, s
