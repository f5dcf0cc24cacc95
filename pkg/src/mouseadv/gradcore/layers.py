"""Forward/backward kernels for the layers used by every model here.

Conventions: batch-first for dense and conv (``(B, D)``, ``(B, C, T)``),
time-first for recurrent stacks (``(T, B, D)``). Weight matrices map
``x @ W.T``. Backward functions accumulate into ``Param.grad`` and return
the gradient wrt their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class Param:
    values: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        if self.grad.shape != self.values.shape:
            raise ValueError(f"grad shape {self.grad.shape} != value shape {self.values.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Param:
    bound = 1.0 / np.sqrt(fan_in)
    return Param(rng.uniform(-bound, bound, size=shape))


def zeros(shape: tuple[int, ...]) -> Param:
    return Param(np.zeros(shape))


# -- activations ----------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * np.tanh(0.5 * np.asarray(x, dtype=float)) + 0.5


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def elu(x: np.ndarray) -> np.ndarray:
    # exp(x) - 1 instead of expm1: faster, and the cancellation error is ~1e-16
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.exp(np.minimum(x, 0.0)) - 1.0


def activation_forward(kind: str | None, x: np.ndarray) -> np.ndarray:
    if kind is None:
        return x
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str | None, x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient through an activation given its input ``x`` and output ``y``."""
    if kind is None:
        return dy
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "tanh":
        return dy * (1 - y * y)
    if kind == "relu":
        return dy * (x > 0)
    if kind == "elu":
        return dy * np.where(x > 0, 1.0, y + 1.0)
    raise ValueError(f"unknown activation {kind!r}")


# -- dense ----------------------------------------------------------------------


@dataclass
class DenseParams:
    W: Param
    b: Param

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int) -> DenseParams:
        return cls(uniform_init(rng, (n_out, n_in), n_in), zeros((n_out,)))

    def params(self, prefix: str = "") -> dict[str, Param]:
        return {f"{prefix}W": self.W, f"{prefix}b": self.b}


def dense_forward(p: DenseParams, x: np.ndarray, activation: str | None = None) -> tuple[np.ndarray, tuple]:
    if x.shape[-1] != p.W.shape[1]:
        raise ValueError(f"dense input dim {x.shape[-1]} != {p.W.shape[1]}")
    a = x @ p.W.values.T + p.b.values
    y = activation_forward(activation, a)
    return y, (x, a, y, activation)


def dense_backward(p: DenseParams, cache: tuple, dy: np.ndarray) -> np.ndarray:
    x, a, y, activation = cache
    da = activation_backward(activation, a, y, dy)
    x2 = x.reshape(-1, x.shape[-1])
    da2 = da.reshape(-1, da.shape[-1])
    p.W.grad += da2.T @ x2
    p.b.grad += da2.sum(0)
    return da @ p.W.values


# -- conv1d ---------------------------------------------------------------------


@dataclass
class ConvParams:
    W: Param  # (out_ch, in_ch, kernel)
    b: Param  # (out_ch,)
    stride: int = 1

    @classmethod
    def init(cls, rng: np.random.Generator, in_ch: int, out_ch: int, kernel: int, stride: int = 1) -> ConvParams:
        return cls(uniform_init(rng, (out_ch, in_ch, kernel), in_ch * kernel), zeros((out_ch,)), stride)

    @property
    def kernel(self) -> int:
        return self.W.shape[2]

    def params(self, prefix: str = "") -> dict[str, Param]:
        return {f"{prefix}W": self.W, f"{prefix}b": self.b}


def conv1d_forward(p: ConvParams, x: np.ndarray, activation: str | None = None) -> tuple[np.ndarray, tuple]:
    """Valid cross-correlation along time: ``(B, C, T) -> (B, O, T')`` with
    ``T' = (T - K) // stride + 1``."""
    B, C, T = x.shape
    O, Cw, K = p.W.shape
    if C != Cw:
        raise ValueError(f"conv input channels {C} != {Cw}")
    if T < K:
        raise ValueError(f"sequence length {T} shorter than kernel {K}")
    cols = sliding_window_view(x, K, axis=2)[:, :, :: p.stride, :]  # (B, C, T', K)
    Bc, Cc, Tn, Kc = cols.shape
    flat = cols.transpose(0, 2, 1, 3).reshape(Bc * Tn, Cc * Kc)
    a = (flat @ p.W.values.reshape(O, C * K).T).reshape(Bc, Tn, O).transpose(0, 2, 1) + p.b.values[None, :, None]
    y = activation_forward(activation, a)
    return y, (x.shape, flat, a, y, activation)


def conv1d_backward(p: ConvParams, cache: tuple, dy: np.ndarray) -> np.ndarray:
    xshape, flat, a, y, activation = cache
    da = activation_backward(activation, a, y, dy)
    B, O, n_out = da.shape
    _, C, K = p.W.shape
    da2 = da.transpose(0, 2, 1).reshape(B * n_out, O)
    p.W.grad += (da2.T @ flat).reshape(O, C, K)
    p.b.grad += da.sum((0, 2))
    dcols = (da2 @ p.W.values.reshape(O, C * K)).reshape(B, n_out, C, K).transpose(0, 2, 1, 3)
    dx = np.zeros(xshape)
    s = p.stride
    for k in range(p.kernel):
        dx[:, :, k : k + s * (n_out - 1) + 1 : s] += dcols[..., k]
    return dx


def conv1d_output_length(T: int, kernel: int, stride: int) -> int:
    return (T - kernel) // stride + 1


# -- GRU ------------------------------------------------------------------------


@dataclass
class GruCellParams:
    """GRU cell weights, stored gate-stacked in (reset, update, new) order.

    ``W_i`` is ``(3H, D)``, ``W_h`` is ``(3H, H)``; the twelve named
    matrices and biases are views into these.
    """

    W_i: Param
    W_h: Param
    b_i: Param
    b_h: Param

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden: int) -> GruCellParams:
        return cls(
            uniform_init(rng, (3 * hidden, input_dim), input_dim),
            uniform_init(rng, (3 * hidden, hidden), hidden),
            zeros((3 * hidden,)),
            zeros((3 * hidden,)),
        )

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1]

    def _gate(self, p: Param, k: int) -> np.ndarray:
        H = self.hidden
        return p.values[k * H : (k + 1) * H]

    W_ir = property(lambda s: s._gate(s.W_i, 0))
    W_iz = property(lambda s: s._gate(s.W_i, 1))
    W_in = property(lambda s: s._gate(s.W_i, 2))
    W_hr = property(lambda s: s._gate(s.W_h, 0))
    W_hz = property(lambda s: s._gate(s.W_h, 1))
    W_hn = property(lambda s: s._gate(s.W_h, 2))
    b_ir = property(lambda s: s._gate(s.b_i, 0))
    b_iz = property(lambda s: s._gate(s.b_i, 1))
    b_in = property(lambda s: s._gate(s.b_i, 2))
    b_hr = property(lambda s: s._gate(s.b_h, 0))
    b_hz = property(lambda s: s._gate(s.b_h, 1))
    b_hn = property(lambda s: s._gate(s.b_h, 2))

    def params(self, prefix: str = "") -> dict[str, Param]:
        return {f"{prefix}W_i": self.W_i, f"{prefix}W_h": self.W_h, f"{prefix}b_i": self.b_i, f"{prefix}b_h": self.b_h}


def _gru_gates(p: GruCellParams, gi: np.ndarray, h_prev: np.ndarray):
    H = p.hidden
    gh = h_prev @ p.W_h.values.T + p.b_h.values
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    n = np.tanh(gi[:, 2 * H :] + r * gh[:, 2 * H :])
    h = (1 - z) * n + z * h_prev
    return h, (h_prev, r, z, n, gh[:, 2 * H :])


def gru_cell_step(p: GruCellParams, x_t: np.ndarray, h_prev: np.ndarray) -> tuple[np.ndarray, tuple]:
    """One GRU step. Accepts unbatched vectors or ``(B, D)`` / ``(B, H)``."""
    single = x_t.ndim == 1
    x = np.atleast_2d(x_t)
    h_prev = np.atleast_2d(h_prev)
    if x.shape[1] != p.input_dim or h_prev.shape[1] != p.hidden:
        raise ValueError(f"GRU expects input {p.input_dim} / hidden {p.hidden}, got {x.shape[1]} / {h_prev.shape[1]}")
    gi = x @ p.W_i.values.T + p.b_i.values
    h, cache = _gru_gates(p, gi, h_prev)
    return (h[0] if single else h), (x, cache)


def gru_cell_backward(p: GruCellParams, cache: tuple, dh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward of :func:`gru_cell_step`; returns ``(dx, dh_prev)``."""
    x, step_cache = cache
    dgi, dh_prev = _gru_step_backward(p, step_cache, np.atleast_2d(dh))
    p.W_i.grad += dgi.T @ x
    p.b_i.grad += dgi.sum(0)
    return dgi @ p.W_i.values, dh_prev


def _gru_step_backward(p: GruCellParams, step_cache: tuple, dh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Through the gates of one step: returns grad wrt the input projection
    ``gi`` and wrt ``h_prev``; accumulates the hidden-to-hidden grads."""
    h_prev, r, z, n, ghn = step_cache
    dn = dh * (1 - z)
    dz = dh * (h_prev - n)
    dan = dn * (1 - n * n)
    dr = dan * ghn
    dar = dr * r * (1 - r)
    daz = dz * z * (1 - z)
    dgi = np.concatenate([dar, daz, dan], axis=1)
    dgh = np.concatenate([dar, daz, dan * r], axis=1)
    p.W_h.grad += dgh.T @ h_prev
    p.b_h.grad += dgh.sum(0)
    dh_prev = dh * z + dgh @ p.W_h.values
    return dgi, dh_prev


def gru_layer_forward(p: GruCellParams, xs: np.ndarray, h0: np.ndarray | None = None) -> tuple[np.ndarray, tuple]:
    """Run one GRU layer over ``(T, B, D)`` inputs; returns ``(T, B, H)``."""
    T, B, D = xs.shape
    if D != p.input_dim:
        raise ValueError(f"GRU layer expects input dim {p.input_dim}, got {D}")
    h = np.zeros((B, p.hidden)) if h0 is None else h0
    gis = (xs.reshape(T * B, D) @ p.W_i.values.T + p.b_i.values).reshape(T, B, -1)
    hs = np.empty((T, B, p.hidden))
    caches = []
    for t in range(T):
        h, c = _gru_gates(p, gis[t], h)
        hs[t] = h
        caches.append(c)
    return hs, (xs, caches)


def gru_layer_backward(p: GruCellParams, cache: tuple, dhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagation through time for one layer; returns ``(dxs, dh0)``."""
    xs, caches = cache
    T, B, D = xs.shape
    dgis = np.empty((T, B, 3 * p.hidden))
    dh = np.zeros((B, p.hidden))
    for t in range(T - 1, -1, -1):
        dgis[t], dh = _gru_step_backward(p, caches[t], dhs[t] + dh)
    dg2 = dgis.reshape(T * B, -1)
    p.W_i.grad += dg2.T @ xs.reshape(T * B, D)
    p.b_i.grad += dg2.sum(0)
    return (dg2 @ p.W_i.values).reshape(T, B, D), dh


def gru_forward(
    layers: list[GruCellParams], xs: np.ndarray, h0: list[np.ndarray] | None = None
) -> tuple[np.ndarray, list[tuple]]:
    """Stacked GRU over ``(T, B, D)``; layer ``l`` consumes layer ``l-1``'s
    per-step outputs. Returns the top layer's outputs for every step."""
    if not layers:
        raise ValueError("need at least one GRU layer")
    caches = []
    out = xs
    for i, p in enumerate(layers):
        out, c = gru_layer_forward(p, out, None if h0 is None else h0[i])
        caches.append(c)
    return out, caches


def gru_backward(layers: list[GruCellParams], caches: list[tuple], dhs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    if len(caches) != len(layers):
        raise ValueError("missing GRU caches")
    dh0s = [None] * len(layers)
    d = dhs
    for i in range(len(layers) - 1, -1, -1):
        d, dh0s[i] = gru_layer_backward(layers[i], caches[i], d)
    return d, dh0s


def gru_final_states(caches: list[tuple]) -> list[np.ndarray]:
    """Last hidden state of every layer from ``gru_forward`` caches."""
    out = []
    for xs, steps in caches:
        h_prev, r, z, n, _ = steps[-1]
        out.append((1 - z) * n + z * h_prev)
    return out
