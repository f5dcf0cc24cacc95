from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f: Callable[[], float], x: np.ndarray, idx: tuple, h: float = 1e-5) -> float:
    """Central difference of ``f`` wrt ``x[idx]``; ``x`` is perturbed in place
    and restored."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def grad_check(
    loss: Callable[[], float],
    arrays: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    samples_per_array: int | None = 30,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss`` must read the current contents of ``arrays`` (they are perturbed
    in place). At most ``samples_per_array`` coordinates are checked per array
    (all if ``None``).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, x in arrays.items():
        g = np.asarray(analytic[name])
        flat = np.arange(x.size)
        if samples_per_array is not None and x.size > samples_per_array:
            flat = rng.choice(x.size, samples_per_array, replace=False)
        for k in flat:
            idx = np.unravel_index(k, x.shape)
            num = numeric_grad(loss, x, idx, h)
            worst = max(worst, float(relative_error(g[idx], num, floor)))
    return worst
