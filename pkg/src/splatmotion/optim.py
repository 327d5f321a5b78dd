"""Adam and a finite-difference gradient checker shared by all fitting stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer receives NaN or infinite gradients."""


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    v: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ValueError("moment vectors must match the parameter size")

    def copy(self) -> AdamState:
        return AdamState(self.size, self.lr, self.beta1, self.beta2, self.eps, self.step, self.m.copy(), self.v.copy())


def adam_step(
    state: AdamState, params: ArrayLike, grads: ArrayLike, stage: str = "optimizer"
) -> NDArray[np.float64]:
    """Advance ``state`` in place and return the updated parameter vector."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != (state.size,) or g.shape != (state.size,):
        raise ValueError(f"{stage}: expected vectors of length {state.size}, got {p.shape} and {g.shape}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NonFiniteGradientError(f"{stage}: non-finite gradient at coordinates {bad[:10].tolist()}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def relative_error(numeric: ArrayLike, analytic: ArrayLike, floor: float = 1e-6) -> NDArray[np.float64]:
    numeric = np.asarray(numeric, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), floor)
    return np.abs(numeric - analytic) / scale


def finite_diff_check(
    f: Callable[[NDArray[np.float64]], float],
    x: ArrayLike,
    analytic_grad: ArrayLike,
    h: float | None = None,
    index: ArrayLike | None = None,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    The default step is ``1e-4 * max(1, |x_i|)``.  ``index`` restricts the
    check to a subset of coordinates.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    coords = np.arange(x.size) if index is None else np.asarray(index, dtype=np.int64)
    flat = x.ravel()
    worst = 0.0
    for i in coords:
        step = (1e-4 * max(1.0, abs(flat[i]))) if h is None else h
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"objective is not finite near coordinate {i}")
        fd = (fp - fm) / (2.0 * step)
        worst = max(worst, float(relative_error(fd, g.ravel()[i])))
    return worst
