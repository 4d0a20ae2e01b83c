"""Dense float64 building blocks with hand-written gradients.

Every trainable block in the package is a short composition of the
functions below; their backward passes are checked against
:func:`grad_check` in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class GradCheckError(RuntimeError):
    """Raised when the checked function evaluates to a non-finite value."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _bias_vector(bias, n: int) -> np.ndarray:
    b = np.asarray(bias, dtype=np.float64).reshape(-1)
    if b.shape[0] != n:
        raise DimensionError(f"bias has {b.shape[0]} entries, expected {n}")
    return b


def linear_forward(inputs, weights, bias) -> np.ndarray:
    """Affine map ``inputs @ weights + bias`` applied row-wise."""
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"cannot apply weights of shape {w.shape} to input of shape {x.shape}"
        )
    return x @ w + _bias_vector(bias, w.shape[1])


def linear_backward(inputs, weights, upstream):
    """Gradients of a linear map.

    Returns ``(grad_input, grad_weights, grad_bias)`` for an upstream
    gradient of shape ``(T, F_out)``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"cannot apply weights of shape {w.shape} to input of shape {x.shape}"
        )
    if g.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(
            f"upstream gradient has shape {g.shape}, expected {(x.shape[0], w.shape[1])}"
        )
    return g @ w.T, x.T @ g, g.sum(axis=0)


def logsumexp_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def log_softmax_rows(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    return x - logsumexp_rows(x)[..., None]


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax computed from max-shifted exponentials."""
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logaddexp_many(values) -> float:
    """Log of a sum of exponentials of a 1-D sequence; ``-inf`` when empty."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return -np.inf
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def mse(a, b) -> float:
    """Mean of squared differences over every entry."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b) -> np.ndarray:
    """Gradient of :func:`mse` with respect to its first argument."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        return np.zeros_like(a)
    return 2.0 * (a - b) / a.size


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: list[float] = field(default_factory=list)
    worst: tuple[int, tuple[int, ...]] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``f`` takes no arguments and reads ``params`` by reference; each entry
    is perturbed in place and restored. The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``, so entries whose true gradient is
    ~0 are judged on an absolute scale of ``floor``.
    """
    if len(params) != len(analytic_grads):
        raise ValueError("params and analytic_grads differ in length")
    worst_err, worst = 0.0, None
    per_param = []
    for p_idx, (p, g) in enumerate(zip(params, analytic_grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p_worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            f_plus = f()
            p[idx] = orig - step
            f_minus = f()
            p[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(
                    f"non-finite function value perturbing param {p_idx} at {idx}: "
                    f"f(+)={f_plus}, f(-)={f_minus}"
                )
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(g[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > p_worst:
                p_worst = err
            if err > worst_err:
                worst_err, worst = err, (p_idx, tuple(int(i) for i in idx))
        per_param.append(p_worst)
    return GradCheckReport(worst_err, tolerance, per_param, worst)
