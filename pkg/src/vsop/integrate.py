"""ODE integration backends for the rate-equation engine.

Two interchangeable backends operate on the per-class linear systems:

* :func:`rk45` -- embedded Dormand-Prince 5(4) pair with PI-free step
  control, scaled max-norm error estimate and per-class absolute
  tolerances. Suitable for short stages (ns..us).
* :func:`propagate_linear` -- exact matrix-exponential propagator for the
  piecewise-constant linear systems, used for long strongly-driven stages
  (ms pumping) where an explicit method would need millions of steps.

The error max-norm makes accepted step sequences independent of the
velocity-class ordering, so permuting the grid permutes the results exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .errors import NumericError

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def rk45(rhs, y0: np.ndarray, duration: float, rtol: float = 1e-8,
         atol=1e-12, max_step: float | None = None,
         class_axis: int = -1) -> tuple[np.ndarray, dict]:
    """Integrate y' = rhs(y) over ``duration`` from autonomous initial value y0.

    ``atol`` may be an array broadcastable against y (per-class tolerances).
    Raises NumericError on step underflow, reporting the velocity-class index
    along ``class_axis`` that dominates the error.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    y = np.array(y0, dtype=float)
    if duration == 0.0:
        return y, {"steps": 0, "rejected": 0}
    t = 0.0
    if max_step is None or max_step <= 0:
        max_step = duration
    f0 = rhs(y)
    with np.errstate(over="ignore"):
        scale0 = float(np.max(np.abs(f0) / (atol + rtol * np.abs(y))))
    h = min(max_step, duration, 0.1 / scale0 if scale0 > 0 else duration)
    steps = rejected = 0
    k = [None] * 7
    k[0] = f0
    while t < duration:
        h = min(h, duration - t)
        if h < 1e-3 * np.finfo(float).eps * duration + 1e-300:
            err_arr = np.abs(k[0])
            class_idx = int(np.unravel_index(np.argmax(err_arr), err_arr.shape)[class_axis])
            raise NumericError(f"step size underflow at t={t:.3e} s "
                               f"(dominant velocity class index {class_idx})")
        for i in range(1, 7):
            yi = y
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    yi = yi + (h * a) * k[j]
            k[i] = rhs(yi)
        y_new = y + h * sum(b * ki for b, ki in zip(_B5, k) if b != 0.0)
        err = h * sum(e * ki for e, ki in zip(_E, k) if e != 0.0)
        tol = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = np.abs(err) / tol
        err_norm = float(np.max(ratio))
        if err_norm <= 1.0:
            t += h
            y = y_new
            k[0] = k[6]  # FSAL
            steps += 1
        else:
            rejected += 1
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        h = min(h, max_step)
    return y, {"steps": steps, "rejected": rejected}


def propagate_linear(matrices: np.ndarray, y0: np.ndarray,
                     duration: float) -> np.ndarray:
    """Exact solution of y' = M y per class over ``duration``.

    ``matrices`` has shape (N, L, L), ``y0`` shape (L, N); returns (L, N).
    """
    if duration == 0.0:
        return np.array(y0, dtype=float)
    props = expm(matrices * duration)
    if not np.all(np.isfinite(props)):
        bad = int(np.argwhere(~np.isfinite(props).all(axis=(1, 2)))[0, 0])
        raise NumericError(f"matrix exponential overflow (velocity class index {bad})")
    return np.einsum("nij,jn->in", props, y0)
