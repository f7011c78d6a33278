"""Fixed-step integration, HOCBF pole/gain conversion and finite differences."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class IntegrationError(FloatingPointError):
    """Raised when a derivative evaluation produces a non-finite value."""

    def __init__(self, index: int, stage: int):
        super().__init__(f"non-finite derivative in component {index} (RK4 stage {stage})")
        self.index = index
        self.stage = stage


class GradientError(FloatingPointError):
    def __init__(self, coordinate: int):
        super().__init__(f"non-finite function value while differencing coordinate {coordinate}")
        self.coordinate = coordinate


def _checked(k: np.ndarray, stage: int) -> np.ndarray:
    if not np.all(np.isfinite(k)):
        raise IntegrationError(int(np.flatnonzero(~np.isfinite(k))[0]), stage)
    return k


def rk4_step(derivative_fn: Callable[[np.ndarray], np.ndarray], state, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of an autonomous field.

    Time-varying systems carry time as the last state component (extended state),
    so the field never needs a separate time argument.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = np.asarray(state, dtype=float)
    k1 = _checked(np.asarray(derivative_fn(y), dtype=float), 1)
    k2 = _checked(np.asarray(derivative_fn(y + 0.5 * dt * k1), dtype=float), 2)
    k3 = _checked(np.asarray(derivative_fn(y + 0.5 * dt * k2), dtype=float), 3)
    k4 = _checked(np.asarray(derivative_fn(y + dt * k3), dtype=float), 4)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def validate_poles(poles: Sequence[float]) -> tuple[float, ...]:
    poles = tuple(float(p) for p in poles)
    if len(poles) < 1:
        raise ValueError("at least one pole is required")
    if not all(np.isfinite(p) and p > 0 for p in poles):
        raise ValueError(f"poles must be strictly positive, got {poles}")
    return poles


def poles_to_gains(poles: Sequence[float]) -> np.ndarray:
    """Coefficients [k1, ..., kr] of prod_i (s + lambda_i), leading 1 dropped."""
    poles = validate_poles(poles)
    coeffs = np.array([1.0])
    for p in poles:
        coeffs = np.convolve(coeffs, [1.0, p])
    return coeffs[1:]


def gains_to_poles(gains: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`poles_to_gains` via companion-matrix eigenvalues (ascending)."""
    k = np.asarray(gains, dtype=float)
    r = len(k)
    companion = np.zeros((r, r))
    companion[0, :] = -k
    if r > 1:
        companion[1:, :-1] = np.eye(r - 1)
    roots = np.linalg.eigvals(companion)
    if np.max(np.abs(roots.imag)) > 1e-9 * max(1.0, np.max(np.abs(roots))):
        raise ValueError(f"gains {tuple(k)} have complex roots")
    return np.sort(-roots.real)


def fd_gradient(scalar_fn: Callable[[np.ndarray], float], point, step: float | None = None) -> np.ndarray:
    """Central-difference gradient.

    With ``step=None`` coordinate i uses ``1e-4 * max(1, |x_i|)``; a scalar step
    is applied to every coordinate as given.
    """
    x = np.asarray(point, dtype=float)
    if step is None:
        steps = 1e-4 * np.maximum(1.0, np.abs(x))
    else:
        if not step > 0:
            raise ValueError("step must be positive")
        steps = np.full(x.shape, float(step))
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        fp = scalar_fn(x + e)
        fm = scalar_fn(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientError(i)
        grad[i] = (fp - fm) / (2.0 * steps[i])
    return grad
