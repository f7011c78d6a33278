"""RISE disturbance observer on the time-extended state.

The estimator is

    xhat' = f(x) + g(x) u + dhat + alpha * xtilde
    dhat  = gamma * xtilde + z,   z' = gamma*alpha*xtilde + xtilde + beta*sign(xtilde)

with ``xtilde = x - xhat``. Writing ``dhat`` through the integral state ``z``
avoids ever differentiating the measured error; with ``xhat(0) = x(0)`` and
``z(0) = 0`` it is the same estimator as integrating ``dhat'`` directly.

The Lyapunov bookkeeping (``P`` and ``V``) needs the true disturbance and is
only available in simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObserverGains:
    alpha: float
    beta: float
    gamma: float
    delta1: float
    delta2: float
    delta3: float
    # 0 keeps the exact sign; > 0 replaces it with tanh(xtilde / sign_eps)
    sign_eps: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"observer gain {name} must be positive")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1 so that the decay rate min(alpha-1, gamma) is positive")
        for name in ("delta1", "delta2", "delta3", "sign_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def lambda_v(self) -> float:
        return min(self.alpha - 1.0, self.gamma)

    @property
    def kappa(self) -> float:
        return self.lambda_v

    @property
    def beta_threshold(self) -> float:
        return self.delta2 + self.delta3 / max(1.0, self.alpha - self.gamma)

    def gain_condition(self) -> bool:
        """Exponential-convergence condition on beta."""
        return self.beta > self.beta_threshold


def error_bound(t: float, g: ObserverGains) -> float:
    """Envelope ``delta1 * exp(-lambda_v t / 2)`` on the estimation error norm."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return g.delta1 * math.exp(-0.5 * g.lambda_v * t)


def sign_fn(x, g: ObserverGains):
    if g.sign_eps > 0:
        return np.tanh(np.asarray(x) / g.sign_eps)
    return np.sign(x)


@dataclass
class ObserverState:
    x_hat: np.ndarray
    z_aux: np.ndarray

    @classmethod
    def initial(cls, x_bar0) -> "ObserverState":
        x_bar0 = np.asarray(x_bar0, dtype=float)
        return cls(x_bar0.copy(), np.zeros_like(x_bar0))

    def x_tilde(self, x_bar) -> np.ndarray:
        return np.asarray(x_bar, dtype=float) - self.x_hat

    def d_hat(self, x_bar, g: ObserverGains) -> np.ndarray:
        return g.gamma * self.x_tilde(x_bar) + self.z_aux


@dataclass
class ObserverDiagnostics:
    P: float = 0.0
    kappa: float = 0.0

    def V(self, x_tilde, d_tilde) -> float:
        return 0.5 * float(x_tilde @ x_tilde) + 0.5 * float(d_tilde @ d_tilde) + self.P


def observer_rhs(obs: ObserverState, x_bar, u, model, g: ObserverGains):
    """Time derivatives of ``(x_hat, z_aux)``.

    ``model(x_bar, u)`` returns the nominal extended drift ``f(x) + g(x) u``
    (time component 1).
    """
    xt = obs.x_tilde(x_bar)
    d_hat = g.gamma * xt + obs.z_aux
    dx_hat = model(x_bar, u) + d_hat + g.alpha * xt
    dz = (g.gamma * g.alpha + 1.0) * xt + g.beta * sign_fn(xt, g)
    return dx_hat, dz


def diagnostics_rhs(diag: ObserverDiagnostics, x_tilde, d_tilde, d_dot_true, g: ObserverGains) -> float:
    """dP/dt = -kappa P - d_tilde . (d_dot - beta sign(x_tilde))."""
    L = float(d_tilde @ (np.asarray(d_dot_true) - g.beta * sign_fn(x_tilde, g)))
    return -g.kappa * diag.P - L
