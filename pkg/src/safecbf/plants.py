"""Plant models, reference feedback laws and disturbance signals.

Every plant is control affine, ``x' = f(x) + g(x) u + D d``, and exposes what the
barrier code needs for analytic Lie derivatives: the indices of the position
coordinates and the Jacobian of the position rate under the drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


class Plant:
    name = "plant"
    state_names: tuple = ()
    input_names: tuple = ()
    pos_idx: tuple = ()
    # which state components the physical disturbance enters, e.g. velocities
    dist_idx: tuple = ()
    angle_idx: tuple = ()

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.input_names)

    @property
    def dist_dim(self) -> int:
        return self.dist_map().shape[1]

    # -- dynamics -------------------------------------------------------------
    def f(self, x) -> np.ndarray:
        raise NotImplementedError

    def g(self, x) -> np.ndarray:
        raise NotImplementedError

    def dist_map(self) -> np.ndarray:
        """Constant n x k matrix taking the physical disturbance to the state."""
        raise NotImplementedError

    def rhs(self, x, u, d) -> np.ndarray:
        return self.f(x) + self.g(x) @ np.asarray(u, dtype=float) + self.dist_map() @ np.asarray(d, dtype=float)

    def pos_rate_jac(self, x) -> np.ndarray:
        """d f(x)[pos_idx] / dx."""
        raise NotImplementedError

    # -- extended system x_bar = [x; t] ----------------------------------------
    def f_bar(self, x_bar) -> np.ndarray:
        return np.append(self.f(x_bar[:-1]), 1.0)

    def g_bar(self, x_bar) -> np.ndarray:
        return np.vstack([self.g(x_bar[:-1]), np.zeros((1, self.m))])

    def d_bar(self, d) -> np.ndarray:
        return np.append(self.dist_map() @ np.asarray(d, dtype=float), 0.0)

    def position(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.pos_idx)]

    def reference(self, x, target, d_hat) -> np.ndarray:
        raise NotImplementedError

    def default_box(self):
        raise NotImplementedError

    def normalize(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        for i in self.angle_idx:
            x[i] = wrap_angle(x[i])
        return x


@dataclass
class BlimpGains:
    k_v: float = 1.0
    k_x: float = 0.5
    k_w: float = 1.0
    k_z: float = 0.5
    k_psi: float = 2.0


@dataclass
class Blimp(Plant):
    """Planar heading-directed thrust, vertical thrust and first-order yaw.

    State ``[x, y, z, psi, vx, vy, vz]``, input ``[f_x, f_z, tau_psi]``,
    disturbance ``[d_x, d_y, d_z]`` (accelerations on the velocity states).
    """
    mass: float = 1.0
    inertia: float = 1.0
    drag: float = 0.5
    gains: BlimpGains = field(default_factory=BlimpGains)

    name = "blimp"
    state_names = ("x", "y", "z", "psi", "vx", "vy", "vz")
    input_names = ("f_x", "f_z", "tau_psi")
    pos_idx = (0, 1, 2)
    dist_idx = (4, 5, 6)
    angle_idx = (3,)

    def __post_init__(self):
        if not (self.mass > 0 and self.inertia > 0 and self.drag >= 0):
            raise ValueError("blimp needs mass > 0, inertia > 0, drag >= 0")

    def f(self, x):
        c = self.drag / self.mass
        return np.array([x[4], x[5], x[6], 0.0, -c * x[4], -c * x[5], -c * x[6]])

    def g(self, x):
        G = np.zeros((7, 3))
        G[4, 0] = math.cos(x[3]) / self.mass
        G[5, 0] = math.sin(x[3]) / self.mass
        G[6, 1] = 1.0 / self.mass
        G[3, 2] = 1.0 / self.inertia
        return G

    def dist_map(self):
        D = np.zeros((7, 3))
        D[4, 0] = D[5, 1] = D[6, 2] = 1.0
        return D

    def pos_rate_jac(self, x):
        J = np.zeros((3, 7))
        J[0, 4] = J[1, 5] = J[2, 6] = 1.0
        return J

    def reference(self, x, target, d_hat):
        return blimp_reference(x, target, self.gains, d_hat, self.mass)

    def default_box(self):
        return np.array([-2.0, -2.0, -1.0]), np.array([2.0, 2.0, 1.0])

    def kernel_params(self):
        return np.array([self.mass, self.inertia, self.drag])


def blimp_rhs(s, u, d, mass=1.0, inertia=1.0, drag=0.5):
    return Blimp(mass, inertia, drag).rhs(s, u, d)


def blimp_reference(s, target, gains: BlimpGains, d_hat=None, mass: float = 1.0):
    """Speed/heading/altitude feedback with observer feedforward.

    ``d_hat`` may be the physical 3-vector or a full (extended) state estimate;
    only the velocity components are used.
    """
    x, y, z, psi, vx, vy, vz = (float(v) for v in s[:7])
    dx, dy = target[0] - x, target[1] - y
    e_d = math.hypot(dx, dy)
    e_z = z - target[2]
    e_psi = wrap_angle(psi - math.atan2(dy, dx))
    v = math.hypot(vx, vy)
    f_x = -gains.k_v * (v - gains.k_x * e_d * math.cos(e_psi))
    f_z = -gains.k_w * (vz + gains.k_z * e_z)
    tau = -gains.k_psi * e_psi
    if d_hat is not None:
        dh = np.asarray(d_hat, dtype=float)
        dv = dh[4:7] if dh.size >= 7 else dh[:3]
        f_x -= mass * (dv[0] * math.cos(psi) + dv[1] * math.sin(psi))
        f_z -= mass * dv[2]
    return np.array([f_x, f_z, tau])


@dataclass
class AckermannGains:
    k_omega: float = 2.0
    k_p: float = 0.6
    k_v: float = 2.0


@dataclass
class Ackermann(Plant):
    """State ``[x, y, psi, v]``, input ``[a, omega]``, scalar force disturbance."""
    mass: float = 1.0
    gains: AckermannGains = field(default_factory=AckermannGains)

    name = "ackermann"
    state_names = ("x", "y", "psi", "v")
    input_names = ("a", "omega")
    pos_idx = (0, 1)
    dist_idx = (3,)
    angle_idx = (2,)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("ackermann needs mass > 0")

    def f(self, x):
        return np.array([x[3] * math.cos(x[2]), x[3] * math.sin(x[2]), 0.0, 0.0])

    def g(self, x):
        G = np.zeros((4, 2))
        G[3, 0] = 1.0 / self.mass
        G[2, 1] = 1.0
        return G

    def dist_map(self):
        D = np.zeros((4, 1))
        D[3, 0] = 1.0 / self.mass
        return D

    def pos_rate_jac(self, x):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([[0.0, 0.0, -x[3] * s, c], [0.0, 0.0, x[3] * c, s]])

    def reference(self, x, target, d_hat):
        return ackermann_reference(x, target, self.gains, d_hat, self.mass)

    def kernel_params(self):
        return np.array([self.mass])

    def default_box(self):
        return np.array([-2.0, -2.0]), np.array([2.0, 2.0])


def ackermann_rhs(s, u, d, mass=1.0):
    return Ackermann(mass).rhs(s, u, np.atleast_1d(d))


def ackermann_reference(s, target, gains: AckermannGains, d_hat=None, mass: float = 1.0):
    x, y, psi, v = (float(c) for c in s[:4])
    dx, dy = target[0] - x, target[1] - y
    e_d = math.hypot(dx, dy)
    e_psi = wrap_angle(psi - math.atan2(dy, dx))
    omega = -gains.k_omega * e_psi
    v_r = gains.k_p * e_d * math.cos(e_psi)
    a = -gains.k_v * (v - v_r)
    if d_hat is not None:
        dh = np.asarray(d_hat, dtype=float)
        a -= mass * (dh[3] if dh.size >= 4 else dh[0])
    return np.array([a, omega])


@dataclass
class DIGains:
    k_p: float = 1.0
    k_d: float = 2.0


@dataclass
class DoubleIntegrator(Plant):
    """Planar double integrator ``[px, py, vx, vy]`` with acceleration inputs."""
    gains: DIGains = field(default_factory=DIGains)

    name = "double_integrator"
    state_names = ("px", "py", "vx", "vy")
    input_names = ("ax", "ay")
    pos_idx = (0, 1)
    dist_idx = (2, 3)

    def f(self, x):
        return np.array([x[2], x[3], 0.0, 0.0])

    def g(self, x):
        G = np.zeros((4, 2))
        G[2, 0] = G[3, 1] = 1.0
        return G

    def dist_map(self):
        D = np.zeros((4, 2))
        D[2, 0] = D[3, 1] = 1.0
        return D

    def pos_rate_jac(self, x):
        J = np.zeros((2, 4))
        J[0, 2] = J[1, 3] = 1.0
        return J

    def reference(self, x, target, d_hat):
        x = np.asarray(x, dtype=float)
        u = -self.gains.k_p * (x[:2] - np.asarray(target[:2])) - self.gains.k_d * x[2:4]
        if d_hat is not None:
            dh = np.asarray(d_hat, dtype=float)
            u = u - (dh[2:4] if dh.size >= 4 else dh[:2])
        return u

    def default_box(self):
        return np.array([-2.0, -2.0]), np.array([2.0, 2.0])

    def kernel_params(self):
        return np.zeros(1)


PLANTS = {"blimp": Blimp, "ackermann": Ackermann, "double_integrator": DoubleIntegrator}


# -- disturbances --------------------------------------------------------------

class DisturbanceBoundError(ValueError):
    pass


@dataclass(frozen=True)
class DisturbanceSpec:
    """``d(t) = offset + amplitude * sin(frequency * t + phase)``.

    kind "constant" ignores amplitude/frequency; all axes share one frequency
    and phase.
    """
    kind: str = "constant"
    offset: tuple = ()
    amplitude: tuple = ()
    frequency: float = 0.0
    phase: float = 0.0
    bounds: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoid"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")
        if self.kind == "sinusoid" and len(self.amplitude) == 0:
            raise ValueError("sinusoid needs an amplitude vector")
        if self.offset and self.amplitude and len(self.offset) != len(self.amplitude):
            raise ValueError("offset and amplitude lengths differ")

    @property
    def dim(self) -> int:
        return max(len(self.offset), len(self.amplitude))

    def _vecs(self, dim=None):
        k = dim if dim is not None else self.dim
        off = np.zeros(k)
        amp = np.zeros(k)
        if self.offset:
            off[: len(self.offset)] = self.offset
        if self.kind == "sinusoid" and self.amplitude:
            amp[: len(self.amplitude)] = self.amplitude
        return off, amp

    def value(self, t, dim=None) -> np.ndarray:
        off, amp = self._vecs(dim)
        if self.kind == "constant":
            return off
        return off + amp * math.sin(self.frequency * t + self.phase)

    def rate(self, t, dim=None) -> np.ndarray:
        off, amp = self._vecs(dim)
        if self.kind == "constant":
            return np.zeros_like(off)
        return amp * self.frequency * math.cos(self.frequency * t + self.phase)

    def analytic_bounds(self, D=None):
        """Tight sup-norms of (d, d', d'') seen through the linear map ``D``."""
        if D is not None:
            D = np.asarray(D, dtype=float)
            # an empty spec means no disturbance on any of the plant's axes
            off, amp = self._vecs(self.dim or D.shape[1])
            off, amp = D @ off, D @ amp
        else:
            off, amp = self._vecs()
        a = float(np.linalg.norm(amp))
        w = self.frequency if self.kind == "sinusoid" else 0.0
        if self.kind == "constant":
            a = 0.0
        b1 = max(np.linalg.norm(off + amp), np.linalg.norm(off - amp)) if a else float(np.linalg.norm(off))
        return float(b1), a * w, a * w * w

    def check_bounds(self, D=None, tol=1e-12) -> bool:
        got = self.analytic_bounds(D)
        return all(g <= d + tol for g, d in zip(got, self.bounds))


def disturbance_eval(spec: DisturbanceSpec, t: float) -> np.ndarray:
    return spec.value(t)
