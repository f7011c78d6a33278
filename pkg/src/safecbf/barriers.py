"""Barrier functions, HOCBF chains and feasible input polytopes.

For a barrier of relative degree r with linear class-K stages the admissible
inputs at a state satisfy

    L_g L_f^{r-1} h u  >=  -(L_f^r h + K' eta)           eta = [L_f^{r-1} h, ..., h]

which is stored as the polytope row ``a u <= b`` with ``a = -L_g L_f^{r-1} h`` and
``b = K' eta + L_f^r h``. A disturbance enters additively through
``li_row . d_bar``; the margins below replace the unknown term by a bound.

All Lie derivatives are analytic. The barrier supplies value, gradient and
Hessian in position coordinates; the plant supplies f, g and the Jacobian of
the position rate.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import Polytope
from .numerics import poles_to_gains, validate_poles
from .observer import ObserverGains

SINGULAR_RADIUS = 1e-6


class SingularBarrier(ValueError):
    pass


@dataclass(frozen=True)
class SphereSignedDistance:
    """h = ||p - center|| - radius."""
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class SquaredDistance2D:
    """h = ||p - center||^2 - min_dist^2."""
    center: tuple
    min_dist: float

    def __post_init__(self):
        if not self.min_dist > 0:
            raise ValueError("min_dist must be positive")


# roots of s^2 + 10 s + 3.55, i.e. chain gains (10, 3.55)
_DEFAULT_POLES = (5.0 - math.sqrt(25.0 - 3.55), 5.0 + math.sqrt(25.0 - 3.55))


@dataclass(frozen=True)
class BarrierSpec:
    kind: object
    poles: tuple = _DEFAULT_POLES

    def __post_init__(self):
        validate_poles(self.poles)
        if self.r not in (1, 2):
            raise ValueError("only relative degree 1 or 2 is supported")

    @property
    def r(self) -> int:
        return len(self.poles)

    @property
    def gains(self) -> np.ndarray:
        return poles_to_gains(self.poles)

    @property
    def last_pole(self) -> float:
        # stages run from the largest pole down; the final stage uses the smallest
        return float(min(self.poles))

    @property
    def first_pole(self) -> float:
        return float(max(self.poles))

    @classmethod
    def from_gains(cls, kind, gains):
        from .numerics import gains_to_poles
        return cls(kind, tuple(float(p) for p in gains_to_poles(gains)))


@dataclass
class ChainEval:
    h: float
    phi: tuple
    eta: np.ndarray
    lfr_h: float
    lg_row: np.ndarray
    li_row: np.ndarray
    gains: np.ndarray

    @property
    def a_row(self) -> np.ndarray:
        return -self.lg_row

    @property
    def b_entry(self) -> float:
        return float(self.gains @ self.eta + self.lfr_h)


class BarrierSet:
    """Several barriers on one plant, evaluated together."""

    def __init__(self, specs, plant):
        specs = list(specs)
        if not specs:
            raise ValueError("need at least one barrier")
        self.specs = specs
        self.plant = plant
        dp = len(plant.pos_idx)
        N = len(specs)
        self.C = np.zeros((N, dp))
        self.R = np.zeros(N)
        self.sphere = np.zeros(N, dtype=bool)
        self.r = np.array([s.r for s in specs])
        self.K = np.zeros((N, 2))
        self.lam1 = np.zeros(N)
        for i, s in enumerate(specs):
            c = np.asarray(s.kind.center, dtype=float)
            if c.size != dp:
                raise ValueError(f"barrier {i}: center has {c.size} coordinates, plant has {dp}")
            self.C[i] = c
            if isinstance(s.kind, SphereSignedDistance):
                self.sphere[i] = True
                self.R[i] = s.kind.radius
            elif isinstance(s.kind, SquaredDistance2D):
                self.R[i] = s.kind.min_dist
            else:
                raise TypeError(f"unsupported barrier kind {type(s.kind).__name__}")
            self.K[i, : s.r] = s.gains
            self.lam1[i] = s.first_pole
        self.last_poles = np.array([s.last_pole for s in specs])
        self._pos = np.array(plant.pos_idx, dtype=np.int64)
        self._two = self.r == 2

    def __len__(self):
        return len(self.specs)

    def _position_terms(self, p):
        diff = p[None, :] - self.C
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if np.any(dist < SINGULAR_RADIUS):
            i = int(np.argmin(dist))
            raise SingularBarrier(f"state at the center of barrier {i}")
        dp = p.size
        h = np.where(self.sphere, dist - self.R, dist**2 - self.R**2)
        nrm = diff / dist[:, None]
        grad = np.where(self.sphere[:, None], nrm, 2.0 * diff)
        eye = np.eye(dp)[None]
        hs = (eye - nrm[:, :, None] * nrm[:, None, :]) / dist[:, None, None]
        hess = np.where(self.sphere[:, None, None], hs, 2.0 * eye)
        return h, grad, hess

    def evaluate(self, x_bar):
        """Chain quantities for every barrier (compiled).

        Same outputs as :meth:`evaluate_reference`.
        """
        x_bar = np.asarray(x_bar, dtype=float)
        pl = self.plant
        x = x_bar[:-1]
        f = pl.f(x)
        G = pl.g(x)
        J = pl.pos_rate_jac(x)
        out = _chain_kernel(x, self._pos, f, G, J, self.C, self.R, self.sphere, self._two, self.K, self.lam1)
        if out[0] >= 0:
            raise SingularBarrier(f"state at the center of barrier {out[0]}")
        return out[1:]

    def evaluate_reference(self, x_bar):
        """Vectorized chain evaluation.

        Returns ``(h, phi1, eta_b, lfr, lg, li)`` where ``eta_b = K' eta``,
        ``lg`` is (N, m) and ``li`` is (N, n+1). ``phi1`` equals ``h`` for
        relative-degree-one barriers.
        """
        x_bar = np.asarray(x_bar, dtype=float)
        pl = self.plant
        x = x_bar[:-1]
        n = x.size
        p = x[list(pl.pos_idx)]
        h, grad, hess = self._position_terms(p)
        f = pl.f(x)
        G = pl.g(x)
        pdot = f[list(pl.pos_idx)]
        S = np.zeros((len(pl.pos_idx), n))
        S[np.arange(len(pl.pos_idx)), list(pl.pos_idx)] = 1.0
        gx = grad @ S  # (N, n) gradient of h in x
        lfh = grad @ pdot
        # gradient of L_f h in x
        J = pl.pos_rate_jac(x)
        glf = (hess @ pdot) @ S + grad @ J
        two = self.r == 2
        row = np.where(two[:, None], glf, gx)
        lfr = row @ f
        lg = row @ G
        eta_b = np.where(two, self.K[:, 0] * lfh + self.K[:, 1] * h, self.K[:, 0] * h)
        phi1 = np.where(two, lfh + self.lam1 * h, h)
        li = np.concatenate([row, np.zeros((len(self), 1))], axis=1)
        return h, phi1, eta_b, lfr, lg, li, lfh

    def chains(self, x_bar):
        h, phi1, eta_b, lfr, lg, li, lfh = self.evaluate(x_bar)
        out = []
        for i, s in enumerate(self.specs):
            if s.r == 2:
                phi = (float(h[i]), float(phi1[i]))
                eta = np.array([lfh[i], h[i]])
            else:
                phi = (float(h[i]),)
                eta = np.array([h[i]])
            out.append(ChainEval(float(h[i]), phi, eta, float(lfr[i]), lg[i].copy(), li[i].copy(), self.K[i, : s.r].copy()))
        return out


@njit(cache=True)
def _chain_kernel(x, pos, f, G, J, C, R, sphere, two, K, lam1):
    N, dp = C.shape
    n = x.size
    m = G.shape[1]
    h = np.empty(N)
    phi1 = np.empty(N)
    eta_b = np.empty(N)
    lfr = np.empty(N)
    lfh = np.empty(N)
    lg = np.zeros((N, m))
    li = np.zeros((N, n + 1))
    grad = np.empty(dp)
    diff = np.empty(dp)
    bad = -1
    for i in range(N):
        d2 = 0.0
        for a in range(dp):
            diff[a] = x[pos[a]] - C[i, a]
            d2 += diff[a] * diff[a]
        dist = math.sqrt(d2)
        if dist < SINGULAR_RADIUS:
            bad = i
            break
        if sphere[i]:
            h[i] = dist - R[i]
            for a in range(dp):
                grad[a] = diff[a] / dist
        else:
            h[i] = d2 - R[i] * R[i]
            for a in range(dp):
                grad[a] = 2.0 * diff[a]
        lf = 0.0
        for a in range(dp):
            lf += grad[a] * f[pos[a]]
        lfh[i] = lf
        if two[i]:
            # row = d(L_f h)/dx = (hess pdot)' S + grad' J
            for k in range(n):
                acc = 0.0
                for a in range(dp):
                    acc += grad[a] * J[a, k]
                li[i, k] = acc
            for a in range(dp):
                hp = 0.0
                for c in range(dp):
                    if sphere[i]:
                        hab = ((1.0 if a == c else 0.0) - grad[a] * grad[c]) / dist
                    else:
                        hab = 2.0 if a == c else 0.0
                    hp += hab * f[pos[c]]
                li[i, pos[a]] += hp
            eta_b[i] = K[i, 0] * lf + K[i, 1] * h[i]
            phi1[i] = lf + lam1[i] * h[i]
        else:
            for a in range(dp):
                li[i, pos[a]] = grad[a]
            eta_b[i] = K[i, 0] * h[i]
            phi1[i] = h[i]
        acc = 0.0
        for k in range(n):
            acc += li[i, k] * f[k]
        lfr[i] = acc
        for j in range(m):
            acc = 0.0
            for k in range(n):
                acc += li[i, k] * G[k, j]
            lg[i, j] = acc
    return bad, h, phi1, eta_b, lfr, lg, li, lfh


def eval_chain(spec: BarrierSpec, x_bar, plant) -> ChainEval:
    return BarrierSet([spec], plant).chains(x_bar)[0]


def envelope(g: ObserverGains, t: float) -> float:
    return g.delta1 * math.exp(-0.5 * g.lambda_v * t)


def dob_margin(chain: ChainEval, d_hat, g: ObserverGains, t: float) -> float:
    li = chain.li_row
    return float(li @ np.asarray(d_hat, dtype=float) - np.linalg.norm(li) * envelope(g, t))


class Mode(str, enum.Enum):
    NOMINAL = "Nominal"
    WORST_CASE = "WorstCaseRobust"
    DOB = "DOB"


@dataclass
class FeasibleSpace:
    polytope: Polytope
    margins: np.ndarray
    n_box: int

    @property
    def barrier_rows(self) -> slice:
        return slice(self.n_box, None)


def box_rows(u_min, u_max):
    u_min = np.asarray(u_min, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    if np.any(u_min >= u_max):
        raise ValueError("input box needs u_min < u_max componentwise")
    m = u_min.size
    A = np.vstack([np.eye(m), -np.eye(m)])
    return A, np.concatenate([u_max, -u_min])


def margins_from(li, d_hat, g: ObserverGains | None, t, mode) -> np.ndarray:
    mode = Mode(mode)
    if mode is Mode.NOMINAL:
        return np.zeros(li.shape[0])
    nrm = np.sqrt(np.einsum("ij,ij->i", li, li))
    if mode is Mode.WORST_CASE:
        return -nrm * g.delta1
    return li @ np.asarray(d_hat, dtype=float) - nrm * envelope(g, t)


def barrier_rows(bset: BarrierSet, x_bar, d_hat, g, t, mode):
    """``(A_rows, b_rows, margins, h, phi1)`` for the barrier rows only."""
    h, phi1, eta_b, lfr, lg, li, _ = bset.evaluate(x_bar)
    dm = margins_from(li, d_hat, g, t, mode)
    return -lg, eta_b + lfr + dm, dm, h, phi1


def assemble_from_set(bset: BarrierSet, input_box, x_bar, d_hat, g, t, mode, box=None) -> FeasibleSpace:
    Ab, bb = box if box is not None else box_rows(*input_box)
    A_r, b_r, dm, _, _ = barrier_rows(bset, x_bar, d_hat, g, t, mode)
    A = np.vstack([Ab, A_r])
    b = np.concatenate([bb, b_r])
    margins = np.concatenate([np.zeros(Ab.shape[0]), dm])
    return FeasibleSpace(Polytope(A, b), margins, Ab.shape[0])


def assemble_feasible_space(barriers, input_box, x_bar, d_hat, g, t, mode, plant=None) -> FeasibleSpace:
    """``barriers`` is a BarrierSet or a list of specs (then ``plant`` is required)."""
    if not isinstance(barriers, BarrierSet):
        if plant is None:
            raise ValueError("plant is required when passing a list of barrier specs")
        barriers = BarrierSet(barriers, plant)
    return assemble_from_set(barriers, input_box, x_bar, d_hat, g, t, mode)


def certificate_hbar(chain: ChainEval, V: float, beta1: float) -> float:
    """beta1 * phi^{r-1} - V."""
    return beta1 * chain.phi[-1] - V


def beta1_bound(phi_last0: float, g: ObserverGains) -> float:
    if not phi_last0 > 0:
        raise ValueError("phi^{r-1}(0) must be positive")
    return g.delta1**2 / (2.0 * phi_last0)
