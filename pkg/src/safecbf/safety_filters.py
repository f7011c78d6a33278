"""QP safety filters.

Methods
    Nominal          min ||u - u_ref||^2 over the undisturbed HOCBF polytope
    WorstCaseRobust  same, every barrier row tightened by ||li_row|| delta1
    DobCbf           rows corrected by the observer margin
    VcbfNoDob        nominal rows plus the volume-barrier row (no margin)
    DobVcbf          observer-corrected rows plus the volume-barrier row

The volume barrier V_v(x_bar) is the ellipsoid-volume proxy of the feasible
input polytope at x_bar. Its row is relaxed by a slack delta penalized with
M delta^2:

    -(L_f V_v + L_g V_v u + Lambda_Vv) <= lambda_vv V_v - delta
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .barriers import BarrierSet, FeasibleSpace, Mode, assemble_from_set, barrier_rows, box_rows, envelope
from .geometry import ConvergenceFailure, Ellipsoid, EmptyPolytope, GeometryError, Polytope, solve_mvie, unit_ball_volume
from .observer import ObserverGains
from .qpsolver import QpProblem, QpSolution, QpStatus, solve_qp


class Method(str, enum.Enum):
    NOMINAL = "Nominal"
    WORST_CASE = "WorstCaseRobust"
    DOB_CBF = "DobCbf"
    VCBF_NO_DOB = "VcbfNoDob"
    DOB_VCBF = "DobVcbf"

    @property
    def mode(self) -> Mode:
        return {
            Method.NOMINAL: Mode.NOMINAL,
            Method.WORST_CASE: Mode.WORST_CASE,
            Method.DOB_CBF: Mode.DOB,
            Method.VCBF_NO_DOB: Mode.NOMINAL,
            Method.DOB_VCBF: Mode.DOB,
        }[self]

    @property
    def uses_vcbf(self) -> bool:
        return self in (Method.VCBF_NO_DOB, Method.DOB_VCBF)


METHOD_NAMES = tuple(m.value for m in Method)


@dataclass
class FilterConfig:
    method: Method = Method.DOB_VCBF
    lambda_vv: float = 3.0
    xi: float = 1e-4
    M: float = 1e4
    beta2: float | None = None
    fd_step: float = 1e-4
    mvie_tol: float = 1e-8
    # "fd": central differences of V_v; "envelope": MVIE duals times the
    # derivative of the polytope data (one MVIE solve per step)
    gradient: str = "fd"

    def __post_init__(self):
        self.method = Method(self.method)
        if not self.lambda_vv > 0:
            raise ValueError("lambda_vv must be positive")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.gradient not in ("fd", "envelope"):
            raise ValueError("gradient must be 'fd' or 'envelope'")


@dataclass
class FilterOutput:
    u: np.ndarray
    slack: float
    qp_status: QpStatus
    vcbf_value: float | None = None
    active_rows: tuple = ()
    space: FeasibleSpace | None = None
    flags: tuple = ()
    grad_vv: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.qp_status is QpStatus.OPTIMAL


def _proj_qp(space_A, space_b, u_ref, M=None, extra=None):
    m = u_ref.size
    if extra is None:
        H = 2.0 * np.eye(m)
        q = -2.0 * u_ref
        return QpProblem(H, q, space_A, space_b)
    a_row, b_val = extra
    H = np.diag(np.concatenate([2.0 * np.ones(m), [2.0 * M]]))
    q = np.concatenate([-2.0 * u_ref, [0.0]])
    A = np.vstack([np.hstack([space_A, np.zeros((space_A.shape[0], 1))]), np.append(a_row, 1.0)])
    b = np.append(space_b, b_val)
    return QpProblem(H, q, A, b)


def fallback_input(space: FeasibleSpace, u_ref, input_box) -> np.ndarray:
    """Box point minimizing the squared violations of the barrier rows.

    Only meaningful for an empty feasible space. Solved as the QP in (u, s)
    ``min sum s_i^2 + eps ||u - u_ref||^2`` with ``a_i u - s_i <= b_i`` and the box.
    """
    P = space.polytope
    assert P.is_empty(), "fallback_input called on a nonempty feasible space"
    u_ref = np.asarray(u_ref, dtype=float)
    m = u_ref.size
    rows = space.barrier_rows
    Ab, bb = P.A[rows], P.b[rows]
    k = Ab.shape[0]
    eps = 1e-8
    H = np.diag(np.concatenate([2 * eps * np.ones(m), 2 * np.ones(k)]))
    q = np.concatenate([-2 * eps * u_ref, np.zeros(k)])
    lo, hi = (np.asarray(v, dtype=float) for v in input_box)
    A = np.vstack([
        np.hstack([Ab, -np.eye(k)]),
        np.hstack([np.eye(m), np.zeros((m, k))]),
        np.hstack([-np.eye(m), np.zeros((m, k))]),
    ])
    b = np.concatenate([bb, hi, -lo])
    sol = solve_qp(QpProblem(H, q, A, b))
    return np.clip(sol.z[:m], lo, hi)


class SafetyFilter:
    """One filter instance per simulation run; holds the MVIE warm start."""

    def __init__(self, cfg: FilterConfig, plant, barriers, input_box, gains: ObserverGains | None):
        self.cfg = cfg
        self.plant = plant
        self.bset = barriers if isinstance(barriers, BarrierSet) else BarrierSet(barriers, plant)
        self.input_box = (np.asarray(input_box[0], dtype=float), np.asarray(input_box[1], dtype=float))
        self.gains = gains
        self._warm: Ellipsoid | None = None
        self._box = box_rows(*self.input_box)
        if cfg.method.mode is not Mode.NOMINAL and gains is None:
            raise ValueError(f"{cfg.method.value} needs observer gains for its margins")

    # -- feasible space and volume barrier --------------------------------------
    def space(self, x_bar, d_hat, t) -> FeasibleSpace:
        return assemble_from_set(self.bset, self.input_box, x_bar, d_hat, self.gains, t, self.cfg.method.mode, self._box)

    def _mvie(self, P: Polytope, warm):
        return solve_mvie(P, tol=self.cfg.mvie_tol, warm_start=warm)

    def vcbf(self, x_bar, d_hat, warm=None):
        """V_v at ``x_bar``; the time coordinate is ``x_bar[-1]``."""
        sp = self.space(x_bar, d_hat, x_bar[-1])
        res = self._mvie(sp.polytope, warm)
        return unit_ball_volume(sp.polytope.m) * res.ellipsoid.det - self.cfg.xi, res

    def vcbf_gradient(self, x_bar, d_hat, base=None):
        """Central differences over the extended state, warm-started from ``base``.

        Returns ``(grad, flags)``; a coordinate whose perturbed solve fails
        falls back to a one-sided difference and is named in ``flags``.
        """
        x_bar = np.asarray(x_bar, dtype=float)
        if base is None:
            v0, res0 = self.vcbf(x_bar, d_hat, self._warm)
        else:
            v0, res0 = base
        warm = res0.ellipsoid
        grad = np.zeros_like(x_bar)
        flags = []
        for i in range(x_bar.size):
            h = self.cfg.fd_step * max(1.0, abs(x_bar[i]))
            vals = []
            for s in (1.0, -1.0):
                xp = x_bar.copy()
                xp[i] += s * h
                try:
                    vals.append(self.vcbf(xp, d_hat, warm)[0])
                except GeometryError:
                    vals.append(None)
            vp, vm = vals
            if vp is not None and vm is not None:
                grad[i] = (vp - vm) / (2 * h)
            elif vp is not None:
                grad[i] = (vp - v0) / h
                flags.append(f"one_sided_{i}")
            elif vm is not None:
                grad[i] = (v0 - vm) / h
                flags.append(f"one_sided_{i}")
            else:
                flags.append(f"no_gradient_{i}")
        return grad, tuple(flags)

    def vcbf_gradient_envelope(self, x_bar, d_hat, base):
        """Sensitivity of V_v through the MVIE optimality conditions.

        With duals mu_i of ``||B a_i|| + a_i c <= b_i``, d(log det B) equals
        sum_i mu_i d(b_i - ||B a_i|| - a_i c) at fixed (B, c); the polytope
        data are differentiated by central differences (no extra MVIE solves).
        """
        v0, res = base
        B, c = res.ellipsoid.B, res.ellipsoid.c
        mu = res.duals
        x_bar = np.asarray(x_bar, dtype=float)

        # box rows do not depend on the state, so only barrier rows contribute
        mu = mu[self._box[0].shape[0]:]

        def resid(z):
            A, b = barrier_rows(self.bset, z, d_hat, self.gains, z[-1], self.cfg.method.mode)[:2]
            return b - np.sqrt(np.einsum("ij,ij->i", A @ B, A @ B)) - A @ c

        grad = np.zeros_like(x_bar)
        for i in range(x_bar.size):
            h = self.cfg.fd_step * max(1.0, abs(x_bar[i]))
            e = np.zeros_like(x_bar)
            e[i] = h
            grad[i] = mu @ (resid(x_bar + e) - resid(x_bar - e)) / (2 * h)
        return (v0 + self.cfg.xi) * grad, ()

    # -- the filter ---------------------------------------------------------------
    def step(self, x_bar, u_ref, d_hat, t=None) -> FilterOutput:
        x_bar = np.asarray(x_bar, dtype=float)
        u_ref = np.asarray(u_ref, dtype=float)
        if not np.all(np.isfinite(u_ref)):
            raise ValueError("u_ref must be finite")
        if t is None:
            t = float(x_bar[-1])
        d_hat = np.zeros_like(x_bar) if d_hat is None else np.asarray(d_hat, dtype=float)
        sp = self.space(x_bar, d_hat, t)
        P = sp.polytope
        if P.is_empty():
            u = fallback_input(sp, u_ref, self.input_box)
            vv = -self.cfg.xi if self.cfg.method.uses_vcbf else None
            return FilterOutput(u, 0.0, QpStatus.INFEASIBLE, vv, (), sp)
        if not self.cfg.method.uses_vcbf:
            sol = solve_qp(_proj_qp(P.A, P.b, u_ref))
            return self._out(sol, u_ref, sp, None, 0)

        flags = []
        try:
            base = self.vcbf(x_bar, d_hat, self._warm)
        except GeometryError:
            # degrade to the plain constraint set for this step
            self._warm = None
            sol = solve_qp(_proj_qp(P.A, P.b, u_ref))
            return self._out(sol, u_ref, sp, -self.cfg.xi, 0, ("mvie_failed",))
        vv, res = base
        self._warm = res.ellipsoid
        if self.cfg.gradient == "fd":
            grad, fl = self.vcbf_gradient(x_bar, d_hat, base)
        else:
            grad, fl = self.vcbf_gradient_envelope(x_bar, d_hat, base)
        flags.extend(fl)
        lf = float(grad @ self.plant.f_bar(x_bar))
        lg = grad @ self.plant.g_bar(x_bar)
        lam = 0.0
        if self.cfg.method is Method.DOB_VCBF:
            lam = float(grad @ d_hat - np.linalg.norm(grad) * envelope(self.gains, t))
        # -(lf + lg u + lam) <= lambda_vv vv - delta
        sol = solve_qp(_proj_qp(P.A, P.b, u_ref, self.cfg.M, (-lg, lf + lam + self.cfg.lambda_vv * vv)))
        out = self._out(sol, u_ref, sp, vv, 1, tuple(flags))
        out.grad_vv = grad
        return out

    def _out(self, sol: QpSolution, u_ref, sp, vv, n_slack, flags=()):
        m = u_ref.size
        if not sol.ok:
            if sol.status is QpStatus.INFEASIBLE:
                u = np.clip(u_ref, *self.input_box)
            else:
                u = np.clip(sol.z[:m], *self.input_box)
            return FilterOutput(u, 0.0, sol.status, vv, (), sp, tuple(flags))
        u = sol.z[:m].copy()
        slack = float(sol.z[m]) if n_slack else 0.0
        return FilterOutput(u, slack, QpStatus.OPTIMAL, vv, tuple(int(i) for i in sol.active), sp, tuple(flags))


def filter_step(cfg: FilterConfig, x_bar, u_ref, barriers, input_box, d_hat, g, t, plant=None) -> FilterOutput:
    """Stateless single step (no warm start carried between calls)."""
    if plant is None:
        if not isinstance(barriers, BarrierSet):
            raise ValueError("plant is required when barriers is a list of specs")
        plant = barriers.plant
    return SafetyFilter(cfg, plant, barriers, input_box, g).step(x_bar, u_ref, d_hat, t)


def vcbf_gradient(x_bar, barriers, input_box, d_hat, g, t, fd_step=1e-4, plant=None, method=Method.DOB_VCBF):
    """Finite-difference gradient of V_v over the extended state.

    ``t`` must agree with ``x_bar[-1]``; it is accepted for symmetry with the
    other filter entry points.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if not math.isclose(float(x_bar[-1]), float(t), abs_tol=1e-12):
        raise ValueError("t must equal the time coordinate of x_bar")
    if plant is None:
        plant = barriers.plant
    f = SafetyFilter(FilterConfig(method=method, fd_step=fd_step), plant, barriers, input_box, g)
    return f.vcbf_gradient(x_bar, d_hat)
