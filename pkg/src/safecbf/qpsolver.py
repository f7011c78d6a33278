"""Dense primal active-set solver for small strictly convex QPs.

    minimize  0.5 z'Hz + q'z   subject to  A z <= b

Emptiness of the constraint set is decided up front with the Chebyshev LP, so an
``Infeasible`` status always means "no point satisfies the constraints", never a
numerical breakdown of the active-set loop.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import EmptyPolytope, Polytope, UnboundedFeasibleSpace, chebyshev_center


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class QpProblem:
    H: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b disagree on the number of constraints")
        if not np.allclose(self.H, self.H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        if np.linalg.eigvalsh(self.H).min() <= 1e-12:
            raise ValueError("H must be positive definite")

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.q @ z)


@dataclass
class QpSolution:
    status: QpStatus
    z: np.ndarray
    duals: np.ndarray
    kkt_residual: float
    iterations: int = 0
    active: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residuals(p: QpProblem, z, duals) -> dict:
    slack = p.A @ z - p.b
    return {
        "stationarity": float(np.max(np.abs(p.H @ z + p.q + p.A.T @ duals), initial=0.0)),
        "primal": float(np.max(slack, initial=0.0)),
        "dual": float(np.max(-duals, initial=0.0)),
        "complementarity": float(np.max(np.abs(duals * slack), initial=0.0)),
    }


def _feasible_start(p: QpProblem):
    poly = Polytope(p.A, p.b)
    try:
        center, _ = chebyshev_center(poly)
    except UnboundedFeasibleSpace:
        # clip to a large box so the LP still returns an interior point
        big = 1e6 * max(1.0, float(np.max(np.abs(p.b), initial=1.0)))
        box = Polytope.box(-big * np.ones(p.n), big * np.ones(p.n))
        center, _ = chebyshev_center(poly.stacked(box.A, box.b))
    return center


def _eqp(H, q, AW, bW):
    n = q.size
    w = AW.shape[0]
    K = np.zeros((n + w, n + w))
    K[:n, :n] = H
    K[:n, n:] = AW.T
    K[n:, :n] = AW
    sol = np.linalg.solve(K, np.concatenate([-q, bW]))
    return sol[:n], sol[n:]


def solve_qp(p: QpProblem, tol: float = 1e-9, x0=None, max_iter: int | None = None) -> QpSolution:
    n, k = p.n, p.A.shape[0]
    if k == 0:
        z = np.linalg.solve(p.H, -p.q)
        duals = np.zeros(0)
        return QpSolution(QpStatus.OPTIMAL, z, duals, max(kkt_residuals(p, z, duals).values()))
    if x0 is not None and np.all(p.A @ np.asarray(x0, dtype=float) <= p.b):
        z = np.asarray(x0, dtype=float).copy()
    else:
        try:
            z = _feasible_start(p)
        except EmptyPolytope:
            return QpSolution(QpStatus.INFEASIBLE, np.full(n, np.nan), np.zeros(k), np.inf)
    scale = np.maximum(1.0, np.abs(p.b))
    W = [i for i in range(k) if abs(p.A[i] @ z - p.b[i]) <= 1e-12 * scale[i]]
    # keep only an independent subset of the initially active rows
    if W:
        keep = []
        for i in W:
            if np.linalg.matrix_rank(p.A[keep + [i]]) == len(keep) + 1:
                keep.append(i)
        W = keep[:n]
    max_iter = max_iter or 10 * (n + k) + 20
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        target, lam = _eqp(p.H, p.q, p.A[W], p.b[W])
        step = target - z
        if np.max(np.abs(step)) <= 1e-13 * max(1.0, np.max(np.abs(z))):
            z = target
            if lam.size == 0 or lam.min() >= -tol:
                return _finish(p, z, W, lam, it, tol)
            W.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        block = -1
        Ap = p.A @ step
        gap = p.b - p.A @ z
        for i in range(k):
            if i in W or Ap[i] <= 1e-14 * np.linalg.norm(p.A[i]) * np.linalg.norm(step):
                continue
            ratio = max(gap[i], 0.0) / Ap[i]
            if ratio < alpha:
                alpha = ratio
                block = i
        z = z + alpha * step
        if block >= 0:
            W.append(block)
    duals = np.zeros(k)
    duals[W] = lam[: len(W)] if lam.size == len(W) else 0.0
    return QpSolution(QpStatus.MAX_ITERATIONS, z, duals, max(kkt_residuals(p, z, duals).values()), max_iter, tuple(W))


def _finish(p, z, W, lam, it, tol):
    duals = np.zeros(p.A.shape[0])
    duals[W] = np.maximum(lam, 0.0)
    res = kkt_residuals(p, z, duals)
    return QpSolution(QpStatus.OPTIMAL, z, duals, max(res.values()), it, tuple(sorted(W)))
