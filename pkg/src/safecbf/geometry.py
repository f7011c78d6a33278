"""Feasible input polytopes and their maximum-volume inscribed ellipsoids.

The polytope is kept in H-form ``{u : A u <= b}``.  The inscribed ellipsoid is
``{B w + c : ||w|| <= 1}`` with ``B`` symmetric positive definite; its volume is
proportional to ``det B``, which is exactly what the volume barrier uses.

Both numerical kernels (the Chebyshev-ball LP and the log-det barrier Newton
method) are jitted; they run tens of thousands of times per simulated second
when the volume barrier is differentiated by finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

FEAS_TOL = 1e-9


class GeometryError(ValueError):
    pass


class EmptyPolytope(GeometryError):
    """The constraint set has no interior (largest inscribed ball below tolerance)."""


class InfeasibleSpace(EmptyPolytope):
    pass


class UnboundedFeasibleSpace(GeometryError):
    pass


class ConvergenceFailure(GeometryError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class Polytope:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise GeometryError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]} entries")
        if self.A.shape[1] < 1:
            raise GeometryError("polytope needs at least one input dimension")

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        m = lower.size
        return cls(np.vstack([np.eye(m), -np.eye(m)]), np.concatenate([upper, -lower]))

    def stacked(self, A_extra, b_extra) -> "Polytope":
        return Polytope(np.vstack([self.A, np.atleast_2d(A_extra)]), np.concatenate([self.b, np.ravel(b_extra)]))

    def residuals(self, u) -> np.ndarray:
        """Constraint values ``A u - b`` (non-positive means satisfied)."""
        return self.A @ np.asarray(u, dtype=float) - self.b

    def is_empty(self, tol: float = FEAS_TOL) -> bool:
        """True when the Chebyshev radius is below ``tol``."""
        try:
            chebyshev_center(self, tol)
        except EmptyPolytope:
            return True
        except UnboundedFeasibleSpace:
            return False
        return False


@dataclass
class Ellipsoid:
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)

    @property
    def m(self) -> int:
        return self.c.size

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.B))

    def support(self, a) -> float:
        """max of ``a @ u`` over the ellipsoid."""
        a = np.asarray(a, dtype=float)
        return float(np.linalg.norm(self.B @ a) + a @ self.c)


@dataclass
class MvieResult:
    ellipsoid: Ellipsoid
    duals: np.ndarray
    iterations: int
    gap: float


def contains(p: Polytope, u, slack_tol: float = FEAS_TOL) -> bool:
    return bool(np.all(p.residuals(u) <= slack_tol))


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)


def vcbf_value(e: Ellipsoid, xi: float) -> float:
    """Volume-barrier value: unit-ball volume times ``det B`` minus the margin ``xi``."""
    return unit_ball_volume(e.m) * e.det - xi


# --------------------------------------------------------------------------- LP


@njit(cache=True)
def _simplex_max_last(T, basis):
    """Bland-rule tableau simplex, maximizing the variable in column ``nv - 1``.

    T has k constraint rows plus a final objective row; the last column is the
    right-hand side. Returns 0 optimal, 1 unbounded, 2 iteration limit.
    """
    k = T.shape[0] - 1
    ncol = T.shape[1] - 1
    for _ in range(50 * (ncol + k)):
        enter = -1
        for j in range(ncol):
            if T[k, j] < -1e-12:
                enter = j
                break
        if enter < 0:
            return 0
        leave = -1
        best = np.inf
        for i in range(k):
            if T[i, enter] > 1e-12:
                ratio = T[i, ncol] / T[i, enter]
                if ratio < best - 1e-14 or (abs(ratio - best) <= 1e-14 and basis[i] < basis[leave]):
                    best = ratio
                    leave = i
        if leave < 0:
            return 1
        piv = T[leave, enter]
        for j in range(ncol + 1):
            T[leave, j] /= piv
        for i in range(k + 1):
            if i != leave:
                f = T[i, enter]
                if f != 0.0:
                    for j in range(ncol + 1):
                        T[i, j] -= f * T[leave, j]
        basis[leave] = enter
    return 2


@njit(cache=True)
def _chebyshev_kernel(A, b):
    k, m = A.shape
    norms = np.sqrt(np.sum(A * A, axis=1))
    shift = 0.0
    for i in range(k):
        shift = max(shift, -b[i] / norms[i])
    shift += 1.0
    nv = 2 * m + 1
    T = np.zeros((k + 1, nv + k + 1))
    for i in range(k):
        for j in range(m):
            T[i, j] = A[i, j]
            T[i, m + j] = -A[i, j]
        T[i, 2 * m] = norms[i]
        T[i, nv + i] = 1.0
        T[i, -1] = b[i] + norms[i] * shift
    T[k, 2 * m] = -1.0
    basis = np.empty(k, dtype=np.int64)
    for i in range(k):
        basis[i] = nv + i
    status = _simplex_max_last(T, basis)
    x = np.zeros(nv)
    for i in range(k):
        if basis[i] < nv:
            x[basis[i]] = T[i, -1]
    center = x[:m] - x[m:2 * m]
    radius = x[2 * m] - shift
    return status, center, radius


def chebyshev_center(p: Polytope, tol: float = FEAS_TOL):
    """Center and radius of the largest ball inside ``p``.

    Raises :class:`EmptyPolytope` when the radius is below ``tol`` and
    :class:`UnboundedFeasibleSpace` when every ball fits.
    """
    norms = np.linalg.norm(p.A, axis=1)
    flat = norms <= 1e-14
    if np.any(p.b[flat] < -tol):
        raise EmptyPolytope("a row with zero normal has a negative offset")
    if np.all(flat):
        raise UnboundedFeasibleSpace("no row has a nonzero normal")
    status, center, radius = _chebyshev_kernel(np.ascontiguousarray(p.A[~flat]), np.ascontiguousarray(p.b[~flat]))
    if status == 1:
        raise UnboundedFeasibleSpace("inscribed ball radius is unbounded")
    if status == 2:
        raise ConvergenceFailure("Chebyshev LP hit the pivot limit")
    if radius < tol:
        raise EmptyPolytope(f"largest inscribed ball has radius {radius:.3e}")
    return center, float(radius)


# ------------------------------------------------------------------------ MVIE


@njit(cache=True)
def _sym_index(m):
    nb = m * (m + 1) // 2
    rows = np.empty(nb, dtype=np.int64)
    cols = np.empty(nb, dtype=np.int64)
    p = 0
    for j in range(m):
        for l in range(j, m):
            rows[p] = j
            cols[p] = l
            p += 1
    return rows, cols


@njit(cache=True)
def _slacks(A, b, B, c):
    k = A.shape[0]
    s = np.empty(k)
    for i in range(k):
        w = B @ A[i]
        s[i] = b[i] - A[i] @ c - math.sqrt(w @ w)
    return s


@njit(cache=True)
def _cholesky(M, L):
    n = M.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for q in range(j):
                s -= L[i, q] * L[j, q]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _merit(A, b, B, c, t, L):
    """Barrier merit ``-t log det B - sum log s_i`` (inf outside the domain)."""
    m = B.shape[0]
    if not _cholesky(B, L):
        return np.inf
    val = 0.0
    for i in range(m):
        val -= 2.0 * t * math.log(L[i, i])
    for i in range(A.shape[0]):
        nw2 = 0.0
        ac = 0.0
        for r in range(m):
            w = 0.0
            for q in range(m):
                w += B[r, q] * A[i, q]
            nw2 += w * w
            ac += A[i, r] * c[r]
        si = b[i] - ac - math.sqrt(nw2)
        if si <= 0.0:
            return np.inf
        val -= math.log(si)
    return val


@njit(cache=True)
def _newton_system(A, b, B, c, t, rows, cols, grad, H, Bi, L, w, gi):
    k, m = A.shape
    nb = rows.size
    nv = nb + m
    # B^{-1} from the Cholesky factor
    _cholesky(B, L)
    for col in range(m):
        # solve L y = e_col, then L^T x = y
        for i in range(m):
            s = 1.0 if i == col else 0.0
            for q in range(i):
                s -= L[i, q] * w[q]
            w[i] = s / L[i, i]
        for i in range(m - 1, -1, -1):
            s = w[i]
            for q in range(i + 1, m):
                s -= L[q, i] * Bi[q, col]
            Bi[i, col] = s / L[i, i]
    for p in range(nv):
        grad[p] = 0.0
        for q in range(nv):
            H[p, q] = 0.0
    # -t log det B; E_p has rank-one parts e_j e_l^T (+ e_l e_j^T off the diagonal)
    for p in range(nb):
        j = rows[p]
        l = cols[p]
        grad[p] = -t * (2.0 * Bi[j, l] if j != l else Bi[j, j])
        for q in range(p, nb):
            a_ = rows[q]
            b_ = cols[q]
            tr = 0.0
            for pp in range(2 if j != l else 1):
                pj = j if pp == 0 else l
                pl = l if pp == 0 else j
                for qq in range(2 if a_ != b_ else 1):
                    qa = a_ if qq == 0 else b_
                    qb = b_ if qq == 0 else a_
                    tr += Bi[pl, qa] * Bi[qb, pj]
            H[p, q] += t * tr
            if q != p:
                H[q, p] += t * tr
    # -sum log s_i with s_i = b_i - a_i c - ||B a_i||
    for i in range(k):
        nw2 = 0.0
        ac = 0.0
        for r in range(m):
            acc = 0.0
            for q in range(m):
                acc += B[r, q] * A[i, q]
            w[r] = acc
            nw2 += acc * acc
            ac += A[i, r] * c[r]
        nw = math.sqrt(nw2)
        inv_s = 1.0 / (b[i] - ac - nw)
        for r in range(m):
            w[r] /= nw
        for p in range(nb):
            j = rows[p]
            l = cols[p]
            if j != l:
                gi[p] = A[i, l] * w[j] + A[i, j] * w[l]
            else:
                gi[p] = A[i, j] * w[j]
        for r in range(m):
            gi[nb + r] = A[i, r]
        for p in range(nv):
            grad[p] += gi[p] * inv_s
            for q in range(nv):
                H[p, q] += gi[p] * gi[q] * inv_s * inv_s
        # curvature of ||B a_i||: (M_p . M_q - g_p g_q) / ||B a_i||
        scale = inv_s / nw
        for p in range(nb):
            j = rows[p]
            l = cols[p]
            for q in range(p, nb):
                a_ = rows[q]
                b_ = cols[q]
                mm = 0.0
                for pp in range(2 if j != l else 1):
                    pidx = j if pp == 0 else l
                    pcoef = A[i, l] if pp == 0 else A[i, j]
                    for qq in range(2 if a_ != b_ else 1):
                        qidx = a_ if qq == 0 else b_
                        qcoef = A[i, b_] if qq == 0 else A[i, a_]
                        if pidx == qidx:
                            mm += pcoef * qcoef
                val = (mm - gi[p] * gi[q]) * scale
                H[p, q] += val
                if q != p:
                    H[q, p] += val


@njit(cache=True)
def _mvie_kernel(A, b, B, c, t, t_final, mu, max_iter):
    """Path-following barrier Newton method for max log det B s.t. ||B a_i|| + a_i c <= b_i.

    Returns (status, B, c, t, iterations, slacks); status 0 converged, 1 limit, 2 numerical.
    """
    k, m = A.shape
    rows, cols = _sym_index(m)
    nb = rows.size
    nv = nb + m
    B = B.copy()
    c = c.copy()
    Bn = np.empty((m, m))
    cn = np.empty(m)
    grad = np.empty(nv)
    H = np.empty((nv, nv))
    LH = np.empty((nv, nv))
    step = np.empty(nv)
    Bi = np.empty((m, m))
    L = np.empty((m, m))
    w = np.empty(m)
    gi = np.empty(nv)
    iters = 0
    while True:
        while True:
            _newton_system(A, b, B, c, t, rows, cols, grad, H, Bi, L, w, gi)
            if not _cholesky(H, LH):
                return 2, B, c, t, iters, _slacks(A, b, B, c)
            for i in range(nv):
                s = -grad[i]
                for q in range(i):
                    s -= LH[i, q] * step[q]
                step[i] = s / LH[i, i]
            for i in range(nv - 1, -1, -1):
                s = step[i]
                for q in range(i + 1, nv):
                    s -= LH[q, i] * step[q]
                step[i] = s / LH[i, i]
            dec = 0.0
            for i in range(nv):
                dec -= grad[i] * step[i]
            if not np.isfinite(dec):
                return 2, B, c, t, iters, _slacks(A, b, B, c)
            # suboptimality left by a centering step is about dec / t
            if dec <= 1e-7:
                break
            f0 = _merit(A, b, B, c, t, L)
            alpha = 1.0
            accepted = False
            for _ in range(60):
                for p in range(nb):
                    Bn[rows[p], cols[p]] = B[rows[p], cols[p]] + alpha * step[p]
                    Bn[cols[p], rows[p]] = Bn[rows[p], cols[p]]
                for r in range(m):
                    cn[r] = c[r] + alpha * step[nb + r]
                if _merit(A, b, Bn, cn, t, L) <= f0 - 0.25 * alpha * dec:
                    accepted = True
                    break
                alpha *= 0.5
            iters += 1
            if not accepted:
                if dec < 1e-5:
                    break
                return 2, B, c, t, iters, _slacks(A, b, B, c)
            B[:, :] = Bn
            c[:] = cn
            # at large t the merit loses resolution before dec reaches 1e-7
            if alpha < 1e-6 and dec < 1e-4:
                break
            if iters >= max_iter:
                return 1, B, c, t, iters, _slacks(A, b, B, c)
        if t >= t_final:
            return 0, B, c, t, iters, _slacks(A, b, B, c)
        t = min(mu * t, t_final)


def _clean_rows(p: Polytope, tol: float):
    norms = np.linalg.norm(p.A, axis=1)
    flat = norms <= 1e-14
    if np.any(p.b[flat] < -tol):
        raise InfeasibleSpace("a row with zero normal has a negative offset")
    return np.ascontiguousarray(p.A[~flat]), np.ascontiguousarray(p.b[~flat]), ~flat


def solve_mvie(p: Polytope, tol: float = 1e-8, max_iter: int = 200, warm_start: Ellipsoid | None = None) -> MvieResult:
    """Maximum-volume inscribed ellipsoid with solver diagnostics.

    ``tol`` bounds the duality gap of ``-log det B``. A ``warm_start``
    ellipsoid (typically the solution for a nearby polytope) is shrunk until it
    is strictly inside ``p`` and the path is resumed close to its end; if that
    fails the solve restarts from the Chebyshev ball.
    """
    A, b, kept = _clean_rows(p, FEAS_TOL)
    k, m = A.shape
    t_final = k / tol
    if warm_start is not None:
        res = _warm(A, b, warm_start, t_final, max_iter)
        if res is not None:
            return _finish(res, kept, k, p.k)
    try:
        center, radius = chebyshev_center(Polytope(A, b))
    except EmptyPolytope as exc:
        raise InfeasibleSpace(str(exc)) from exc
    B0 = 0.5 * radius * np.eye(m)
    res = _mvie_kernel(A, b, B0, center.copy(), 10.0, t_final, 50.0, max_iter)
    return _finish(res, kept, k, p.k)


def _warm(A, b, e: Ellipsoid, t_final, max_iter):
    if e.m != A.shape[1]:
        return None
    for shrink in (0.999, 0.99, 0.95, 0.8):
        B = shrink * e.B
        s = _slacks(A, b, B, e.c)
        if np.all(s > 0):
            res = _mvie_kernel(A, b, B, e.c.copy(), t_final / 2500.0, t_final, 50.0, max_iter)
            if res[0] == 0:
                return res
            return None
    return None


def _finish(res, kept, k_clean, k_full) -> MvieResult:
    status, B, c, t, iters, slacks = res
    if status != 0:
        raise ConvergenceFailure(
            "MVIE barrier method " + ("hit the iteration limit" if status == 1 else "stalled"),
            residuals={"iterations": iters, "t": t, "min_slack": float(np.min(slacks))},
        )
    duals = np.zeros(k_full)
    duals[kept] = 1.0 / (t * slacks)
    B = 0.5 * (B + B.T)
    return MvieResult(Ellipsoid(B, c), duals, int(iters), k_clean / t)


def max_inscribed_ellipsoid(p: Polytope, tol: float = 1e-8, warm_start: Ellipsoid | None = None) -> Ellipsoid:
    return solve_mvie(p, tol=tol, warm_start=warm_start).ellipsoid


# ------------------------------------------------------------------- text I/O


def parse_polytope(text: str) -> Polytope:
    """Parse ``m k`` followed by k lines ``a_1 ... a_m b``; ``#`` starts a comment."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not numbered:
        raise GeometryError("empty polytope file")
    lineno, head = numbered[0]
    try:
        m, k = (int(v) for v in head.split())
    except ValueError:
        raise GeometryError(f"line {lineno}: expected 'm k', got {head!r}") from None
    if len(numbered) - 1 != k:
        raise GeometryError(f"header declares {k} rows but {len(numbered) - 1} follow")
    A = np.empty((k, m))
    b = np.empty(k)
    for r, (lineno, ln) in enumerate(numbered[1:]):
        vals = ln.split()
        if len(vals) != m + 1:
            raise GeometryError(f"line {lineno}: expected {m + 1} numbers, got {len(vals)}")
        try:
            row = [float(v) for v in vals]
        except ValueError:
            raise GeometryError(f"line {lineno}: non-numeric entry") from None
        A[r] = row[:m]
        b[r] = row[m]
    return Polytope(A, b)


def read_polytope(path) -> Polytope:
    return parse_polytope(Path(path).read_text())


def format_polytope(p: Polytope) -> str:
    out = [f"{p.m} {p.k}"]
    for a, bi in zip(p.A, p.b):
        out.append(" ".join(repr(float(v)) for v in (*a, bi)))
    return "\n".join(out) + "\n"
