"""Independent reference computations shared by the unit and acceptance tests."""
import math

import numpy as np


def random_polytope(rng, m, k):
    """Random directions around an interior point, clipped to a box so it is bounded."""
    from safecbf.geometry import Polytope
    A = rng.normal(size=(k, m))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    x0 = rng.normal(scale=0.3, size=m)
    b = A @ x0 + rng.uniform(0.2, 2.0, size=k)
    box = Polytope.box(-3 * np.ones(m), 3 * np.ones(m))
    return Polytope(np.vstack([A, box.A]), np.concatenate([b, box.b]))


def random_qp(rng, n_half=None, L=None):
    """Random 2-D strictly convex QP over a box plus up to four halfspaces.

    Every halfspace passes on the far side of a common anchor point inside the
    box, so the constraint set is never empty.
    """
    L = float(rng.uniform(0.5, 3.0)) if L is None else L
    R = rng.normal(size=(2, 2))
    H = R @ R.T + rng.uniform(0.1, 2.0) * np.eye(2)
    q = rng.normal(scale=3.0, size=2)
    anchor = rng.uniform(-0.8 * L, 0.8 * L, size=2)
    k = rng.integers(0, 5) if n_half is None else n_half
    rows, rhs = [np.eye(2), -np.eye(2)], [L * np.ones(2), L * np.ones(2)]
    for _ in range(k):
        a = rng.normal(size=2)
        a /= np.linalg.norm(a)
        rows.append(a[None])
        rhs.append(np.array([a @ anchor + rng.uniform(0.0, 0.5 * L)]))
    return H, q, np.vstack(rows), np.concatenate(rhs), L


def _grid_min(gx, gy, H, q, A, b):
    """Minimum over the feasible points of the tensor grid ``gx x gy``."""
    X, Y = gx[None, :], gy[:, None]
    f = 0.5 * (H[0, 0] * X * X + (H[0, 1] + H[1, 0]) * X * Y + H[1, 1] * Y * Y) + q[0] * X + q[1] * Y
    ok = np.ones(f.shape, dtype=bool)
    for a, bi in zip(A, b):
        ok &= a[0] * X + a[1] * Y <= bi + 1e-12
    return float(f[ok].min()) if ok.any() else math.inf


def grid_qp_min(H, q, A, b, L, n=400):
    """Best objective over an n x n grid of feasible points in [-L, L]^2."""
    g = np.linspace(-L, L, n)
    return _grid_min(g, g, H, q, A, b)


def local_grid_min(H, q, A, b, L, center, n=400, width=1e-3):
    """Same search on a square of half-width ``width * L`` around ``center``.

    Resolves optima at sharp vertices, where the global grid is too coarse.
    """
    g = np.linspace(-width * L, width * L, n)
    return _grid_min(center[0] + g, center[1] + g, H, q, A, b)


def steiner_area(vertices):
    """Area of the Steiner inellipse of a triangle: pi * area / (3 sqrt 3)."""
    p = np.asarray(vertices, dtype=float)
    u, v = p[1] - p[0], p[2] - p[0]
    tri = 0.5 * abs(u[0] * v[1] - u[1] * v[0])
    return math.pi * tri / (3.0 * math.sqrt(3.0))


def observer_envelope(delta1, lam_v, t):
    """Observer error envelope ``delta1 * exp(-lam_v t / 2)``."""
    return delta1 * np.exp(-0.5 * lam_v * np.asarray(t, dtype=float))
