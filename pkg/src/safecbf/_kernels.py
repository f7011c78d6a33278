"""Compiled closed-loop integrator (plant + observer + diagnostics, input held).

Mirrors ``sim._Loop.rhs`` exactly; the Python version stays as the readable
reference and the tests compare the two.
"""
import math

import numpy as np
from numba import njit

BLIMP, ACKERMANN, DOUBLE_INTEGRATOR = 0, 1, 2
PLANT_IDS = {"blimp": BLIMP, "ackermann": ACKERMANN, "double_integrator": DOUBLE_INTEGRATOR}


@njit(cache=True)
def _model(pid, x, u, prm, out):
    # nominal drift f(x) + g(x) u into out[:n]
    if pid == BLIMP:
        m, J, cd = prm[0], prm[1], prm[2]
        out[0] = x[4]
        out[1] = x[5]
        out[2] = x[6]
        out[3] = u[2] / J
        out[4] = (u[0] * math.cos(x[3]) - cd * x[4]) / m
        out[5] = (u[0] * math.sin(x[3]) - cd * x[5]) / m
        out[6] = (u[1] - cd * x[6]) / m
    elif pid == ACKERMANN:
        out[0] = x[3] * math.cos(x[2])
        out[1] = x[3] * math.sin(x[2])
        out[2] = u[1]
        out[3] = u[0] / prm[0]
    else:
        out[0] = x[2]
        out[1] = x[3]
        out[2] = u[0]
        out[3] = u[1]


@njit(cache=True)
def _rhs(pid, y, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, out, model, dtrue, drate):
    N = n + 1
    t = y[n]
    _model(pid, y, u, prm, model)
    model[n] = 1.0
    s_t = math.sin(w * t + ph) if sinus else 0.0
    c_t = math.cos(w * t + ph) * w if sinus else 0.0
    nd = D.shape[1]
    for i in range(N):
        dtrue[i] = 0.0
        drate[i] = 0.0
    for i in range(n):
        acc = 0.0
        rate = 0.0
        for j in range(nd):
            acc += D[i, j] * (off[j] + amp[j] * s_t)
            rate += D[i, j] * amp[j] * c_t
        dtrue[i] = acc
        drate[i] = rate
    L = 0.0
    for i in range(N):
        xt = y[i] - y[N + i]
        dh = ga * xt + y[2 * N + i]
        if eps > 0:
            s = math.tanh(xt / eps)
        else:
            s = 1.0 if xt > 0 else (-1.0 if xt < 0 else 0.0)
        out[i] = model[i] + dtrue[i]
        out[N + i] = model[i] + dh + al * xt
        out[2 * N + i] = (ga * al + 1.0) * xt + be * s
        L += (dtrue[i] - dh) * (drate[i] - be * s)
    out[3 * N] = -ka * y[3 * N] - L


@njit(cache=True)
def integrate(pid, y, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, dt, steps):
    """``steps`` RK4 steps in place; returns -1 or the index of a non-finite component."""
    K = y.size
    k1 = np.empty(K)
    k2 = np.empty(K)
    k3 = np.empty(K)
    k4 = np.empty(K)
    tmp = np.empty(K)
    model = np.empty(n + 1)
    dtrue = np.empty(n + 1)
    drate = np.empty(n + 1)
    for _ in range(steps):
        _rhs(pid, y, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, k1, model, dtrue, drate)
        for i in range(K):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _rhs(pid, tmp, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, k2, model, dtrue, drate)
        for i in range(K):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _rhs(pid, tmp, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, k3, model, dtrue, drate)
        for i in range(K):
            tmp[i] = y[i] + dt * k3[i]
        _rhs(pid, tmp, u, prm, D, off, amp, w, ph, sinus, al, be, ga, ka, eps, n, k4, model, dtrue, drate)
        for i in range(K):
            v = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(v):
                return i
            y[i] = v
    return -1
