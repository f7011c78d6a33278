"""Closed-loop scenarios, logs, metrics and the Monte Carlo feasibility study."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .barriers import BarrierSet, BarrierSpec
from .geometry import GeometryError
from .numerics import IntegrationError, rk4_step
from .observer import ObserverGains, error_bound
from .plants import PLANTS, AckermannGains, BlimpGains, DIGains, DisturbanceSpec
from .qpsolver import QpStatus
from .safety_filters import FilterConfig, Method, SafetyFilter

GAIN_TYPES = {"blimp": BlimpGains, "ackermann": AckermannGains, "double_integrator": DIGains}
RUNTIME_CAP = 20.0


class InfeasibleInitialState(ValueError):
    pass


@dataclass(frozen=True)
class PlantConfig:
    kind: str
    x0: tuple
    target: tuple
    u_min: tuple = ()
    u_max: tuple = ()
    params: tuple = ()  # sorted (name, value) pairs
    gains: tuple = ()

    def build(self):
        if self.kind not in PLANTS:
            raise ValueError(f"unknown plant kind {self.kind!r}")
        gains = GAIN_TYPES[self.kind](**dict(self.gains))
        pl = PLANTS[self.kind](**dict(self.params), gains=gains)
        if len(self.x0) != pl.n:
            raise ValueError(f"{self.kind} needs {pl.n} initial state entries, got {len(self.x0)}")
        if len(self.target) != len(pl.pos_idx):
            raise ValueError(f"{self.kind} target needs {len(pl.pos_idx)} coordinates")
        return pl

    def box(self, plant):
        lo, hi = plant.default_box()
        if self.u_min:
            lo = np.asarray(self.u_min, dtype=float)
        if self.u_max:
            hi = np.asarray(self.u_max, dtype=float)
        if lo.size != plant.m or hi.size != plant.m:
            raise ValueError(f"input box needs {plant.m} entries per side")
        return lo, hi


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    control_dt: float = 1e-2
    t_final: float = 20.0
    target_tol: float = 0.1
    stop_on_infeasible: bool = False
    stop_at_target: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.control_dt > 0 and self.t_final > 0):
            raise ValueError("dt, control_dt and t_final must be positive")
        if self.dt > self.control_dt * (1 + 1e-12):
            raise ValueError("dt must not exceed control_dt")
        r = self.control_dt / self.dt
        if abs(r - round(r)) > 1e-9:
            raise ValueError("control_dt must be an integer multiple of dt")


@dataclass(frozen=True)
class InitialBox:
    """Absolute ranges for selected initial-state components."""
    ranges: tuple = (("x", (-0.1, 0.1)), ("y", (-0.1, 0.1)), ("z", (0.0, 0.2)))


@dataclass(frozen=True)
class GainBox:
    alpha: tuple = (4.6, 6.0)
    beta: tuple = (5.0, 7.0)
    gamma: tuple = (3.6, 4.4)


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantConfig
    barriers: tuple
    observer: ObserverGains
    filter: FilterConfig
    disturbance: DisturbanceSpec
    sim: SimConfig = SimConfig()
    seed: int = 0
    initial_box: InitialBox = InitialBox()
    gain_box: GainBox = GainBox()
    name: str = "scenario"

    def with_method(self, method) -> "ScenarioConfig":
        return dataclasses.replace(self, filter=dataclasses.replace(self.filter, method=Method(method)))


# ------------------------------------------------------------------------ logs


@dataclass
class SimLog:
    t: np.ndarray
    x: np.ndarray
    u_ref: np.ndarray
    u: np.ndarray
    slack: np.ndarray
    qp_status: list
    h: np.ndarray
    phi1: np.ndarray
    vv: np.ndarray
    d_true: np.ndarray
    d_hat: np.ndarray
    d_err: np.ndarray
    bound: np.ndarray
    hbar: np.ndarray
    hbar_v: np.ndarray
    P: np.ndarray
    V: np.ndarray
    active_rows: list
    flags: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def columns(self, state_names, input_names):
        nb = self.h.shape[1]
        nd = self.d_true.shape[1]
        cols = ["t"] + [f"x_{s}" for s in state_names]
        cols += [f"u_ref_{s}" for s in input_names] + [f"u_{s}" for s in input_names]
        cols += ["slack", "qp_status"]
        cols += [f"h_{i}" for i in range(nb)] + [f"phi1_{i}" for i in range(nb)]
        cols += ["Vv"] + [f"d_true_{j}" for j in range(nd)] + [f"d_hat_{j}" for j in range(nd)]
        cols += ["d_err_norm", "lemma2_bound"] + [f"hbar_{i}" for i in range(nb)]
        cols += ["hbarV", "P", "V", "active_rows"]
        return cols

    def rows(self):
        for k in range(len(self)):
            yield (
                [self.t[k], *self.x[k], *self.u_ref[k], *self.u[k], self.slack[k], self.qp_status[k]]
                + [*self.h[k], *self.phi1[k], self.vv[k], *self.d_true[k], *self.d_hat[k]]
                + [self.d_err[k], self.bound[k], *self.hbar[k], self.hbar_v[k], self.P[k], self.V[k]]
                + [" ".join(str(i) for i in self.active_rows[k])]
            )

    def write_csv(self, path, state_names, input_names):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns(state_names, input_names))
            for row in self.rows():
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


@dataclass
class RunMetrics:
    min_h: float
    min_Vv: float
    reached_target: bool
    time_to_target: float | None
    feasible_runtime: float
    max_slack: float
    mean_h: float
    min_hbar: float
    min_hbar_v: float
    max_bound_excess: float
    n_infeasible: int
    fault: str | None = None

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _nanmin(a):
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(a.min()) if a.size else float("nan")


def compute_metrics(log: SimLog, cfg: ScenarioConfig) -> RunMetrics:
    t_cap = cfg.sim.t_final
    infeasible = [k for k, s in enumerate(log.qp_status) if s == QpStatus.INFEASIBLE.value]
    feasible_runtime = float(log.t[infeasible[0]]) if infeasible else t_cap
    reached = bool(log.meta.get("reached_target", False))
    return RunMetrics(
        min_h=_nanmin(log.h),
        min_Vv=_nanmin(log.vv),
        reached_target=reached,
        time_to_target=float(log.t[-1]) if reached else None,
        feasible_runtime=min(feasible_runtime, t_cap),
        max_slack=float(np.max(np.abs(log.slack))) if len(log) else 0.0,
        mean_h=float(np.mean(log.h.min(axis=1))) if len(log) else float("nan"),
        min_hbar=_nanmin(log.hbar),
        min_hbar_v=_nanmin(log.hbar_v),
        max_bound_excess=float(np.max(log.d_err - log.bound)) if len(log) else 0.0,
        n_infeasible=len(infeasible),
        fault=log.meta.get("fault"),
    )


# ------------------------------------------------------------------ closed loop


class _Loop:
    """Joint plant + observer + diagnostics integrator with held input."""

    def __init__(self, plant, gains: ObserverGains, dist: DisturbanceSpec):
        self.plant = plant
        self.g = gains
        self.dist = dist
        self.D = plant.dist_map()
        self.n = plant.n
        self.N = plant.n + 1
        self.u = np.zeros(plant.m)
        self.prm = plant.kernel_params()

    def sign(self, v):
        if self.g.sign_eps > 0:
            return np.tanh(v / self.g.sign_eps)
        return np.sign(v)

    def d_bar(self, t):
        out = np.zeros(self.N)
        out[: self.n] = self.D @ self.dist.value(t, self.D.shape[1])
        return out

    def d_bar_rate(self, t):
        out = np.zeros(self.N)
        out[: self.n] = self.D @ self.dist.rate(t, self.D.shape[1])
        return out

    def advance(self, y, steps, dt):
        """Compiled equivalent of ``steps`` calls of ``rk4_step(self.rhs, ...)``."""
        g = self.g
        off, amp = self.dist._vecs(self.D.shape[1])
        bad = _kernels.integrate(
            _kernels.PLANT_IDS[self.plant.name], y, np.asarray(self.u, dtype=float), self.prm, self.D,
            off, amp, float(self.dist.frequency), float(self.dist.phase), self.dist.kind == "sinusoid",
            g.alpha, g.beta, g.gamma, g.kappa, g.sign_eps, self.n, dt, steps,
        )
        if bad >= 0:
            raise IntegrationError(bad, 4)
        return y

    def rhs(self, y):
        n, N, g = self.n, self.N, self.g
        xb = y[:N]
        xh = y[N : 2 * N]
        z = y[2 * N : 3 * N]
        x = xb[:n]
        t = xb[n]
        model = np.empty(N)
        model[:n] = self.plant.f(x) + self.plant.g(x) @ self.u
        model[n] = 1.0
        dtrue = self.d_bar(t)
        xt = xb - xh
        dh = g.gamma * xt + z
        s = self.sign(xt)
        out = np.empty(3 * N + 1)
        out[:N] = model + dtrue
        out[N : 2 * N] = model + dh + g.alpha * xt
        out[2 * N : 3 * N] = (g.gamma * g.alpha + 1.0) * xt + g.beta * s
        out[3 * N] = -g.kappa * y[3 * N] - (dtrue - dh) @ (self.d_bar_rate(t) - g.beta * s)
        return out


def initial_state(cfg: ScenarioConfig, plant=None):
    plant = plant or cfg.plant.build()
    return np.append(plant.normalize(cfg.plant.x0), 0.0)


def check_initial(cfg: ScenarioConfig):
    plant = cfg.plant.build()
    bset = BarrierSet(cfg.barriers, plant)
    h = bset.evaluate(initial_state(cfg, plant))[0]
    bad = [i for i, v in enumerate(h) if not v > 0]
    if bad:
        raise InfeasibleInitialState(f"initial state violates barrier(s) {bad}: h = {[float(h[i]) for i in bad]}")
    return h


def run_scenario(cfg: ScenarioConfig, compiled: bool = True) -> SimLog:
    plant = cfg.plant.build()
    bset = BarrierSet(cfg.barriers, plant)
    box = cfg.plant.box(plant)
    g = cfg.observer
    if cfg.disturbance.dim not in (0, plant.dist_dim):
        raise ValueError(f"disturbance has {cfg.disturbance.dim} axes, {plant.name} takes {plant.dist_dim}")
    check_initial(cfg)
    filt = SafetyFilter(cfg.filter, plant, bset, box, g)
    loop = _Loop(plant, g, cfg.disturbance)
    N = loop.N
    nb = len(bset)
    x0 = initial_state(cfg, plant)
    y = np.concatenate([x0, x0, np.zeros(N), [0.0]])
    sub = int(round(cfg.sim.control_dt / cfg.sim.dt))
    n_ctrl = int(math.floor(cfg.sim.t_final / cfg.sim.control_dt + 1e-9))
    target = np.asarray(cfg.plant.target, dtype=float)
    D = plant.dist_map()
    seen = cfg.disturbance.analytic_bounds(D)
    bounds_ok = cfg.disturbance.check_bounds(D) and all(
        a <= b + 1e-12 for a, b in zip(seen, (g.delta1, g.delta2, g.delta3)))
    meta = {
        "method": cfg.filter.method.value,
        "plant": plant.name,
        "name": cfg.name,
        "gain_condition": g.gain_condition(),
        "disturbance_within_bounds": bool(bounds_ok),
        "lemma2_certified": bool(g.gain_condition() and bounds_ok),
        "reached_target": False,
        "fault": None,
        "note": "" if plant.name != "blimp" else "barrier rows carry no tau_psi coefficient; yaw stays free within its box",
    }
    rec = {k: [] for k in ("t", "x", "u_ref", "u", "slack", "st", "h", "phi1", "vv", "dt", "dh", "err", "bd", "hbar", "hv", "P", "V", "act", "fl")}
    beta1 = None
    beta2 = cfg.filter.beta2
    for k in range(n_ctrl + 1):
        t = k * cfg.sim.control_dt
        xb = y[:N].copy()
        xb[-1] = t  # keep the time coordinate free of accumulated roundoff
        xh = y[N : 2 * N]
        z = y[2 * N : 3 * N]
        xt = xb - xh
        d_hat = g.gamma * xt + z
        x = xb[:-1]
        u_ref = plant.reference(x, target, d_hat)
        h, phi1, *_ = bset.evaluate(xb)
        try:
            out = filt.step(xb, u_ref, d_hat, t)
        except GeometryError as exc:
            meta["fault"] = f"geometry failure at t={t:.3f}: {exc}"
            break
        d_true = loop.d_bar(t)
        d_til = d_true - d_hat
        V = 0.5 * float(xt @ xt) + 0.5 * float(d_til @ d_til) + float(y[3 * N])
        if beta1 is None:
            beta1 = np.where(phi1 > 0, g.delta1**2 / (2.0 * np.where(phi1 > 0, phi1, 1.0)), np.nan)
        vv = np.nan if out.vcbf_value is None else out.vcbf_value
        if beta2 is None and np.isfinite(vv) and vv > 0:
            beta2 = g.delta1**2 / (2.0 * vv)
        rec["t"].append(t)
        rec["x"].append(x.copy())
        rec["u_ref"].append(u_ref)
        rec["u"].append(out.u)
        rec["slack"].append(out.slack)
        rec["st"].append(out.qp_status.value)
        rec["h"].append(h)
        rec["phi1"].append(phi1)
        rec["vv"].append(vv)
        rec["dt"].append(d_true)
        rec["dh"].append(d_hat.copy())
        rec["err"].append(float(np.linalg.norm(d_til)))
        rec["bd"].append(error_bound(t, g))
        rec["hbar"].append(beta1 * phi1 - V)
        rec["hv"].append(beta2 * vv - V if beta2 is not None else np.nan)
        rec["P"].append(float(y[3 * N]))
        rec["V"].append(V)
        rec["act"].append(out.active_rows)
        rec["fl"].append(" ".join(out.flags))
        if cfg.sim.stop_at_target and np.linalg.norm(plant.position(x) - target) <= cfg.sim.target_tol:
            meta["reached_target"] = True
            break
        if cfg.sim.stop_on_infeasible and out.qp_status is QpStatus.INFEASIBLE:
            break
        if k == n_ctrl:
            break
        loop.u = out.u
        try:
            if compiled:
                y = loop.advance(y, sub, cfg.sim.dt)
            else:
                for _ in range(sub):
                    y = rk4_step(loop.rhs, y, cfg.sim.dt)
        except IntegrationError as exc:
            meta["fault"] = f"integration fault at t={t:.3f}: {exc}"
            break
        for i in plant.angle_idx:
            # wrap the measured angle and its estimate together so x_tilde is unchanged
            w = math.remainder(y[i], 2 * math.pi) - y[i]
            y[i] += w
            y[N + i] += w
    meta["beta1"] = None if beta1 is None else [None if not np.isfinite(b) else float(b) for b in beta1]
    meta["beta2"] = None if beta2 is None else float(beta2)
    a = lambda key, w=None: np.array(rec[key], dtype=float).reshape(len(rec["t"]), -1) if w else np.array(rec[key], dtype=float)
    return SimLog(
        t=a("t"), x=a("x", 1), u_ref=a("u_ref", 1), u=a("u", 1), slack=a("slack"), qp_status=rec["st"],
        h=a("h", 1).reshape(-1, nb), phi1=a("phi1", 1).reshape(-1, nb), vv=a("vv"),
        d_true=a("dt", 1).reshape(-1, N), d_hat=a("dh", 1).reshape(-1, N), d_err=a("err"), bound=a("bd"),
        hbar=a("hbar", 1).reshape(-1, nb), hbar_v=a("hv"), P=a("P"), V=a("V"),
        active_rows=rec["act"], flags=rec["fl"], meta=meta,
    )


def write_outputs(log: SimLog, cfg: ScenarioConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    plant = cfg.plant.build()
    log.write_csv(os.path.join(out_dir, "log.csv"), plant.state_names, plant.input_names)
    m = compute_metrics(log, cfg)
    payload = {"metrics": m.to_dict(), "meta": log.meta}
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return m


# ----------------------------------------------------------------- Monte Carlo


def sample_config(base: ScenarioConfig, randomization, rng) -> ScenarioConfig:
    if isinstance(randomization, InitialBox):
        plant = base.plant.build()
        x0 = list(base.plant.x0)
        for name, (lo, hi) in randomization.ranges:
            x0[plant.state_names.index(name)] = float(rng.uniform(lo, hi))
        return dataclasses.replace(base, plant=dataclasses.replace(base.plant, x0=tuple(x0)))
    if isinstance(randomization, GainBox):
        vals = {k: float(rng.uniform(*getattr(randomization, k))) for k in ("alpha", "beta", "gamma")}
        return dataclasses.replace(base, observer=dataclasses.replace(base.observer, **vals))
    raise TypeError("randomization must be InitialBox or GainBox")


def _mc_task(args):
    cfg = args
    try:
        log = run_scenario(cfg)
    except InfeasibleInitialState as exc:
        return {"feasible_runtime": 0.0, "reached_target": False, "fault": str(exc)}
    m = compute_metrics(log, cfg)
    return {"feasible_runtime": m.feasible_runtime, "reached_target": m.reached_target, "fault": m.fault,
            "min_h": m.min_h}


def worker_count() -> int:
    env = os.environ.get("SAFECBF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError("SAFECBF_THREADS must be an integer") from None
    return 1


def monte_carlo(base: ScenarioConfig, n_runs: int, randomization, seed: int,
                methods=(Method.DOB_VCBF, Method.DOB_CBF), workers: int | None = None) -> dict:
    """Paired study: every method sees the same sampled configurations.

    Runs stop at the first infeasible QP or at the target; both give the
    capped feasible runtime. The summary is reduced in run-index order.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    rng = np.random.default_rng(seed)
    t_cap = min(base.sim.t_final, RUNTIME_CAP)
    base = dataclasses.replace(base, sim=dataclasses.replace(base.sim, t_final=t_cap, stop_on_infeasible=True))
    samples = [sample_config(base, randomization, rng) for _ in range(n_runs)]
    methods = [Method(m) for m in methods]
    tasks = [s.with_method(m) for m in methods for s in samples]
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_mc_task, tasks))
    else:
        results = [_mc_task(c) for c in tasks]
    summary = {"n_runs": n_runs, "seed": seed, "randomization": type(randomization).__name__,
               "runtime_cap": t_cap, "methods": {}}
    for j, m in enumerate(methods):
        rs = results[j * n_runs : (j + 1) * n_runs]
        times = [r["feasible_runtime"] for r in rs]
        summary["methods"][m.value] = {
            "mean_feasible_runtime": math.fsum(times) / n_runs,
            "reached_target": sum(bool(r["reached_target"]) for r in rs),
            "runs": rs,
        }
    return summary
