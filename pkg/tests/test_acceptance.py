"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Simulation runs are cached and shared between criteria; a criterion's time is
the wall time of the runs it uses, whichever test first triggered them.

Run on its own with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
The Monte Carlo criterion takes about ten minutes on one core.
"""
import dataclasses
import functools
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import grid_qp_min, local_grid_min, observer_envelope, random_polytope, random_qp, steiner_area  # noqa: E402
from safecbf.cli import check_gains  # noqa: E402
from safecbf.config import read_config  # noqa: E402
from safecbf.geometry import Polytope, max_inscribed_ellipsoid, solve_mvie  # noqa: E402
from safecbf.qpsolver import QpProblem, QpStatus, kkt_residuals, solve_qp  # noqa: E402
from safecbf.sim import compute_metrics, monte_carlo, run_scenario  # noqa: E402

SCEN = resources.files("safecbf") / "scenarios"
KP_SWEEP = (0.2, 0.4, 0.6, 0.8, 1.0)
RESULTS = []


def report(n, title, ok, elapsed, limit=None, detail=""):
    ok = bool(ok) and (limit is None or elapsed < limit)
    budget = f" (limit {limit:g} s)" if limit is not None else ""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} | {elapsed:.1f} s{budget} | {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def scenario(name):
    return read_config(SCEN / f"{name}.ini")


def with_kp(cfg, kp):
    gains = dict(cfg.plant.gains)
    gains["k_p"] = kp
    return dataclasses.replace(cfg, plant=dataclasses.replace(cfg.plant, gains=tuple(sorted(gains.items()))))


@functools.lru_cache(maxsize=None)
def simulate(name, method, kp=None, t_final=None):
    """Cached closed-loop run; returns (config, log, metrics, wall seconds)."""
    cfg = scenario(name).with_method(method)
    if kp is not None:
        cfg = with_kp(cfg, kp)
    if t_final is not None:
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, t_final=t_final))
    t0 = time.perf_counter()
    log = run_scenario(cfg)
    return cfg, log, compute_metrics(log, cfg), time.perf_counter() - t0


def test_observer_bound():
    t0 = time.perf_counter()
    cfg = scenario("test1_single_obstacle")
    cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, t_final=10.0, stop_at_target=False))
    log = run_scenario(cfg)
    env = observer_envelope(cfg.observer.delta1, cfg.observer.lambda_v, log.t)
    excess = float(np.max(log.d_err - env))
    ok = (cfg.observer.lambda_v == 4.0 and log.t[-1] >= 10.0 - 1e-9 and excess <= 1e-4)
    assert report(1, "observer error inside its envelope over 10 s", ok, time.perf_counter() - t0, 5.0,
                  f"max excess {excess:.2e}, samples {len(log)}")


def test_mvie_oracles():
    t0 = time.perf_counter()
    e = max_inscribed_ellipsoid(Polytope.box([-1, -1], [1, 1]))
    box_err = max(np.abs(e.B - np.eye(2)).max(), np.abs(e.c).max())
    verts = [(0, 0), (1, 0), (0, 1)]
    tri = max_inscribed_ellipsoid(Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1]))
    tri_err = abs(math.pi * tri.det - steiner_area(verts))
    rng = np.random.default_rng(0)
    bad = 0
    for n in range(200):
        m = 2 + n % 2
        p = random_polytope(rng, m, 5 + n % 4)
        res = solve_mvie(p)
        el = res.ellipsoid
        inside = all(el.support(a) <= bi + 1e-7 for a, bi in zip(p.A, p.b))
        optimal = True
        for _ in range(5):
            dB = rng.normal(scale=1e-2, size=(m, m))
            B2 = el.B + 0.5 * (dB + dB.T)
            c2 = el.c + rng.normal(scale=1e-2, size=m)
            if np.linalg.eigvalsh(B2).min() <= 0:
                continue
            if all(np.linalg.norm(B2 @ a) + a @ c2 <= bi for a, bi in zip(p.A, p.b)):
                optimal &= np.linalg.det(B2) <= el.det * (1 + 1e-6)
        bad += not (inside and optimal and np.all(res.duals >= 0))
    ok = box_err <= 1e-8 and tri_err <= 1e-4 and bad == 0
    assert report(2, "MVIE box, Steiner triangle, 200 random polytopes", ok, time.perf_counter() - t0, 10.0,
                  f"box err {box_err:.1e}, triangle err {tri_err:.1e}, failures {bad}")


def test_qp_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(500)
    worst_gap, worst_kkt, failed = -math.inf, 0.0, 0
    for _ in range(500):
        H, q, A, b, L = random_qp(rng)
        prob = QpProblem(H, q, A, b)
        s = solve_qp(prob)
        if not s.ok:
            failed += 1
            continue
        worst_kkt = max(worst_kkt, max(kkt_residuals(prob, s.z, s.duals).values()))
        f = 0.5 * s.z @ H @ s.z + q @ s.z
        # no feasible point of the global grid may beat the solver ...
        coarse = grid_qp_min(H, q, A, b, L, n=400)
        # ... and a local grid next to its answer must come within tolerance
        best = min(coarse, local_grid_min(H, q, A, b, L, s.z, n=400))
        worst_gap = max(worst_gap, abs(f - best) if best >= f - 1e-9 else math.inf)
    ok = failed == 0 and worst_gap <= 1e-3 and worst_kkt <= 1e-9
    assert report(3, "500 random QPs against a 400 x 400 grid", ok, time.perf_counter() - t0, 10.0,
                  f"max |f - grid| {worst_gap:.1e}, max KKT {worst_kkt:.1e}, failures {failed}")


def test_single_obstacle_ordering():
    runs = {k: simulate("test1_single_obstacle", k) for k in ("DobCbf", "WorstCaseRobust", "Nominal")}
    m = {k: r[2] for k, r in runs.items()}
    ok = (m["DobCbf"].min_h >= 0 and m["WorstCaseRobust"].min_h >= 0 and m["Nominal"].min_h < 0
          and m["DobCbf"].mean_h < m["WorstCaseRobust"].mean_h)
    detail = ", ".join(f"{k} min_h {v.min_h:.4f} mean_h {v.mean_h:.4f}" for k, v in m.items())
    assert report(4, "single obstacle: DOB safe and less conservative", ok, sum(r[3] for r in runs.values()), 30.0,
                  detail)


def test_multi_obstacle_fixture():
    _, _, v, w1 = simulate("test2_multi_obstacle", "DobVcbf")
    cfg, log, c, w2 = simulate("test2_multi_obstacle", "DobCbf")
    infeasible_early = QpStatus.INFEASIBLE.value in log.qp_status and c.feasible_runtime < cfg.sim.t_final
    ok = v.max_slack <= 1e-6 and v.min_Vv >= 0 and v.reached_target and v.n_infeasible == 0 and infeasible_early
    assert report(5, "multi-obstacle: volume filter stays feasible, plain DOB does not", ok,
                  w1 + w2, 60.0,
                  f"DobVcbf slack {v.max_slack:.1e} min_Vv {v.min_Vv:.3f} reached {v.reached_target}; "
                  f"DobCbf infeasible at {c.feasible_runtime:.2f} s")


def test_monte_carlo_runtime():
    t0 = time.perf_counter()
    cfg = scenario("table1_montecarlo")
    out = {}
    for case, rand in (("case1", cfg.initial_box), ("case2", cfg.gain_box)):
        s = monte_carlo(cfg, 50, rand, seed=cfg.seed)
        out[case] = (s["methods"]["DobVcbf"]["mean_feasible_runtime"], s["methods"]["DobCbf"]["mean_feasible_runtime"])
    ok = all(t1 >= 1.25 * t2 for t1, t2 in out.values())
    detail = "; ".join(f"{k} T1 {t1:.2f} T2 {t2:.2f} ratio {t1 / t2:.2f}" for k, (t1, t2) in out.items())
    assert report(6, "50-run feasible runtime, both randomizations", ok, time.perf_counter() - t0, 1200.0, detail)


def _certificate_ok(cfg, log):
    """Certificates on the samples before the first infeasible step of a run."""
    stop = next((k for k, s in enumerate(log.qp_status) if s == QpStatus.INFEASIBLE.value), len(log))
    hb = float(np.min(log.hbar[:stop]))
    ok = hb >= -1e-4
    worst = {"hbar": hb}
    if cfg.filter.method.uses_vcbf:
        hv = float(np.nanmin(log.hbar_v[:stop]))
        worst["hbar_V"] = hv
        ok &= hv >= -1e-4
        if np.max(np.abs(log.slack[:stop])) <= 1e-6:
            worst["h"] = float(np.min(log.h[:stop]))
            worst["Vv"] = float(np.nanmin(log.vv[:stop]))
            ok &= worst["h"] >= -1e-4 and worst["Vv"] >= -1e-4
    return ok, worst


def test_certificates():
    t0 = time.perf_counter()
    runs = [("test1_single_obstacle", m, None) for m in ("DobCbf", "WorstCaseRobust", "DobVcbf")]
    runs += [("test2_multi_obstacle", m, None) for m in ("DobVcbf", "DobCbf")]
    runs += [("ackermann_kp_sweep", "DobVcbf", kp) for kp in KP_SWEEP]
    ok, checked, worst = True, 0, math.inf
    for name, method, kp in runs:
        cfg = scenario(name).with_method(method)
        if kp is not None:
            cfg = with_kp(cfg, kp)
        if not all(c for _, c, _ in check_gains(cfg)):
            continue
        _, log, _, _ = simulate(name, method, kp)
        good, w = _certificate_ok(cfg, log)
        ok &= good
        checked += 1
        worst = min(worst, *w.values())
    ok &= checked == len(runs)
    assert report(7, "certificates on every scenario meeting the gain conditions", ok, time.perf_counter() - t0,
                  None, f"{checked} runs checked, worst value {worst:.2e}")


def test_kp_sweep():
    rows = []
    ok, wall = True, 0.0
    for kp in KP_SWEEP:
        _, _, m, w = simulate("ackermann_kp_sweep", "DobVcbf", kp)
        wall += w
        ok &= m.reached_target and m.n_infeasible == 0
        rows.append(f"k_p {kp}: reached {m.reached_target} infeasible {m.n_infeasible}")
    cfg, log, c, w = simulate("ackermann_kp_sweep", "DobCbf", 0.2)
    wall += w
    first = c.feasible_runtime if c.n_infeasible else None
    ok &= first is not None and not c.reached_target
    rows.append(f"DobCbf k_p 0.2 infeasible at {first} s, reached {c.reached_target}")
    assert report(8, "k_p sweep: volume filter always feasible", ok, wall, 60.0, "; ".join(rows))


if __name__ == "__main__":
    tests = [test_observer_bound, test_mvie_oracles, test_qp_oracle, test_single_obstacle_ordering,
             test_multi_obstacle_fixture, test_monte_carlo_runtime, test_certificates, test_kp_sweep]
    failed = 0
    for fn in tests:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
