"""Scenario files: a flat INI dialect parsed with configparser.

Sections::

    [scenario]        name, seed
    [plant]           kind, x0, target, u_min, u_max, <param> = value, gain.<name> = value
    [barrier.N]       kind (sphere | squared_distance_2d), center, radius | min_dist, poles | gains
    [observer]        alpha, beta, gamma, delta1..delta3 (default: disturbance bounds), sign_eps
    [filter]          method, lambda_vv, xi, M, beta2, fd_step, mvie_tol, gradient
    [disturbance]     kind (constant | sinusoid), offset, amplitude, frequency, phase, bounds
    [sim]             dt, control_dt, t_final, target_tol, stop_on_infeasible, stop_at_target
    [montecarlo]      x, y, z (initial ranges), alpha, beta, gamma (gain ranges)

Vectors are comma separated. Errors carry the offending line number.
"""
from __future__ import annotations

import configparser
import dataclasses
import re

from .barriers import BarrierSpec, SphereSignedDistance, SquaredDistance2D
from .observer import ObserverGains
from .plants import DisturbanceSpec
from .safety_filters import FilterConfig, Method
from .sim import GainBox, InitialBox, PlantConfig, ScenarioConfig, SimConfig

KNOWN = {
    "scenario": {"name", "seed"},
    "observer": {"alpha", "beta", "gamma", "delta1", "delta2", "delta3", "sign_eps"},
    "filter": {"method", "lambda_vv", "xi", "m", "beta2", "fd_step", "mvie_tol", "gradient"},
    "disturbance": {"kind", "offset", "amplitude", "frequency", "phase", "bounds"},
    "sim": {"dt", "control_dt", "t_final", "target_tol", "stop_on_infeasible", "stop_at_target"},
    "montecarlo": {"x", "y", "z", "alpha", "beta", "gamma"},
}
BARRIER_KINDS = {"sphere": SphereSignedDistance, "squared_distance_2d": SquaredDistance2D}


class ConfigError(ValueError):
    def __init__(self, msg, line=None, field=None):
        self.line, self.field = line, field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {msg}" if where else msg)


def _line_index(text):
    """(section, key) -> 1-based line number, ``(section, None)`` for headers."""
    idx, sec = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip()
            idx[(sec, None)] = i
        elif sec is not None and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            idx.setdefault((sec, key), i)
    return idx


class _Reader:
    def __init__(self, cp, lines):
        self.cp, self.lines = cp, lines

    def err(self, sec, key, msg):
        line = self.lines.get((sec, key), self.lines.get((sec, None)))
        raise ConfigError(msg, line, f"[{sec}] {key}" if key else f"[{sec}]")

    def has(self, sec, key):
        return self.cp.has_section(sec) and self.cp.has_option(sec, key)

    def raw(self, sec, key, default=None, required=False):
        if self.has(sec, key):
            return self.cp.get(sec, key).strip()
        if required:
            self.err(sec, key, "missing required field")
        return default

    def num(self, sec, key, default=None, required=False, kind=float):
        v = self.raw(sec, key, None, required)
        if v is None:
            return default
        try:
            return kind(v)
        except ValueError:
            self.err(sec, key, f"expected a number, got {v!r}")

    def vec(self, sec, key, default=(), required=False, n=None):
        v = self.raw(sec, key, None, required)
        if v is None:
            return default
        try:
            out = tuple(float(p) for p in v.split(",") if p.strip())
        except ValueError:
            self.err(sec, key, f"expected comma-separated numbers, got {v!r}")
        if n is not None and len(out) != n:
            self.err(sec, key, f"expected {n} entries, got {len(out)}")
        return out

    def flag(self, sec, key, default):
        if not self.has(sec, key):
            return default
        try:
            return self.cp.getboolean(sec, key)
        except ValueError:
            self.err(sec, key, "expected a boolean")

    def build(self, sec, key, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, TypeError) as exc:
            self.err(sec, key, str(exc))


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("content before the first section header", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno, f"[{exc.section}]") from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line) from None
    r = _Reader(cp, _line_index(text))

    for sec in cp.sections():
        if sec.startswith("barrier.") or sec == "plant":
            continue
        if sec not in KNOWN:
            r.err(sec, None, "unknown section")
        for key in cp.options(sec):
            if key not in KNOWN[sec]:
                r.err(sec, key, "unknown key")

    # plant
    if not cp.has_section("plant"):
        raise ConfigError("missing required section", None, "[plant]")
    kind = r.raw("plant", "kind", required=True)
    params, gains = [], []
    for key in cp.options("plant"):
        if key in ("kind", "x0", "target", "u_min", "u_max"):
            continue
        if key.startswith("gain."):
            gains.append((key[5:], r.num("plant", key)))
        else:
            params.append((key, r.num("plant", key)))
    pc = PlantConfig(kind, r.vec("plant", "x0", required=True), r.vec("plant", "target", required=True),
                     r.vec("plant", "u_min"), r.vec("plant", "u_max"), tuple(sorted(params)), tuple(sorted(gains)))
    plant = r.build("plant", "kind", pc.build)
    r.build("plant", "u_min", pc.box, plant)

    # barriers, in numeric order of their suffix
    bsecs = [s for s in cp.sections() if s.startswith("barrier.")]
    for s in bsecs:
        if not s[8:].isdigit():
            r.err(s, None, "barrier sections are named [barrier.N] with integer N")
    barriers = []
    for s in sorted(bsecs, key=lambda s: int(s[8:])):
        bk = r.raw(s, "kind", required=True)
        if bk not in BARRIER_KINDS:
            r.err(s, "kind", f"unknown barrier kind {bk!r} (use {', '.join(BARRIER_KINDS)})")
        for key in cp.options(s):
            if key not in ("kind", "center", "radius", "min_dist", "poles", "gains"):
                r.err(s, key, "unknown key")
        dim = len(plant.pos_idx)
        if bk == "sphere":
            shape = r.build(s, "radius", SphereSignedDistance, r.vec(s, "center", required=True, n=dim),
                            r.num(s, "radius", required=True))
        else:
            shape = r.build(s, "min_dist", SquaredDistance2D, r.vec(s, "center", required=True, n=dim),
                            r.num(s, "min_dist", required=True))
        if r.has(s, "poles") and r.has(s, "gains"):
            r.err(s, "gains", "give either poles or gains, not both")
        if r.has(s, "gains"):
            barriers.append(r.build(s, "gains", BarrierSpec.from_gains, shape, r.vec(s, "gains")))
        else:
            kw = {"poles": r.vec(s, "poles")} if r.has(s, "poles") else {}
            barriers.append(r.build(s, "poles", BarrierSpec, shape, **kw))

    # disturbance
    dk = r.raw("disturbance", "kind", "constant")
    dist = r.build("disturbance", "kind", DisturbanceSpec, dk, r.vec("disturbance", "offset"),
                   r.vec("disturbance", "amplitude"), r.num("disturbance", "frequency", 0.0),
                   r.num("disturbance", "phase", 0.0))
    if r.has("disturbance", "bounds"):
        bounds = r.vec("disturbance", "bounds", n=3)
    else:
        bounds = dist.analytic_bounds(plant.dist_map())
    dist = dataclasses.replace(dist, bounds=tuple(bounds))

    # observer
    obs_kw = {k: r.num("observer", k, required=True) for k in ("alpha", "beta", "gamma")}
    for i, k in enumerate(("delta1", "delta2", "delta3")):
        obs_kw[k] = r.num("observer", k, bounds[i])
    obs_kw["sign_eps"] = r.num("observer", "sign_eps", 0.0)
    observer = r.build("observer", "alpha", ObserverGains, **obs_kw)

    # filter
    fkw = {}
    if r.has("filter", "method"):
        m = r.raw("filter", "method")
        try:
            fkw["method"] = Method(m)
        except ValueError:
            r.err("filter", "method", f"unknown method {m!r} (use {', '.join(x.value for x in Method)})")
    for key, attr in (("lambda_vv", "lambda_vv"), ("xi", "xi"), ("m", "M"), ("fd_step", "fd_step"),
                      ("mvie_tol", "mvie_tol")):
        if r.has("filter", key):
            fkw[attr] = r.num("filter", key)
    if r.has("filter", "beta2"):
        fkw["beta2"] = r.num("filter", "beta2")
    if r.has("filter", "gradient"):
        fkw["gradient"] = r.raw("filter", "gradient")
    filt = r.build("filter", None, FilterConfig, **fkw)

    # sim
    skw = {k: r.num("sim", k) for k in ("dt", "control_dt", "t_final", "target_tol") if r.has("sim", k)}
    for k in ("stop_on_infeasible", "stop_at_target"):
        if r.has("sim", k):
            skw[k] = r.flag("sim", k, None)
    sim = r.build("sim", None, SimConfig, **skw)

    # monte carlo ranges
    ranges = []
    for k in ("x", "y", "z"):
        if r.has("montecarlo", k):
            ranges.append((k, r.vec("montecarlo", k, n=2)))
    ibox = InitialBox(tuple(ranges)) if ranges else InitialBox()
    # the default box names blimp states; only explicit ranges are checked against the plant
    for k, (lo, hi) in ranges:
        if k not in plant.state_names:
            r.err("montecarlo", k, f"{plant.name} has no state {k!r}")
        if lo > hi:
            r.err("montecarlo", k, "range lower bound exceeds upper bound")
    gkw = {}
    for k in ("alpha", "beta", "gamma"):
        if r.has("montecarlo", k):
            lo, hi = r.vec("montecarlo", k, n=2)
            if lo > hi:
                r.err("montecarlo", k, "range lower bound exceeds upper bound")
            gkw[k] = (lo, hi)
    gbox = GainBox(**gkw)

    return ScenarioConfig(pc, tuple(barriers), observer, filt, dist, sim,
                          seed=r.num("scenario", "seed", 0, kind=int),
                          initial_box=ibox, gain_box=gbox, name=r.raw("scenario", "name", "scenario"))


def read_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))


def _v(xs):
    return ", ".join(repr(float(x)) for x in xs)


def format_config(cfg: ScenarioConfig) -> str:
    """Inverse of :func:`parse_config` (floats are written with repr)."""
    out = ["[scenario]", f"name = {cfg.name}", f"seed = {cfg.seed}", "", "[plant]", f"kind = {cfg.plant.kind}",
           f"x0 = {_v(cfg.plant.x0)}", f"target = {_v(cfg.plant.target)}"]
    if cfg.plant.u_min:
        out.append(f"u_min = {_v(cfg.plant.u_min)}")
    if cfg.plant.u_max:
        out.append(f"u_max = {_v(cfg.plant.u_max)}")
    out += [f"{k} = {float(v)!r}" for k, v in cfg.plant.params]
    out += [f"gain.{k} = {float(v)!r}" for k, v in cfg.plant.gains]
    for i, b in enumerate(cfg.barriers):
        out += ["", f"[barrier.{i}]"]
        if isinstance(b.kind, SphereSignedDistance):
            out += ["kind = sphere", f"center = {_v(b.kind.center)}", f"radius = {float(b.kind.radius)!r}"]
        else:
            out += ["kind = squared_distance_2d", f"center = {_v(b.kind.center)}",
                    f"min_dist = {float(b.kind.min_dist)!r}"]
        out.append(f"poles = {_v(b.poles)}")
    d = cfg.disturbance
    out += ["", "[disturbance]", f"kind = {d.kind}"]
    if d.offset:
        out.append(f"offset = {_v(d.offset)}")
    if d.amplitude:
        out.append(f"amplitude = {_v(d.amplitude)}")
    out += [f"frequency = {float(d.frequency)!r}", f"phase = {float(d.phase)!r}", f"bounds = {_v(d.bounds)}"]
    g = cfg.observer
    out += ["", "[observer]"] + [f"{k} = {float(getattr(g, k))!r}" for k in
                                ("alpha", "beta", "gamma", "delta1", "delta2", "delta3", "sign_eps")]
    f = cfg.filter
    out += ["", "[filter]", f"method = {f.method.value}", f"lambda_vv = {f.lambda_vv!r}", f"xi = {f.xi!r}",
            f"M = {f.M!r}", f"fd_step = {f.fd_step!r}", f"mvie_tol = {f.mvie_tol!r}", f"gradient = {f.gradient}"]
    if f.beta2 is not None:
        out.append(f"beta2 = {f.beta2!r}")
    s = cfg.sim
    out += ["", "[sim]", f"dt = {s.dt!r}", f"control_dt = {s.control_dt!r}", f"t_final = {s.t_final!r}",
            f"target_tol = {s.target_tol!r}", f"stop_on_infeasible = {str(s.stop_on_infeasible).lower()}",
            f"stop_at_target = {str(s.stop_at_target).lower()}", "", "[montecarlo]"]
    names = cfg.plant.build().state_names
    out += [f"{k} = {_v(rg)}" for k, rg in cfg.initial_box.ranges if k in names]
    out += [f"{k} = {_v(getattr(cfg.gain_box, k))}" for k in ("alpha", "beta", "gamma")]
    return "\n".join(out) + "\n"
