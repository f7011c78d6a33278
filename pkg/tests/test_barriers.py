import math

import numpy as np
import pytest

from safecbf.barriers import (BarrierSet, BarrierSpec, Mode, SingularBarrier, SphereSignedDistance,
                              SquaredDistance2D, assemble_feasible_space, beta1_bound, certificate_hbar,
                              dob_margin, eval_chain)
from safecbf.numerics import fd_gradient, gains_to_poles, poles_to_gains
from safecbf.observer import ObserverGains
from safecbf.plants import Ackermann, Blimp, DoubleIntegrator

G = ObserverGains(5.0, 6.0, 4.0, 0.7, 0.35, 0.18)


def _h_fn(spec, plant):
    c = np.asarray(spec.kind.center, dtype=float)
    sphere = isinstance(spec.kind, SphereSignedDistance)

    def h(x):
        p = x[list(plant.pos_idx)]
        d = np.linalg.norm(p - c)
        return d - spec.kind.radius if sphere else d * d - spec.kind.min_dist**2
    return h


def _fd_chain(spec, plant, x):
    """Second-order chain rows from nested central differences."""
    h = _h_fn(spec, plant)
    lfh = lambda y: float(fd_gradient(h, y, 1e-5) @ plant.f(y))
    row = fd_gradient(lfh, x, 1e-4)
    return lfh(x), row @ plant.f(x), row @ plant.g(x)


def _random_state(plant, rng, center):
    while True:
        x = rng.normal(size=plant.n)
        x[list(plant.pos_idx)] = np.asarray(center) + rng.uniform(-2, 2, size=len(plant.pos_idx))
        if np.linalg.norm(x[list(plant.pos_idx)] - center) > 0.3:
            return x


CASES = [
    (Blimp(), BarrierSpec(SphereSignedDistance((0.5, 0.0, 0.5), 0.2))),
    (Ackermann(mass=1.3), BarrierSpec(SquaredDistance2D((1.0, -0.5), 0.4))),
    (DoubleIntegrator(), BarrierSpec(SquaredDistance2D((0.0, 1.0), 0.5))),
    (DoubleIntegrator(), BarrierSpec(SphereSignedDistance((0.0, 1.0), 0.5))),
]


@pytest.mark.parametrize("plant,spec", CASES, ids=["blimp", "ackermann", "di_sq", "di_sphere"])
def test_analytic_matches_fd(plant, spec):
    rng = np.random.default_rng(11)
    for _ in range(200):
        x = _random_state(plant, rng, spec.kind.center)
        ch = eval_chain(spec, np.append(x, 0.0), plant)
        lfh, lfr, lg = _fd_chain(spec, plant, x)
        assert ch.eta[0] == pytest.approx(lfh, abs=1e-5)
        assert ch.lfr_h == pytest.approx(lfr, abs=1e-5)
        assert np.allclose(ch.lg_row, lg, atol=1e-5)
        # disturbance direction is the same gradient; the time slot is zero
        assert ch.li_row[-1] == 0.0


@pytest.mark.parametrize("plant,spec", CASES, ids=["blimp", "ackermann", "di_sq", "di_sphere"])
def test_compiled_matches_reference(plant, spec):
    rng = np.random.default_rng(1)
    bset = BarrierSet([spec, BarrierSpec(spec.kind, (2.0,))], plant)
    for _ in range(20):
        xb = np.append(_random_state(plant, rng, spec.kind.center), 0.0)
        a = bset.evaluate(xb)
        b = bset.evaluate_reference(xb)
        for u, v in zip(a, b):
            assert np.allclose(u, v, atol=1e-12)


def test_double_integrator_example():
    plant = DoubleIntegrator()
    spec = BarrierSpec(SquaredDistance2D((0.0, 0.0), 0.5))
    ch = eval_chain(spec, np.array([1.0, 0.0, 0.0, 0.0, 0.0]), plant)
    assert ch.h == pytest.approx(0.75)
    assert ch.eta[0] == 0.0  # h dot
    assert np.allclose(ch.lg_row, [2.0, 0.0])
    k1, k2 = spec.gains
    assert ch.phi[1] == pytest.approx(spec.first_pole * ch.h)
    assert ch.b_entry == pytest.approx(k2 * 0.75 + 0.0)


def test_ackermann_symbolic_second_derivative():
    plant = Ackermann(mass=2.0)
    c = np.array([1.0, 2.0])
    spec = BarrierSpec(SquaredDistance2D(tuple(c), 0.5))
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, y, psi, v = rng.normal(size=4)
        a, w, d = rng.normal(size=3)
        ch = eval_chain(spec, np.array([x, y, psi, v, 0.0]), plant)
        r = np.array([x, y]) - c
        e = np.array([math.cos(psi), math.sin(psi)])
        en = np.array([-math.sin(psi), math.cos(psi)])
        hdd = 2 * v * v + 2 * r @ (e * (a + d) / 2.0 + v * en * w)
        # the disturbance slot of the extended state carries d / m
        got = ch.lfr_h + ch.lg_row @ [a, w] + ch.li_row[3] * d / 2.0
        assert got == pytest.approx(hdd, abs=1e-10)


def test_ackermann_zero_speed_row():
    # at v = 0 with the obstacle abeam both input coefficients vanish
    plant = Ackermann()
    spec = BarrierSpec(SquaredDistance2D((0.0, 1.0), 0.5))
    ch = eval_chain(spec, np.array([0.0, 0.0, 0.0, 0.0, 0.0]), plant)
    assert np.allclose(ch.lg_row, [0.0, 0.0])
    # facing the obstacle, acceleration still enters through (p - p_i).e_psi / m
    ch = eval_chain(spec, np.array([0.0, 0.0, math.pi / 2, 0.0, 0.0]), plant)
    assert ch.lg_row[0] == pytest.approx(-2.0)
    assert ch.lg_row[1] == pytest.approx(0.0)


def test_boundary_row_well_posed():
    plant = Blimp()
    spec = BarrierSpec(SphereSignedDistance((0.0, 0.0, 0.0), 1.0))
    x = np.array([1.0, 0.0, 0.0, math.pi, -0.1, 0.0, 0.0, 0.0])
    ch = eval_chain(spec, x, plant)
    assert ch.h == pytest.approx(0.0)
    assert np.all(np.isfinite(ch.lg_row)) and np.linalg.norm(ch.lg_row) > 0


def test_singular_center():
    with pytest.raises(SingularBarrier):
        eval_chain(BarrierSpec(SphereSignedDistance((0.0, 0.0, 0.0), 1.0)), np.zeros(8), Blimp())


def test_spec_validation():
    with pytest.raises(ValueError):
        SphereSignedDistance((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        SquaredDistance2D((0, 0), -1.0)
    with pytest.raises(ValueError):
        BarrierSpec(SphereSignedDistance((0, 0, 0), 1.0), (1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        BarrierSpec(SphereSignedDistance((0, 0, 0), 1.0), (-1.0, 2.0))
    with pytest.raises(ValueError):
        BarrierSet([BarrierSpec(SquaredDistance2D((0, 0), 1.0))], Blimp())


def test_default_poles_are_chain_gains():
    spec = BarrierSpec(SphereSignedDistance((0, 0, 0), 1.0))
    assert np.allclose(spec.gains, [10.0, 3.55], atol=1e-12)
    assert spec.last_pole == pytest.approx(min(gains_to_poles([10.0, 3.55])))
    spec2 = BarrierSpec.from_gains(spec.kind, (10.0, 3.55))
    assert np.allclose(poles_to_gains(spec2.poles), [10.0, 3.55])


def _chain():
    return eval_chain(BarrierSpec(SphereSignedDistance((0.5, 0.0, 0.5), 0.2)),
                      np.array([0.1, 0.0, 0.2, 0.3, 0.2, 0.1, 0.1, 0.0]), Blimp())


def test_dob_margin_examples():
    ch = _chain()
    nrm = np.linalg.norm(ch.li_row)
    assert dob_margin(ch, np.zeros(8), G, 0.0) == pytest.approx(-nrm * G.delta1)
    d = np.array([0, 0, 0, 0, 0.3, -0.1, 0.2, 0])
    big = dob_margin(ch, d, G, 50.0)
    assert big == pytest.approx(ch.li_row @ d, abs=1e-12)
    ch.li_row[:] = 0.0
    assert dob_margin(ch, d, G, 0.0) == 0.0


def test_assemble_modes():
    plant = Blimp()
    specs = [BarrierSpec(SphereSignedDistance((0.5, 0.0, 0.5), 0.2)),
             BarrierSpec(SphereSignedDistance((-1.0, 0.0, 0.5), 0.3))]
    box = (np.array([-2.0, -2, -1]), np.array([2.0, 2, 1]))
    xb = np.array([0.1, 0.0, 0.2, 0.3, 0.2, 0.1, 0.1, 0.0])
    dh = np.array([0, 0, 0, 0, 0.3, -0.1, 0.2, 0])
    nom = assemble_feasible_space(specs, box, xb, dh, G, 0.0, Mode.NOMINAL, plant)
    assert nom.polytope.A.shape == (8, 3)
    assert np.all(nom.margins == 0)
    wc = assemble_feasible_space(specs, box, xb, dh, G, 2.0, Mode.WORST_CASE, plant)
    dob0 = assemble_feasible_space(specs, box, xb, np.zeros(8), G, 0.0, Mode.DOB, plant)
    assert np.allclose(wc.polytope.b, dob0.polytope.b)
    assert np.allclose(wc.polytope.A, dob0.polytope.A)
    assert np.all(wc.margins[:6] == 0) and np.all(wc.margins[6:] < 0)
    with pytest.raises(ValueError):
        assemble_feasible_space(specs, box, xb, dh, G, 0.0, Mode.DOB)


def test_certificate_values():
    ch = _chain()
    assert certificate_hbar(ch, 0.0, 1.0) == pytest.approx(ch.phi[-1])
    b1 = beta1_bound(ch.phi[-1], G)
    assert certificate_hbar(ch, 0.5 * G.delta1**2, b1) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        beta1_bound(0.0, G)
