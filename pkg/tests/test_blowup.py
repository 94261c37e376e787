import math

import numpy as np
import pytest

from conftest import equilateral, rotation
from nospin.blowup import (BlowupState, ChartError, Forcing, ShapeFrame, ShapeState, autonomous_field,
                           cartesian_from_shape, el_field, energy_blowup, energy_shape, forcing_from_trajectory,
                           forcing_term, forcing_values, from_blowup, from_shape, fubini_data, res_field,
                           theta_dot_constant, to_blowup, to_shape, transform_trajectory)
from nospin.centconfig import cc_chart, find_cc
from nospin.core import CartesianState, Cluster, MassSystem, cluster_geometry
from nospin.dynamics import Scenario, integrate, propagate


def random_state(rng, n=4, spread=1.0):
    m = rng.uniform(0.5, 2.0, n)
    sys = MassSystem(m)
    q = rng.normal(size=(n, 2)) * spread
    v = rng.normal(size=(n, 2)) * 0.5
    q -= m @ q / m.sum()
    v -= m @ v / m.sum()
    return sys, CartesianState.centered(sys, 0.0, q, v)


def lagrange_frame():
    sys = MassSystem([1, 1, 1])
    cc = find_cc(sys, Cluster.everything(sys), equilateral())
    frame, s0 = cc_chart(cc)
    return sys, frame, s0


def test_rest_equilateral_shape():
    sys = MassSystem([1, 1, 1])
    frame = ShapeFrame.build(sys, Cluster.everything(sys))
    sh = to_shape(frame, CartesianState(0, equilateral(), np.zeros((3, 2))), chart="auto")
    assert sh.r == pytest.approx(1.0, abs=1e-14)
    assert sh.rho == 0.0
    assert np.all(sh.omega == 0)
    assert energy_shape(sh) == pytest.approx(-3.0, abs=1e-13)


def test_shape_round_trip(rng):
    worst = 0.0
    for _ in range(1000):
        sys, st = random_state(rng, n=int(rng.integers(3, 6)))
        cl = Cluster.of(sys, sorted(rng.choice(sys.n, size=int(rng.integers(2, sys.n + 1)), replace=False)))
        frame = ShapeFrame.build(sys, cl)
        back = cartesian_from_shape(to_shape(frame, st, chart="auto"))
        scale = max(1.0, np.abs(st.as_vector()).max())
        worst = max(worst, np.abs(back.as_vector() - st.as_vector()).max() / scale)
    assert worst < 1e-12


def test_rotation_equivariance(rng):
    sys, st = random_state(rng, n=4)
    frame = ShapeFrame.build(sys, Cluster.of(sys, [0, 1, 2]))
    a = to_shape(frame, st, chart="auto")
    alpha = 0.7
    R = rotation(alpha)
    b = to_shape(a.frame, CartesianState(0, st.q @ R.T, st.v @ R.T))
    assert (b.theta - a.theta - alpha + np.pi) % (2 * np.pi) - np.pi == pytest.approx(0, abs=1e-12)
    for x, y in [(a.r, b.r), (a.rho, b.rho), (a.mu, b.mu)]:
        assert x == pytest.approx(y, abs=1e-12)
    assert np.allclose(a.s, b.s, atol=1e-12) and np.allclose(a.omega, b.omega, atol=1e-12)
    fa, fb = fubini_data(a.frame, a.s, a.omega), fubini_data(b.frame, b.s, b.omega)
    assert fa.F == pytest.approx(fb.F, abs=1e-12) and fa.V == pytest.approx(fb.V, abs=1e-12)


def test_two_body_shape_is_polar_angle():
    sys = MassSystem([1, 1])
    st = CartesianState.centered(sys, 0, [[-0.3, -0.4], [0.3, 0.4]], np.zeros((2, 2)))
    sh = to_shape(ShapeFrame.build(sys, Cluster.everything(sys)), st)
    assert sh.s.size == 0 and sh.omega.size == 0
    assert sh.theta == pytest.approx(math.atan2(-0.4, -0.3), abs=1e-14)


def test_from_shape_scaling_and_rest():
    sys, frame, s0 = lagrange_frame()
    s = s0 + np.array([0.1, -0.05])
    z1, _ = from_shape(ShapeState(frame, 0, 1.0, 0.0, 0.0, 0.0, s, np.zeros(2)))
    z2, zd2 = from_shape(ShapeState(frame, 0, 2.0, 0.0, 0.0, 0.0, s, np.zeros(2)))
    assert np.allclose(z2, 2 * z1, atol=1e-14)
    assert np.all(zd2 == 0)


def test_chart_singularity_raises():
    sys = MassSystem([1, 1, 1])
    frame = ShapeFrame.build(sys, Cluster.everything(sys), chart=0)
    # body 0 at the center of mass makes z_1 vanish
    st = CartesianState.centered(sys, 0, [[0, 0], [1, 0], [-1, 0]], np.zeros((3, 2)))
    with pytest.raises(ChartError):
        to_shape(frame, st)


def test_fubini_identities(rng):
    for k in (3, 4, 5):
        sys = MassSystem(rng.uniform(0.5, 2, k))
        frame = ShapeFrame.build(sys, Cluster.everything(sys))
        s = rng.normal(size=frame.dim)
        w = rng.normal(size=frame.dim)
        fd = fubini_data(frame, s, w)
        assert fd.F == pytest.approx(w @ fd.A @ w, rel=1e-12, abs=1e-14)
        assert fd.B @ w == pytest.approx(fd.Omega / fd.norm2, rel=1e-12, abs=1e-14)
        assert np.all(np.linalg.eigvalsh(fd.A) > 0)
        assert fd.V > 0
        assert fubini_data(frame, s, np.zeros(frame.dim)).F == 0.0


def test_lagrange_V_is_three():
    _, frame, s0 = lagrange_frame()
    assert fubini_data(frame, s0).V == pytest.approx(3.0, abs=1e-12)


def shape_vec(frame, st, chart):
    sh = to_shape(frame, st, chart=chart)
    return sh.vector(), sh


def test_el_field_pushforward(rng):
    sys = MassSystem([1.0, 1.5, 0.8, 1.2])
    q = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [6.0, -5.0]])
    v = np.array([[0.1, -0.2], [0.0, 0.3], [-0.2, 0.1], [0.2, 0.1]])
    m = sys.masses
    st = CartesianState.centered(sys, 0, q - m @ q / m.sum(), v - m @ v / m.sum())
    for cl in (Cluster.of(sys, [0, 1, 2]), Cluster.everything(sys)):
        frame = ShapeFrame.build(sys, cl)
        x0, sh = shape_vec(frame, st, "auto")
        h = 1e-3
        xp, _ = shape_vec(sh.frame, propagate(sys, st, h, tol=1e-14), None)
        xm, _ = shape_vec(sh.frame, propagate(sys, st, -h, tol=1e-14), None)
        xp2, _ = shape_vec(sh.frame, propagate(sys, st, 2 * h, tol=1e-14), None)
        xm2, _ = shape_vec(sh.frame, propagate(sys, st, -2 * h, tol=1e-14), None)
        fd = (8 * (xp - xm) - (xp2 - xm2)) / (12 * h)
        an = el_field(sh)
        assert np.abs(fd - an).max() < 1e-7 * max(1.0, np.abs(an).max())
        if cl.size == sys.n:
            assert an[3] == 0.0


def test_el_field_needs_curvature_term(rng):
    sys = MassSystem([1.0, 1.5, 0.8])
    q = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1]])
    v = np.array([[0.1, -0.4], [0.0, 0.3], [-0.2, 0.1]])
    m = sys.masses
    st = CartesianState.centered(sys, 0, q - m @ q / m.sum(), v - m @ v / m.sum())
    sh = to_shape(ShapeFrame.build(sys, Cluster.everything(sys)), st, chart="auto")
    assert abs(sh.mu) > 0.1
    with_k = el_field(sh)
    without = el_field(sh, include_curvature=False)
    assert np.abs(with_k - without).max() > 1e-3


def test_homothetic_state_is_fixed_in_shape():
    sys, frame, s0 = lagrange_frame()
    sh = ShapeState(frame, 0, 1.0, -0.3, 0.0, 0.0, s0, np.zeros(2))
    f = el_field(sh)
    assert np.abs(f[4:]).max() < 1e-12


def test_energy_shape_matches_core(rng):
    for _ in range(1000):
        sys, st = random_state(rng, n=int(rng.integers(3, 5)))
        cl = Cluster.of(sys, [0, 1, 2])
        sh = to_shape(ShapeFrame.build(sys, cl), st, chart="auto")
        h = cluster_geometry(sys, cl, st).h
        assert energy_shape(sh) == pytest.approx(h, abs=1e-10 * max(1, abs(h)))


def test_energy_potential_scaling():
    sys, frame, s0 = lagrange_frame()
    e1 = energy_shape(ShapeState(frame, 0, 1.0, 0.0, 0.0, 0.0, s0, np.zeros(2)))
    e4 = energy_shape(ShapeState(frame, 0, 4.0, 0.0, 0.0, 0.0, s0, np.zeros(2)))
    assert e4 == pytest.approx(e1 / 4, rel=1e-14)


def test_blowup_formulas():
    sys, frame, s0 = lagrange_frame()
    sh = ShapeState(frame, 0, 4.0, 1.0, 0.0, 0.0, s0, np.array([0.1, 0.2]))
    b = to_blowup(sh, "parabolic")
    assert b.x == 0.5 and b.v == 2.0
    assert np.allclose(b.w, 8 * np.array([0.1, 0.2]), atol=0)
    c = to_blowup(sh, "collision")
    assert c.x == 4.0 and c.v == 2.0
    one = to_blowup(ShapeState(frame, 0, 1.0, 0.7, 0.0, 0.0, s0, np.array([0.1, 0.2])), "parabolic")
    assert one.x == 1.0 and one.v == 0.7 and np.array_equal(one.w, [0.1, 0.2])
    with pytest.raises(ValueError):
        to_blowup(sh, "sideways")


def test_blowup_round_trip(rng):
    sys, frame, s0 = lagrange_frame()
    worst = 0.0
    for _ in range(500):
        sh = ShapeState(frame, 0, float(rng.uniform(0.1, 10)), float(rng.normal()), 0.0, 0.0,
                        s0 + 0.1 * rng.normal(size=2), rng.normal(size=2))
        for var in ("parabolic", "collision"):
            back = from_blowup(to_blowup(sh, var), frame)
            worst = max(worst, np.abs(back.vector() - sh.vector()).max() / max(1, np.abs(sh.vector()).max()))
    assert worst < 1e-13


@pytest.mark.parametrize("mode,sign", [("parabolic", 1.0), ("collision", -1.0)])
def test_res_field_equilibrium(mode, sign):
    _, frame, s0 = lagrange_frame()
    y = np.concatenate([[0.0, sign * math.sqrt(6.0)], s0, np.zeros(2)])
    assert np.abs(autonomous_field(mode, frame, y)).max() < 1e-10


def test_slice_is_invariant(rng):
    _, frame, s0 = lagrange_frame()
    for var in ("parabolic", "collision"):
        y = np.concatenate([[0.0, rng.normal()], s0 + 0.2 * rng.normal(size=2), rng.normal(size=2)])
        f = autonomous_field(var, frame, y) + forcing_term(var, frame, y, 3.0, rng.normal(size=2), 0.5)
        assert f[0] == 0.0


@pytest.mark.parametrize("variant", ["parabolic", "collision"])
def test_res_field_pushforward(variant):
    sys = MassSystem([1.0, 1.5, 0.8, 1.2])
    q = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [6.0, -5.0]])
    v = np.array([[0.1, -0.2], [0.0, 0.3], [-0.2, 0.1], [0.2, 0.1]])
    m = sys.masses
    st = CartesianState.centered(sys, 0, q - m @ q / m.sum(), v - m @ v / m.sum())
    frame = ShapeFrame.build(sys, Cluster.of(sys, [0, 1, 2]))
    sh = to_shape(frame, st, chart="auto")
    b = to_blowup(sh, variant)
    P, Q, kap = forcing_values(sh, variant)
    fo = Forcing(variant, np.array([-1.0, 1.0]), np.full(2, P), np.vstack([Q, Q]), np.full(2, kap))
    an = res_field(b, fo, sh.frame, tau=0.0)
    h = 1e-3

    def bvec(t):
        return to_blowup(to_shape(sh.frame, propagate(sys, st, t, tol=1e-14)), variant).vector()

    fd = (8 * (bvec(h) - bvec(-h)) - (bvec(2 * h) - bvec(-2 * h))) / (12 * h)
    fd *= sh.r**1.5  # d/dtau = r^{3/2} d/dt
    assert np.abs(fd - an).max() < 1e-6 * max(1.0, np.abs(an).max())


def test_res_field_variant_mismatch():
    _, frame, s0 = lagrange_frame()
    b = BlowupState("parabolic", 0.1, 1.0, s0, np.zeros(2))
    with pytest.raises(ValueError):
        res_field(b, Forcing.zero("collision", 2), frame)


def test_energy_blowup(rng):
    _, frame, s0 = lagrange_frame()
    h, br = energy_blowup(BlowupState("parabolic", 0.3, math.sqrt(6.0), s0, np.zeros(2)), 0.0, frame)
    assert h == pytest.approx(0.0, abs=1e-13) and br == pytest.approx(0.0, abs=1e-13)
    for _ in range(200):
        sh = ShapeState(frame, 0, float(rng.uniform(0.2, 5)), float(rng.normal()), 0.0, float(rng.normal()),
                        s0 + 0.1 * rng.normal(size=2), rng.normal(size=2))
        hb, _ = energy_blowup(to_blowup(sh, "parabolic"), sh.mu, frame)
        assert hb == pytest.approx(energy_shape(sh), abs=1e-10 * max(1, abs(hb)))
    b1 = BlowupState("parabolic", 1e-2, 1.0, s0, np.zeros(2))
    b2 = BlowupState("parabolic", 1e-3, 1.0, s0, np.zeros(2))
    h1, br1 = energy_blowup(b1, 0.0, frame)
    h2, br2 = energy_blowup(b2, 0.0, frame)
    assert br1 == br2
    assert h2 / h1 == pytest.approx(1e-2, rel=1e-12)
    with pytest.raises(ValueError):
        energy_blowup(BlowupState("collision", 0.1, 1.0, s0, np.zeros(2)), 0.0, frame)


def test_theta_rate_bound_pointwise(rng):
    for _ in range(200):
        sys, st = random_state(rng, n=4)
        sh = to_shape(ShapeFrame.build(sys, Cluster.of(sys, [0, 1, 2])), st, chart="auto")
        thd = el_field(sh)[2]
        C = theta_dot_constant(sh.frame, sh.s)
        F = fubini_data(sh.frame, sh.s, sh.omega).F
        assert abs(thd) <= abs(sh.mu) / sh.r**2 + C * math.sqrt(F) + 1e-12


def test_forcing_all_bodies():
    sys = MassSystem([1.0, 1.5, 0.8])
    q = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1]])
    v = np.array([[0.1, -0.4], [0.0, 0.3], [-0.2, 0.1]])
    m = sys.masses
    st = CartesianState.centered(sys, 0, q - m @ q / m.sum(), v - m @ v / m.sum())
    cl = Cluster.everything(sys)
    tr = integrate(Scenario("s", sys, st, cl, "generic", {"t_end": 0.5}))
    fo = forcing_from_trajectory(sys, cl, tr, "parabolic")
    ser = transform_trajectory(sys, cl, tr, "parabolic")
    assert np.all(fo.Q == 0.0)
    assert np.allclose(fo.P, ser.mu**2, rtol=1e-14, atol=0)


def test_forcing_bounded_pair_escaper(pair_escaper_run):
    sc, tr = pair_escaper_run
    fo = forcing_from_trajectory(tr.system, sc.cluster, tr, "parabolic")
    supP, supQ = fo.sup()
    assert np.isfinite(supP) and np.isfinite(supQ)
    # |P| stays O(1): the tail is no larger than the start
    tail = np.abs(fo.P[fo.tau > 0.5 * fo.tau[-1]]).max()
    assert tail <= supP
    assert supP < 1.0


def test_forcing_bounded_binary_collision(binary_collision_run):
    sc, tr = binary_collision_run
    fo = forcing_from_trajectory(tr.system, sc.cluster, tr, "collision")
    supP, supQ = fo.sup()
    assert np.isfinite(supP) and np.isfinite(supQ)
    assert supP < 10.0
