import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from conftest import equilateral
from nospin.blowup import autonomous_field, forcing_from_trajectory
from nospin.centconfig import _frame_for, classify, find_cc
from nospin.core import Cluster, MassSystem
from nospin.shadowing import (LambdaOperator, ShadowProblem, WeightedTrajectory, blowup_linearization,
                              blowup_shadow_problem, bump, choose_cutoff, contraction_factor, default_eta,
                              extend_and_force, gradient_flow_run, lambda_apply, lojasiewicz_estimate, make_grid,
                              picard_solve, scalar_toy_problem, spectral_split, weighted_norm)


def lagrange_eq(mode="collision"):
    sys = MassSystem([1, 1, 1])
    return classify(find_cc(sys, Cluster.everything(sys), equilateral()), mode)


# --------------------------------------------------------------------------- splitting

def test_split_diagonal():
    sp = spectral_split(np.diag([-1.0, 1.0, 0.0]))
    assert sp.beta == 1.0
    assert np.allclose(sp.pi_s, np.diag([1, 0, 0]), atol=1e-14)
    assert np.allclose(sp.pi_u, np.diag([0, 1, 0]), atol=1e-14)
    assert np.allclose(sp.pi_c, np.diag([0, 0, 1]), atol=1e-14)
    assert sp.C_sampled == pytest.approx(1.0, abs=1e-12)
    assert sp.C_eps == pytest.approx(1.1, abs=1e-12)
    assert sp.dims() == (1, 1, 1)


def test_split_jordan_block():
    sp = spectral_split(np.array([[-1.0, 1.0], [0.0, -1.0]]))
    assert sp.beta == 1.0
    assert np.allclose(sp.pi_s, np.eye(2), atol=1e-12)
    assert np.allclose(sp.pi_c, 0, atol=1e-12) and np.allclose(sp.pi_u, 0, atol=1e-12)
    # independent oracle: sup_t ||e^{At}|| e^{(beta - eps) t} from the closed form e^{-t}[[1, t], [0, 1]]
    rate = sp.beta - sp.eps
    res = minimize_scalar(lambda t: -np.linalg.norm(np.array([[1, t], [0, 1]]), 2) * math.exp(-t + rate * t),
                          bounds=(0, 40), method="bounded", options={"xatol": 1e-10})
    assert sp.C_sampled > 1
    assert sp.C_sampled == pytest.approx(-res.fun, rel=1e-3)


def check_projections(sp):
    d = sp.d
    assert np.abs(sp.pi_s + sp.pi_c + sp.pi_u - np.eye(d)).max() < 1e-12
    for P in (sp.pi_s, sp.pi_c, sp.pi_u):
        assert np.abs(P @ P - P).max() < 1e-12
        assert np.abs(P @ sp.A - sp.A @ P).max() < 1e-10 * max(1, np.abs(sp.A).max())


def test_split_projections_random(rng):
    for _ in range(20):
        d = int(rng.integers(2, 7))
        A = rng.normal(size=(d, d))
        check_projections(spectral_split(A))


def test_split_exponential_bounds_hold(rng):
    A = rng.normal(size=(5, 5))
    sp = spectral_split(A)
    r = sp.beta - sp.eps
    # oracle from the eigendecomposition; expm(-At) @ pi_u would leak stable modes through roundoff
    lam, V = np.linalg.eig(A)
    W = np.linalg.inv(V)
    s, u = lam.real < 0, lam.real > 0
    for t in np.linspace(0.0, 30.0, 61) + 0.123:
        Es = (V[:, s] * np.exp(lam[s] * t)) @ W[s]
        Eu = (V[:, u] * np.exp(-lam[u] * t)) @ W[u]
        assert np.linalg.norm(Es, 2) <= sp.C_eps * math.exp(-r * t) * (1 + 1e-9)
        assert np.linalg.norm(Eu, 2) <= sp.C_eps * math.exp(-r * t) * (1 + 1e-9)


def test_split_rejects_bad_eps():
    with pytest.raises(ValueError):
        spectral_split(np.diag([-1.0, 1.0]), eps=1.5)


def test_blowup_linearization_lagrange():
    for mode in ("collision", "parabolic"):
        eq = lagrange_eq(mode)
        A = blowup_linearization(eq)
        frame = _frame_for(eq.masses).with_chart(eq.chart)
        h = 1e-6
        J = np.column_stack([(autonomous_field(mode, frame, eq.p0 + h * e) - autonomous_field(mode, frame, eq.p0 - h * e))
                             / (2 * h) for e in np.eye(A.shape[0])])
        assert np.abs(J - A).max() < 1e-6
        sp = spectral_split(A)
        assert sp.beta == pytest.approx(eq.beta, abs=1e-10)
        assert np.allclose(np.sort_complex(sp.eigenvalues), np.sort_complex(eq.eigenvalues()), atol=1e-10)
        check_projections(sp)


# --------------------------------------------------------------------------- problem pieces

def test_bump():
    assert bump(0.5) == 1.0 and bump(1.0) == 1.0 and bump(2.0) == 0.0 and bump(3.0) == 0.0
    r = np.linspace(0.9, 2.1, 2001)
    b = bump(r)
    d1 = np.gradient(b, r)
    d2 = np.gradient(d1, r)
    assert np.all(np.diff(b) <= 1e-15)
    assert np.abs(d2).max() < 10.0  # bounded second derivative


def linear_problem(A, x0, g=None, T=5.0):
    A = np.atleast_2d(A)
    t = make_grid(T, 1e-3, 0.05)
    x = np.array([expm(A * tt) @ x0 for tt in t])
    return ShadowProblem(A, lambda v: A @ v, g or (lambda v, tt: np.zeros(A.shape[0])), t, x)


def test_extend_and_force_examples():
    A = np.diag([-1.0, -2.0])
    tn = -np.linspace(3, 0.01, 10)
    p = linear_problem(A, np.zeros(2))
    _, phi_neg, _, phi_pos = extend_and_force(p, tn)
    assert np.all(phi_neg == 0) and np.all(phi_pos == 0)
    p = linear_problem(A, np.array([0.3, -0.1]))
    xs_neg, phi_neg, xs_pos, phi_pos = extend_and_force(p, tn)
    assert np.allclose(phi_neg, -A @ np.array([0.3, -0.1]), atol=0)
    assert np.all(xs_neg == np.array([0.3, -0.1]))
    assert np.all(phi_pos == 0.0)
    gp = linear_problem(A, np.zeros(2), g=lambda v, tt: np.array([math.exp(tt), 0.0]))
    _, phi_neg, _, _ = extend_and_force(gp, tn)
    assert np.allclose(phi_neg[:, 0], -np.exp(tn), atol=1e-15)


def test_weighted_norm():
    t = np.array([0.0, 1.0, 2.0])
    z = np.array([[1.0], [math.exp(-1.0)], [0.5 * math.exp(-2.0)]])
    assert weighted_norm(t, z, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert WeightedTrajectory(t, z, 1.0).norm == pytest.approx(1.0, abs=1e-15)


def test_lambda_zero_problem():
    p = linear_problem(np.diag([-1.0, 1.0]), np.zeros(2))
    sp = spectral_split(p.A)
    op = LambdaOperator(sp, p, 0.3)
    out = lambda_apply(sp, p, WeightedTrajectory(op.t, np.zeros((len(op.t), 2)), 0.3), op)
    assert np.all(out.z == 0)


def test_lambda_scalar_toy_closed_form():
    p = scalar_toy_problem()
    sp = spectral_split(p.A)
    op = LambdaOperator(sp, p, 0.5)
    out = lambda_apply(sp, p, WeightedTrajectory(op.t, np.zeros((len(op.t), 1)), 0.5), op)
    pos = op.t > 0
    exact = np.exp(-2 * op.t[pos]) - np.exp(-op.t[pos])
    assert np.abs(out.z[pos, 0] - exact).max() < 1e-7
    assert np.abs(out.z[~pos, 0]).max() < 1e-12


def test_lambda_rejects_large_eta():
    p = scalar_toy_problem(T_f=5.0)
    sp = spectral_split(p.A)
    with pytest.raises(ValueError):
        LambdaOperator(sp, p, sp.beta - sp.eps)
    op = LambdaOperator(sp, p, 0.5)
    with pytest.raises(ValueError):
        lambda_apply(sp, p, WeightedTrajectory(op.t[:-1], np.zeros((len(op.t) - 1, 1)), 0.5), op)


def test_picard_trivial():
    A = np.diag([-1.0, 2.0])
    t = make_grid(5.0, 1e-3, 0.05)
    p = ShadowProblem(A, lambda v: A @ v + np.array([v[1] ** 2, v[0] * v[1]]), lambda v, tt: np.zeros(2), t,
                      np.zeros((len(t), 2)), lambda v: float(np.linalg.norm(v)))
    sp = spectral_split(A)
    tt, y, z, rep = picard_solve(sp, p.with_cutoff(0.1), 0.3)
    assert np.all(z == 0) and np.all(y == 0)
    assert rep.converged and rep.iterations == 1


def test_picard_scalar_toy():
    p = scalar_toy_problem()
    sp = spectral_split(p.A)
    tt, y, z, rep = picard_solve(sp, p, 0.5)
    exact = np.where(tt > 0, np.exp(-2 * tt) - np.exp(-tt), 0.0)
    assert np.abs(z[:, 0] - exact).max() < 1e-7
    assert rep.converged
    assert rep.rate_fit >= 0.5
    assert rep.membership_residual < 1e-8
    assert set(rep.as_dict()) == {"eta", "kappa", "iterations", "C_fit", "rate_fit", "membership_residual"}


# --------------------------------------------------------------------------- blow-up demo

@pytest.fixture(scope="module")
def blowup_demo(binary_collision_run):
    sc, tr = binary_collision_run
    forcing = forcing_from_trajectory(tr.system, sc.cluster, tr, "collision")
    eq = lagrange_eq("collision")
    delta0 = np.array([0.05, 0.02, 0.0, 0.0, 0.0, 0.0])
    prob = blowup_shadow_problem(eq, forcing, delta0)
    sp = spectral_split(prob.A)
    eta = default_eta(sp.beta, eq.v0)
    R, kap, op = choose_cutoff(sp, prob, eta)
    tt, y, z, rep = picard_solve(sp, prob.with_cutoff(R), eta, op=op)
    return dict(eq=eq, forcing=forcing, delta0=delta0, prob=prob, split=sp, eta=eta, R=R, kap=kap, op=op,
                t=tt, y=y, z=z, rep=rep)


def test_blowup_problem_valid(blowup_demo):
    prob = blowup_demo["prob"]
    v = prob.validate()
    assert v["f0"] < 1e-10
    assert np.isfinite(v["g_over_x2_max"])
    # the forcing vanishes on N = {r = 0}
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = 0.01 * rng.normal(size=prob.d)
        x[0] = 0.0
        assert np.linalg.norm(prob.g(x, float(rng.uniform(0, prob.t[-1])))) == 0.0


def test_blowup_shadow(blowup_demo):
    d = blowup_demo
    rep, eq, sp = d["rep"], d["eq"], d["split"]
    assert sp.beta == pytest.approx(eq.beta, abs=1e-10)
    assert d["eta"] == pytest.approx(min(eq.beta / 2, abs(eq.v0) / 4), abs=0)
    assert rep.converged
    assert rep.kappa < 1
    assert rep.rate_fit >= d["eta"]
    assert rep.membership_residual < 1e-8
    assert np.isfinite(rep.weighted_gap)


def test_contraction_monotone_in_radius(blowup_demo):
    d = blowup_demo
    kaps = []
    for R in (0.1, 0.05, 0.025):
        op = LambdaOperator(d["split"], d["prob"].with_cutoff(R), d["eta"])
        kaps.append(contraction_factor(op))
    assert kaps[0] > kaps[1] > kaps[2]
    assert kaps[-1] < 1


def test_grid_convergence(blowup_demo):
    d = blowup_demo
    fine = blowup_shadow_problem(d["eq"], d["forcing"], d["delta0"], h0=5e-4, hmax=0.01)
    sp = spectral_split(fine.A)
    tt, y, z, rep = picard_solve(sp, fine.with_cutoff(d["R"]), d["eta"])
    n_coarse = d["rep"].weighted_gap
    assert rep.weighted_gap == pytest.approx(n_coarse, rel=0.05)


# --------------------------------------------------------------------------- gradient flows

def quartic():
    return (lambda x: -0.25 * float(x @ x) ** 2, lambda x: -float(x @ x) * x)


def quadratic():
    return (lambda x: -0.5 * float(x @ x), lambda x: -x)


def mixed():
    return (lambda x: -x[0] ** 4 - x[1] ** 2, lambda x: np.array([-4 * x[0] ** 3, -2 * x[1]]))


def rot_pert(gradW):
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return lambda x: 0.1 * np.linalg.norm(gradW(x)) ** 1.5 * (J @ x) / max(np.linalg.norm(x), 1e-300)


def test_flow_quartic_radial():
    W, gW = quartic()
    res = gradient_flow_run(W, gW, 1.0, None, np.array([0.3, 0.4]))
    assert res.arclength[-1] == pytest.approx(0.5, abs=1e-6)
    assert res.tail_cauchy
    r = np.linalg.norm(res.x, axis=1)
    sel = res.t > 0
    assert np.allclose(r[sel], 0.5 / np.sqrt(1 + 2 * 0.25 * res.t[sel]), rtol=1e-8)


def test_flow_quadratic():
    W, gW = quadratic()
    res = gradient_flow_run(W, gW, 1.0, None, np.array([0.3, 0.4]), t_end=100.0)
    assert res.arclength[-1] == pytest.approx(0.5, abs=1e-10)
    assert res.tail_cauchy


def test_flow_perturbed_tail_cauchy():
    W, gW = quartic()
    res = gradient_flow_run(W, gW, 1.0, rot_pert(gW), np.array([0.3, 0.4]))
    assert res.tail_cauchy
    assert np.isfinite(res.arclength[-1])


def test_flow_rejects_large_perturbation():
    W, gW = quartic()
    with pytest.raises(ValueError):
        gradient_flow_run(W, gW, 1.0, lambda x: np.array([1.0, 0.0]), np.array([0.3, 0.4]))
    with pytest.raises(ValueError):
        gradient_flow_run(W, gW, 0.0, None, np.array([0.3, 0.4]))


def test_flow_escape():
    W, gW = quadratic()
    with pytest.raises(RuntimeError):
        gradient_flow_run(W, gW, -1.0, None, np.array([0.3, 0.4]), t_end=100.0, escape_radius=2.0)


@pytest.mark.parametrize("case,target", [(quadratic, 1.0), (quartic, 1.5)])
def test_lojasiewicz_exponents(case, target):
    W, gW = case()
    res = lojasiewicz_estimate(W, gW, 0.5, 2)
    assert res.alpha == pytest.approx(target, abs=0.02)
    assert res.below_two


def test_lojasiewicz_mixed_and_flow_property():
    W, gW = mixed()
    res = lojasiewicz_estimate(W, gW, 0.5, 2)
    assert 1.0 < res.alpha < 2.0
    # every W with alpha < 2 gives a flow of finite arclength
    for pert in (None, rot_pert(gW)):
        assert gradient_flow_run(W, gW, 1.0, pert, np.array([0.3, 0.2])).tail_cauchy


def test_lojasiewicz_constant_raises():
    with pytest.raises(ValueError):
        lojasiewicz_estimate(lambda x: 1.0, lambda x: np.zeros(2), 0.5, 2, n_shells=6, n_per_shell=20)
