"""Shadowing by a fixed point of the variation-of-constants operator, plus a gradient-flow lab.

Given x' = A x + h(x) + g(x, t) with g vanishing on an invariant manifold N,
and a solution x(t) on [0, T_f] converging to the equilibrium 0, the operator

    Lam(z)(t) =  int_{-inf}^t e^{A(t-s)} pi_s [h(x*+z) - h(x*) - g(x*, s) - phi(s)] ds
               - int_t^{+inf} e^{A(t-s)} pi_cu [h(x*+z) - h(x*) - g(x*, s) - phi(s)] ds

(x* = x extended by x(0) for t < 0, phi the matching forcing) is iterated in
the weighted sup norm ||z||_eta = sup e^{eta t}|z(t)|. y = x* + z then solves
the unforced equation and stays eta-close to x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize
from scipy.linalg import expm, schur

# --------------------------------------------------------------------------- #
# spectral splitting


@dataclass(frozen=True)
class LinearSplit:
    A: np.ndarray
    pi_s: np.ndarray
    pi_c: np.ndarray
    pi_u: np.ndarray
    beta: float
    eps: float
    C_eps: float  # sampled constant inflated by 10 %
    C_sampled: float
    eigenvalues: np.ndarray

    @property
    def pi_cu(self) -> np.ndarray:
        return self.pi_c + self.pi_u

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def dims(self):
        return tuple(int(round(np.trace(p).real)) for p in (self.pi_s, self.pi_c, self.pi_u))


def _invariant_basis(A, select):
    T, Z, sdim = schur(A.astype(complex), output="complex", sort=select)
    return Z[:, :sdim]


def spectral_split(A, eps: Optional[float] = None, center_tol: float = 1e-9, t_max: Optional[float] = None,
                   n_grid: int = 400) -> LinearSplit:
    """Stable/center/unstable projections of A and the constant of the exponential bounds.

    Projections are built from ordered Schur bases of the three invariant
    subspaces (so Jordan blocks are handled). ``eps`` defaults to beta/4.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    ev = np.linalg.eigvals(A)
    scale = max(1.0, float(np.abs(ev).max()))
    tol = center_tol * scale
    re = ev.real
    nz = np.abs(re[np.abs(re) > tol])
    beta = float(nz.min()) if nz.size else 0.0
    if eps is None:
        eps = beta / 4 if beta > 0 else 0.0
    if beta > 0 and not (0 < eps < beta):
        raise ValueError(f"eps must lie in (0, beta={beta:.6g}), got {eps}")
    Vs = _invariant_basis(A, lambda x: x.real < -tol)
    Vu = _invariant_basis(A, lambda x: x.real > tol)
    Vc = _invariant_basis(A, lambda x: abs(x.real) <= tol)
    if beta == 0 and (Vs.shape[1] or Vu.shape[1]):
        raise ValueError("zero spectral gap with nonempty stable/unstable subspace")
    V = np.hstack([Vs, Vc, Vu])
    Vinv = np.linalg.inv(V)
    ns, nc = Vs.shape[1], Vc.shape[1]

    def proj(lo, hi):
        P = V[:, lo:hi] @ Vinv[lo:hi, :]
        return P.real

    pis, pic, piu = proj(0, ns), proj(ns, ns + nc), proj(ns + nc, d)
    rate = beta - eps if beta > 0 else 0.0
    if t_max is None:
        t_max = 40.0 / max(rate, 0.05)
    ts = np.concatenate([[0.0], np.logspace(-3, math.log10(t_max), n_grid)])
    # exponentiate each restricted block so no mode leaks across subspaces
    blocks = []
    for lo, hi, sign, decay in ((0, ns, 1.0, rate), (ns + nc, d, -1.0, rate), (ns, ns + nc, 1.0, -eps),
                                (ns, ns + nc, -1.0, -eps)):
        if hi > lo:
            Vb = V[:, lo:hi]
            blocks.append((Vb, Vb.conj().T @ A @ Vb, Vinv[lo:hi, :], sign, decay))
    C = 0.0
    for t in ts:
        for Vb, Tb, Wb, sign, decay in blocks:
            C = max(C, np.linalg.norm(Vb @ expm(sign * t * Tb) @ Wb, 2) * math.exp(decay * t))
    return LinearSplit(A, pis, pic, piu, beta, float(eps), 1.1 * C, C, ev)


# --------------------------------------------------------------------------- #
# problem data


def bump(rho):
    """C^2 radial cutoff: 1 for rho <= 1, 0 for rho >= 2, quintic smoothstep between."""
    s = np.clip(np.asarray(rho, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class WeightedTrajectory:
    t: np.ndarray
    z: np.ndarray  # (N, d)
    eta: float

    @property
    def norm(self) -> float:
        return weighted_norm(self.t, self.z, self.eta)


def weighted_norm(t, z, eta) -> float:
    z = np.asarray(z, dtype=float).reshape(len(t), -1)
    return float(np.max(np.exp(eta * np.asarray(t)) * np.linalg.norm(z, axis=1)))


@dataclass
class ShadowProblem:
    """x' = f(x) + g(x, t) near the equilibrium 0, with a sampled solution x on [0, T_f].

    ``membership(x)`` returns the distance of x to the invariant manifold N.
    """

    A: np.ndarray
    f: Callable
    g: Callable
    t: np.ndarray
    x: np.ndarray
    membership: Callable = lambda x: 0.0
    cutoff_radius: float = np.inf
    alpha: Optional[float] = None
    name: str = "problem"

    @property
    def d(self) -> int:
        return int(np.atleast_2d(self.A).shape[0])

    def h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        raw = self.f(x) - self.A @ x
        if not np.isfinite(self.cutoff_radius):
            return raw
        return bump(np.linalg.norm(x) / self.cutoff_radius) * raw

    def with_cutoff(self, R: float) -> "ShadowProblem":
        return ShadowProblem(self.A, self.f, self.g, self.t, self.x, self.membership, R, self.alpha, self.name)

    def validate(self, n_samples: int = 200, radius: float = 1e-2, seed: int = 0) -> dict:
        """Sampled checks: f(0) = 0, g on N and the quadratic order of g near 0."""
        rng = np.random.default_rng(seed)
        d = self.d
        f0 = float(np.linalg.norm(self.f(np.zeros(d))))
        ratios = []
        for _ in range(n_samples):
            x = rng.normal(size=d)
            x *= radius * rng.uniform(0.1, 1.0) / np.linalg.norm(x)
            t = float(rng.uniform(self.t[0], self.t[-1]))
            gx = np.linalg.norm(self.g(x, t))
            ratios.append(gx / np.dot(x, x))
        return {"f0": f0, "g_over_x2_max": float(np.max(ratios))}


def make_grid(t_end: float, h0: float = 1e-3, hmax: float = 0.05, growth: float = 1.05) -> np.ndarray:
    """Grid on [0, t_end] with spacing growing geometrically from h0 up to hmax."""
    pts = [0.0]
    h = h0
    while pts[-1] < t_end:
        pts.append(min(pts[-1] + h, t_end))
        h = min(h * growth, hmax)
    if t_end - pts[-2] < 0.25 * h0 and len(pts) > 2:
        pts.pop(-2)
    return np.array(pts)


def extend_and_force(problem: ShadowProblem, t_neg: np.ndarray):
    """x* and phi on the backward grid ``t_neg`` (all < 0) and the forward grid.

    Returns (xs_neg, phi_neg, xs_pos, phi_pos); phi_pos is identically zero.
    """
    x0 = np.asarray(problem.x[0], dtype=float)
    A = np.atleast_2d(problem.A)
    base = -A @ x0 - problem.h(x0)
    xs_neg = np.tile(x0, (len(t_neg), 1))
    phi_neg = np.array([base - np.asarray(problem.g(x0, t), dtype=float) for t in t_neg]).reshape(len(t_neg), -1)
    xs_pos = np.asarray(problem.x, dtype=float).reshape(len(problem.t), -1)
    phi_pos = np.zeros_like(xs_pos)
    return xs_neg, phi_neg, xs_pos, phi_pos


# --------------------------------------------------------------------------- #
# the operator


DEGREE = 3  # interpolation degree of the integrand on each panel


def _phi_blocks(M: np.ndarray, dt: float, degree: int = DEGREE):
    """[e^{M dt}, Phi_1, ..., Phi_{degree+1}] with Phi_{j+1} = int_0^dt e^{M(dt-s)} s^j/j! ds."""
    d = M.shape[0]
    nb = degree + 2
    big = np.zeros((nb * d, nb * d))
    big[:d, :d] = M
    for j in range(nb - 1):
        big[j * d:(j + 1) * d, (j + 1) * d:(j + 2) * d] = np.eye(d)
    E = expm(big * dt)
    return [E[:d, j * d:(j + 1) * d] for j in range(nb)]


def _lagrange_coeffs(nodes, degree: int = DEGREE):
    """Monomial coefficients of each Lagrange basis polynomial on ``nodes``."""
    n = len(nodes)
    V = np.vander(np.asarray(nodes, dtype=float), n, increasing=True)
    C = np.linalg.inv(V)  # column j holds basis polynomial j
    out = np.zeros((n, degree + 1))
    out[:, :n] = C.T
    return out


def _panel_nodes(i: int, n: int, degree: int = DEGREE):
    """Indices of degree+1 consecutive nodes around panel [i, i+1], kept inside [0, n)."""
    m = min(degree + 1, n)
    lo = i - (m - 2) // 2
    lo = max(0, min(lo, n - m))
    return list(range(lo, lo + m))


def _segment_weights(M: np.ndarray, P: np.ndarray, t: np.ndarray, backward: bool):
    """Per-panel propagators and node weights on one smooth segment.

    Forward panel [a, b]:  int_a^b e^{M(b-s)} P S(s) ds = sum_j W_j S(node_j)
    Backward panel [a, b]: int_a^b e^{M(a-s)} P S(s) ds (called with M = -A).
    """
    n = len(t)
    fact = [math.factorial(j) for j in range(DEGREE + 1)]
    props, weights, nodes = [], [], []
    for i in range(n - 1):
        a, b = t[i], t[i + 1]
        dt = b - a
        idx = _panel_nodes(i, n)
        blocks = _phi_blocks(M, dt)
        rel = t[idx] - a
        if backward:
            rel = dt - rel  # s = a + rho with rho = dt - sigma
        coef = _lagrange_coeffs(rel)
        W = [sum(blocks[j + 1] * (c[j] * fact[j]) for j in range(DEGREE + 1)) @ P for c in coef]
        props.append(blocks[0])
        weights.append(W)
        nodes.append(idx)
    return props, weights, nodes


class LambdaOperator:
    """Lam on the grid [-T_b, 0] U [0, T_f] with cached quadrature weights."""

    def __init__(self, split: LinearSplit, problem: ShadowProblem, eta: float, T_b: Optional[float] = None):
        if split.beta > 0 and eta >= split.beta - split.eps:
            raise ValueError(f"eta={eta:.6g} must be below beta - eps = {split.beta - split.eps:.6g}")
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.split, self.problem, self.eta = split, problem, float(eta)
        rate = split.beta - split.eps if split.beta > 0 else 1.0
        if T_b is None:
            T_b = math.log(1e12) / rate
        self.T_b = float(T_b)
        tp = np.asarray(problem.t, dtype=float)
        if abs(tp[0]) > 0:
            raise ValueError("problem grid must start at t = 0")
        h0 = float(tp[1] - tp[0])
        hmax = float(np.max(np.diff(tp)))
        tn = -make_grid(self.T_b, h0, hmax)[::-1]
        self.t_neg, self.t_pos = tn, tp
        self.t = np.concatenate([tn[:-1], tp])
        self.xs_neg, self.phi_neg, self.xs_pos, self.phi_pos = extend_and_force(problem, tn)
        self.g_neg = np.array([problem.g(x, t) for x, t in zip(self.xs_neg, tn)]).reshape(len(tn), -1)
        self.g_pos = np.array([problem.g(x, t) for x, t in zip(self.xs_pos, tp)]).reshape(len(tp), -1)
        A = split.A
        self._fw = [_segment_weights(A, split.pi_s, tn, False), _segment_weights(A, split.pi_s, tp, False)]
        self._bw = [_segment_weights(-A, split.pi_cu, tn, True), _segment_weights(-A, split.pi_cu, tp, True)]
        # stable tail before -T_b with everything frozen at its value there
        M = A @ split.pi_s + split.pi_cu
        self._tail_s = -np.linalg.solve(M, split.pi_s)
        self.n_neg = len(tn)
        self.kappa = 0.0  # measured contraction, set by choose_cutoff

    def _sources(self, z_neg, z_pos):
        p = self.problem
        if not hasattr(self, "_h_neg"):
            self._h_neg = np.array([p.h(x) for x in self.xs_neg]).reshape(len(self.xs_neg), -1)
            self._h_pos = np.array([p.h(x) for x in self.xs_pos]).reshape(len(self.xs_pos), -1)
        hn = np.array([p.h(x + z) for x, z in zip(self.xs_neg, z_neg)]) - self._h_neg
        hp = np.array([p.h(x + z) for x, z in zip(self.xs_pos, z_pos)]) - self._h_pos
        Sn = hn - self.g_neg - self.phi_neg
        Sp = hp - self.g_pos - self.phi_pos
        return Sn, Sp

    def split_z(self, z):
        z = np.asarray(z, dtype=float).reshape(len(self.t), -1)
        k = self.n_neg - 1
        return z[: k + 1], z[k:]

    def apply(self, z) -> np.ndarray:
        """Lam(z) on the full grid; also stores the forward tail bound."""
        sp = self.split
        z_neg, z_pos = self.split_z(z)
        Sn, Sp = self._sources(z_neg, z_pos)
        d = sp.d
        # stable part, forward in time
        a = np.zeros((len(self.t), d))
        a[0] = self._tail_s @ Sn[0]
        off = 0
        for (props, weights, nodes), S in zip(self._fw, (Sn, Sp)):
            for i, (E, W, idx) in enumerate(zip(props, weights, nodes)):
                acc = E @ a[off + i]
                for Wj, j in zip(W, idx):
                    acc = acc + Wj @ S[j]
                a[off + i + 1] = sp.pi_s @ acc
            off += len(props)
        # center-unstable part, backward in time; nothing beyond T_f
        b = np.zeros((len(self.t), d))
        segs = list(zip(self._bw, (Sn, Sp)))
        offs = [0, self.n_neg - 1]
        for ((props, weights, nodes), S), o in reversed(list(zip(segs, offs))):
            for i in range(len(props) - 1, -1, -1):
                E, W, idx = props[i], weights[i], nodes[i]
                acc = E @ b[o + i + 1]
                for Wj, j in zip(W, idx):
                    acc = acc + Wj @ S[j]
                b[o + i] = sp.pi_cu @ acc
        s_end = float(np.linalg.norm(Sp[-1]))
        T_f = self.t_pos[-1]
        if self.eta > sp.eps:
            self.tail_bound = sp.C_eps * s_end * np.exp(sp.eps * (T_f - self.t)) / (self.eta - sp.eps)
        else:
            self.tail_bound = np.full(len(self.t), np.inf)
        return a - b

    def norm(self, z) -> float:
        return weighted_norm(self.t, z, self.eta)


def lambda_apply(split: LinearSplit, problem: ShadowProblem, z: WeightedTrajectory,
                 op: Optional[LambdaOperator] = None) -> WeightedTrajectory:
    op = op or LambdaOperator(split, problem, z.eta)
    if len(z.t) != len(op.t) or np.max(np.abs(z.t - op.t)) > 1e-12:
        raise ValueError("z is not sampled on the operator grid")
    out = op.apply(z.z)
    return WeightedTrajectory(op.t, out, z.eta)


def contraction_factor(op: LambdaOperator, n_probe: int = 6, amplitude: Optional[float] = None,
                       seed: int = 0) -> float:
    """Largest observed ||Lam z1 - Lam z2||_eta / ||z1 - z2||_eta over random probe pairs."""
    rng = np.random.default_rng(seed)
    d = op.split.d
    R = op.problem.cutoff_radius
    amp = amplitude if amplitude is not None else (0.2 * R if np.isfinite(R) else 1e-2)
    w = np.exp(-op.eta * np.maximum(op.t, 0.0))
    kap = 0.0
    for _ in range(n_probe):
        phase = rng.uniform(0, 2 * np.pi, size=d)
        freq = rng.uniform(0.1, 1.0, size=d)
        z1 = amp * w[:, None] * np.sin(freq[None, :] * op.t[:, None] + phase[None, :])
        z2 = z1 + 0.1 * amp * w[:, None] * rng.normal(size=d)[None, :]
        den = op.norm(z1 - z2)
        if den == 0:
            continue
        kap = max(kap, op.norm(op.apply(z1) - op.apply(z2)) / den)
    return kap


def choose_cutoff(split: LinearSplit, problem: ShadowProblem, eta: float, target: float = 0.5,
                  R0: Optional[float] = None, max_halvings: int = 30, T_b: Optional[float] = None):
    """Halve the cutoff radius until the measured contraction factor is below ``target``."""
    R = R0 if R0 is not None else max(float(np.max(np.linalg.norm(problem.x, axis=1))), 1e-3)
    for _ in range(max_halvings):
        p = problem.with_cutoff(R)
        op = LambdaOperator(split, p, eta, T_b)
        kap = contraction_factor(op)
        op.kappa = kap
        if kap < target:
            return R, kap, op
        R /= 2
    raise RuntimeError(f"no cutoff radius gives contraction below {target} (last kappa {kap:.3g})")


@dataclass
class ShadowReport:
    eta: float
    kappa: float
    iterations: int
    C_fit: float
    rate_fit: float
    membership_residual: float
    weighted_gap: float  # sup_{t >= 0} e^{eta t}|x - y|
    ode_residual: float
    tail_bound: float
    converged: bool
    diffs: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "kappa": self.kappa,
            "iterations": self.iterations,
            "C_fit": self.C_fit,
            "rate_fit": self.rate_fit,
            "membership_residual": self.membership_residual,
        }


def _fit_decay(t, gap, floor=1e-14):
    sel = (t > 0) & (gap > floor)
    if sel.sum() < 3:
        return 0.0, float("inf")
    slope, icpt = np.polyfit(t[sel], np.log(gap[sel]), 1)
    rate = -float(slope)
    C = float(np.max(gap[sel] * np.exp(rate * t[sel])))
    return C, rate


def picard_solve(split: LinearSplit, problem: ShadowProblem, eta: float, tol: float = 1e-10,
                 max_iter: int = 200, op: Optional[LambdaOperator] = None, T_b: Optional[float] = None):
    """Fixed point of Lam; returns (t, y, z, report) with y = x* + z on the full grid."""
    op = op or LambdaOperator(split, problem, eta, T_b)
    z = np.zeros((len(op.t), split.d))
    diffs = []
    converged = False
    for it in range(1, max_iter + 1):
        z_new = op.apply(z)
        diff = op.norm(z_new - z)
        diffs.append(diff)
        z = z_new
        if not np.isfinite(diff) or (len(diffs) > 3 and diff > 10 * diffs[0] and diffs[0] > 0):
            raise RuntimeError(
                f"Picard iteration diverges (diffs {diffs[-3:]}); try a smaller cutoff radius or smaller eta"
            )
        if diff < tol:
            converged = True
            break
    ratios = [b / a for a, b in zip(diffs[:-1], diffs[1:]) if a > 0]
    kappa = max([getattr(op, "kappa", 0.0)] + ratios)
    xs = np.vstack([op.xs_neg[:-1], op.xs_pos])
    y = xs + z
    k = op.n_neg - 1
    tp, yp = op.t[k:], y[k:]
    gap = np.linalg.norm(z[k:], axis=1)
    C, rate = _fit_decay(tp, gap)
    memb = float(max(problem.membership(v) for v in yp))
    # y solves y' = A y + h(y) (g vanishes on N); check with a nonuniform central difference
    dy = np.gradient(yp, tp, axis=0, edge_order=2)
    rhs = np.array([problem.A @ v + problem.h(v) + np.asarray(problem.g(v, t)) for v, t in zip(yp, tp)])
    ode_res = float(np.max(np.linalg.norm(dy - rhs, axis=1)[1:-1])) if len(tp) > 2 else 0.0
    rep = ShadowReport(float(eta), float(kappa), it, C, rate, memb, weighted_norm(tp, z[k:], eta), ode_res,
                       float(np.max(op.tail_bound[k:] * np.exp(eta * tp))), converged, diffs)
    return op.t, y, z, rep


# --------------------------------------------------------------------------- #
# gradient-flow lab


@dataclass
class FlowResult:
    t: np.ndarray
    x: np.ndarray
    arclength: np.ndarray
    tail_T: np.ndarray
    tail_increments: np.ndarray
    tail_cauchy: bool


def _metric_norm(metric, x, v):
    if metric is None:
        return float(np.linalg.norm(v))
    G = metric(x)
    return float(math.sqrt(max(v @ G @ v, 0.0)))


def check_small_perturbation(gradW, gamma_pert, dim, radius=1.0, n_shells=6, n_per_shell=50, seed=0):
    """Sampled check that |gamma_pert| / |grad W| decreases toward 0 on shrinking shells."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n_shells):
        r = radius * 4.0**-j
        worst = 0.0
        for _ in range(n_per_shell):
            x = rng.normal(size=dim)
            x *= r / np.linalg.norm(x)
            gw = np.linalg.norm(gradW(x))
            if gw > 0:
                worst = max(worst, np.linalg.norm(gamma_pert(x)) / gw)
        out.append(worst)
    return np.array(out)


def gradient_flow_run(W, gradW, k: float, gamma_pert, x0, metric=None, t_end: float = 1e14,
                      escape_radius: float = np.inf, rtol: float = 1e-12, atol: float = 1e-15,
                      tail_tol: float = 1e-4, check_pert: bool = True) -> FlowResult:
    """x' = k grad_G W(x) + gamma_pert(x) with Riemannian arclength accumulated alongside.

    ``metric(x)`` returns the matrix G(x) (identity when None); the gradient
    is G^{-1} grad W. The tail-Cauchy diagnostic records L(2T) - L(T) on a
    log grid of T; it passes when the last increments fall below
    ``tail_tol`` and do not grow.
    """
    if k == 0:
        raise ValueError("k must be nonzero")
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    gam = gamma_pert if gamma_pert is not None else (lambda x: np.zeros(dim))
    if check_pert and gamma_pert is not None:
        ratios = check_small_perturbation(gradW, gam, dim, radius=max(np.linalg.norm(x0), 1e-3))
        if not (ratios[-1] < ratios[0] and ratios[-1] < 0.5):
            raise ValueError(f"gamma_pert is not o(|grad W|) on sampled shells: {ratios}")

    def field_(x):
        g = np.asarray(gradW(x), dtype=float)
        if metric is not None:
            g = np.linalg.solve(metric(x), g)
        return k * g + np.asarray(gam(x), dtype=float)

    def rhs(t, y):
        x = y[:dim]
        v = field_(x)
        return np.concatenate([v, [_metric_norm(metric, x, v)]])

    def escaped(t, y):
        return escape_radius - np.linalg.norm(y[:dim])

    escaped.terminal = True
    # log-spaced output times keep the record small over huge horizons
    t_eval = np.concatenate([[0.0], np.logspace(-6, math.log10(t_end), 600)])
    # mixed decay rates make the flow stiff over long horizons; LSODA switches to BDF there
    sol = solve_ivp(rhs, (0.0, t_end), np.concatenate([x0, [0.0]]), method="LSODA", rtol=rtol, atol=atol,
                    t_eval=t_eval, events=escaped if np.isfinite(escape_radius) else None)
    if sol.status == 1:
        raise RuntimeError(f"trajectory left the neighborhood |x| < {escape_radius}")
    if sol.status < 0:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    t, x, L = sol.t, sol.y[:dim].T, sol.y[dim]
    Ts = np.logspace(0, math.log10(t_end / 2), 30)
    inc = np.interp(2 * Ts, t, L) - np.interp(Ts, t, L)
    tail_ok = bool(inc[-1] < tail_tol and inc[-1] <= inc[len(inc) // 2] + 1e-15)
    return FlowResult(t, x, L, Ts, inc, tail_ok)


@dataclass
class LojasiewiczResult:
    alpha: float
    radii: np.ndarray
    shell_alpha: np.ndarray
    below_two: bool


def lojasiewicz_estimate(W, gradW, radius: float, dim: int, n_shells: int = 24, n_per_shell: int = 400,
                         shrink: float = 0.5, seed: int = 0) -> LojasiewiczResult:
    """Exponent alpha in |grad W|^2 >= |W - W(0)|^alpha near the critical point 0.

    On each shell |x| = rho the worst ratio log|grad W|^2 / log|W - W(0)| is
    taken; the shell values are extrapolated to rho -> 0 by a quadratic fit
    in 1/L with L = -log rho.
    """
    rng = np.random.default_rng(seed)
    W0 = float(W(np.zeros(dim)))

    def ratio(u, rho):
        x = rho * u / np.linalg.norm(u)
        dw = abs(float(W(x)) - W0)
        g = np.asarray(gradW(x), dtype=float)
        g2 = float(g @ g)
        if dw <= 0 or g2 <= 0 or dw >= 1 or g2 >= 1:
            return -np.inf
        return math.log(g2) / math.log(dw)

    radii, vals = [], []
    best_u = None
    for j in range(n_shells):
        rho = radius * shrink**j
        U = rng.normal(size=(n_per_shell, dim))
        if best_u is not None:
            U[0] = best_u
        r = np.array([ratio(u, rho) for u in U])
        if not np.any(np.isfinite(r)):
            continue
        # the worst direction can be very narrow; polish the best few samples locally
        worst, u_w = -np.inf, None
        for i in np.argsort(r)[::-1][:3]:
            if not np.isfinite(r[i]):
                continue
            res = minimize(lambda u: -ratio(u, rho) if np.any(u) else np.inf, U[i], method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400 * dim})
            val = max(r[i], -res.fun) if np.isfinite(res.fun) else r[i]
            if val > worst:
                worst, u_w = val, (res.x if -res.fun >= r[i] else U[i])
        best_u = u_w / np.linalg.norm(u_w)
        radii.append(rho)
        vals.append(worst)
    if len(vals) < 4:
        raise ValueError("W is (numerically) constant near 0 or the radius is too large")
    radii, vals = np.array(radii), np.array(vals)
    inv = 1.0 / (-np.log(radii))
    coef = np.polyfit(inv, vals, 2)
    alpha = float(coef[-1])
    return LojasiewiczResult(alpha, radii, vals, alpha < 2.0)


def scalar_toy_problem(T_f: float = 30.0, h0: float = 1e-3, hmax: float = 0.02) -> ShadowProblem:
    """x' = -x + e^{-2t} (t >= 0) with x(0) = 0, so x = e^{-t} - e^{-2t} and N = {0}.

    Lam(0) = e^{-2t} - e^{-t} = -x on t > 0 in closed form, and the shadow is y = 0.
    """
    t = make_grid(T_f, h0, hmax)
    x = (np.exp(-t) - np.exp(-2 * t))[:, None]

    def g(_, tt):
        return np.array([math.exp(-2 * tt)]) if tt >= 0 else np.zeros(1)

    return ShadowProblem(np.array([[-1.0]]), lambda v: -v, g, t, x, lambda v: abs(float(v[0])), np.inf, 2.0,
                         "scalar-toy")


# --------------------------------------------------------------------------- #
# blow-up problems


def blowup_linearization(eq) -> np.ndarray:
    """Df at the equilibrium (0, v0, s0, 0) of the blown-up field, in (x, v, s, w) order."""
    from .centconfig import CentralConfig, restricted_hessian

    d = eq.s0.size
    A = np.zeros((2 + 2 * d, 2 + 2 * d))
    A[0, 0] = eq.radial_eig
    A[1, 1] = eq.v0
    if d:
        cc = CentralConfig(eq.masses, eq.q, 0.0, True)
        A[2:2 + d, 2 + d:] = np.eye(d)
        A[2 + d:, 2:2 + d] = restricted_hessian(cc, eq.chart)
        A[2 + d:, 2 + d:] = -0.5 * eq.v0 * np.eye(d)
    return A


def default_eta(beta: float, v0: float) -> float:
    return min(beta / 2.0, abs(v0) / 4.0)


def blowup_shadow_problem(eq, forcing, delta0, T_f: float = 20.0, h0: float = 1e-3, hmax: float = 0.02,
                          rtol: float = 1e-12) -> ShadowProblem:
    """Forced blow-up system around a CC equilibrium, shifted so the equilibrium is 0.

    The reference solution starts at p0 + delta0 and is integrated on the
    shadowing grid; N = {x = 0} (no cluster size), on which the forcing
    vanishes identically.
    """
    from .blowup import autonomous_field, forcing_term
    from .centconfig import _frame_for

    frame = _frame_for(eq.masses).with_chart(eq.chart)
    variant = eq.mode
    p0 = eq.p0
    A = blowup_linearization(eq)

    def f(x):
        return autonomous_field(variant, frame, p0 + x)

    def g(x, t):
        P, Q, kap = forcing(t)
        if Q.size != frame.dim:
            Q = np.zeros(frame.dim)
        return forcing_term(variant, frame, p0 + x, P, Q, kap)

    # roundoff in unstable directions grows like e^{lam_u t}; stop before it reaches 1e-8
    lam_u = np.max(np.linalg.eigvals(A).real)
    if lam_u > 1e-9:
        T_f = min(T_f, np.log(1e8) / lam_u)
    t = make_grid(T_f, h0, hmax)
    sol = solve_ivp(lambda tt, x: f(x) + g(x, tt), (0.0, T_f), np.asarray(delta0, dtype=float), method="DOP853",
                    rtol=rtol, atol=1e-14, t_eval=t)
    if not sol.success:
        raise RuntimeError(f"reference solution failed: {sol.message}")
    return ShadowProblem(A, f, g, t, sol.y.T, lambda x: abs(float(x[0])), np.inf, None, f"blowup-{variant}")
