"""Central configurations: residual, Newton search, Hessian and linear classification."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .blowup import ShapeFrame, c2r, fubini_data, hessian_V, shape_derivatives
from .core import (
    Cluster,
    MassSystem,
    check_no_collision,
    potential_gradient,
)

DEGENERACY_TOL = 1e-8


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class CentralConfig:
    masses: np.ndarray
    q: np.ndarray  # (k, 2), centered
    lam: float
    normalized: bool
    residual: float = 0.0
    history: tuple = ()


def _cluster_masses_positions(sys: MassSystem, cluster: Cluster, q_k):
    m = sys.masses[cluster.idx]
    q = np.asarray(q_k, dtype=float).reshape(-1, 2)
    if q.shape[0] == sys.n and cluster.size != sys.n:
        q = q[cluster.idx]
    if q.shape[0] != cluster.size:
        raise ValueError(f"expected {cluster.size} positions, got {q.shape[0]}")
    return m, q


def _moments(m, q):
    c = m @ q / m.sum()
    qc = q - c
    I = float(m @ np.sum(qc**2, axis=1))
    iu, ju = np.triu_indices(len(m), 1)
    U = float(np.sum(m[iu] * m[ju] / np.linalg.norm(q[iu] - q[ju], axis=1)))
    return qc, I, U


def cc_residual(sys: MassSystem, cluster: Cluster, q_k):
    """(residual, lambda) with lambda = U_k/I_k and the mass-metric norm of grad U + lambda m q."""
    m, q = _cluster_masses_positions(sys, cluster, q_k)
    check_no_collision(q)
    qc, I, U = _moments(m, q)
    lam = U / I
    g = potential_gradient(m, qc) + lam * m[:, None] * qc
    res = math.sqrt(float(np.sum(np.sum(g**2, axis=1) / m)))
    return res, lam


def _frame_for(masses) -> ShapeFrame:
    sys = MassSystem(np.asarray(masses, dtype=float))
    return ShapeFrame.build(sys, Cluster.everything(sys))


def _to_chart(frame: ShapeFrame, q):
    """Chart coordinates of a configuration in its best chart."""
    m = frame.masses
    qc = q - m @ q / m.sum()
    zc = frame.metric.to_complex(qc)
    fr = frame.with_chart(frame.chart_of(zc))
    others = [j for j in range(fr.k - 1) if j != fr.chart]
    return fr, c2r(zc[others] / zc[fr.chart])


def _from_chart(frame: ShapeFrame, s) -> np.ndarray:
    """Normalized (I = 1), gauge-fixed planar configuration for chart point s."""
    Z = frame.embed(s)
    zc = Z / frame.metric.norm(Z)
    zc = zc * np.exp(-1j * np.angle(zc[0]))  # first relative position on +x
    return frame.planar(zc)


def find_cc(sys: MassSystem, cluster: Cluster, guess, tol: float = 1e-13, max_iter: int = 200) -> CentralConfig:
    """Levenberg-damped Newton for grad V = 0 on the shape chart.

    Working on the quotient chart removes both the scaling and the rotation
    gauge; the result is normalized to I_k = 1 with the first relative
    position on the positive x-axis.
    """
    m, q = _cluster_masses_positions(sys, cluster, guess)
    check_no_collision(q)
    frame, s = _to_chart(_frame_for(m), q)
    if frame.dim == 0:
        qn = _from_chart(frame, s)
        res, lam = cc_residual(MassSystem(m), Cluster.everything(MassSystem(m)), qn)
        return CentralConfig(m, qn, lam, True, res, (res,))
    damp = 1e-3
    history = []

    def grad(s_):
        return shape_derivatives(frame, s_, np.zeros(frame.dim)).gradV

    g = grad(s)
    gn = float(np.linalg.norm(g))
    for _ in range(max_iter):
        history.append(gn)
        if gn < tol:
            break
        H = hessian_V(frame, s)
        while True:
            step = -np.linalg.solve(H.T @ H + damp * np.eye(frame.dim), H.T @ g)
            s_new = s + step
            try:
                g_new = grad(s_new)
            except ValueError:
                g_new = None
            if g_new is not None and np.all(np.isfinite(g_new)) and np.linalg.norm(g_new) < gn:
                s, g, gn = s_new, g_new, float(np.linalg.norm(g_new))
                damp = max(damp / 10.0, 1e-15)
                break
            damp *= 10.0
            if damp > 1e12:
                raise ConvergenceError("find_cc: damping exhausted", gn)
        # move to a better chart when the fixed coordinate becomes small
        Z = frame.embed(s)
        if frame.chart_ratio(Z) < 0.3:
            frame, s = _to_chart(frame, frame.planar(Z))
            g = grad(s)
            gn = float(np.linalg.norm(g))
    else:
        raise ConvergenceError("find_cc: no convergence", gn)
    qn = _from_chart(frame, s)
    msys = MassSystem(m)
    res, lam = cc_residual(msys, Cluster.everything(msys), qn)
    return CentralConfig(m, qn, lam, True, res, tuple(history))


def normalize_cc(cc: CentralConfig) -> CentralConfig:
    m = cc.masses
    qc, I, U = _moments(m, cc.q)
    qn = qc / math.sqrt(I)
    zc = qn[0, 0] + 1j * qn[0, 1]
    rot = np.exp(-1j * np.angle(zc))
    w = (qn[:, 0] + 1j * qn[:, 1]) * rot
    qn = np.stack([w.real, w.imag], axis=1)
    msys = MassSystem(m)
    res, lam = cc_residual(msys, Cluster.everything(msys), qn)
    return CentralConfig(m, qn, lam, True, res, cc.history)


def cc_chart(cc: CentralConfig, chart: Optional[int] = None):
    """(frame, s0) for a central configuration, in the best or the given chart."""
    base = _frame_for(cc.masses)
    if chart is None:
        return _to_chart(base, cc.q)
    m = cc.masses
    zc = base.metric.to_complex(cc.q - m @ cc.q / m.sum())
    fr = base.with_chart(chart)
    others = [j for j in range(fr.k - 1) if j != fr.chart]
    return fr, c2r(zc[others] / zc[fr.chart])


def restricted_hessian(cc: CentralConfig, chart: Optional[int] = None) -> np.ndarray:
    """A(s0)^{-1} Hess V(s0): the linearization of the Fubini-Study gradient at the CC."""
    frame, s0 = cc_chart(cc, chart)
    if frame.dim == 0:
        return np.zeros((0, 0))
    A = fubini_data(frame, s0).A
    return np.linalg.solve(A, hessian_V(frame, s0))


def hessian_eigenvalues(cc: CentralConfig, chart: Optional[int] = None) -> np.ndarray:
    """Sorted eigenvalues of the restricted Hessian (real: it is A-symmetric)."""
    frame, s0 = cc_chart(cc, chart)
    if frame.dim == 0:
        return np.zeros(0)
    A = fubini_data(frame, s0).A
    H = hessian_V(frame, s0)
    return np.sort(eigh(0.5 * (H + H.T), A, eigvals_only=True))


def lambda_pair(v0: float, c: float):
    """Roots of lambda^2 + (v0/2) lambda - c = 0, as (lambda_plus, lambda_minus)."""
    disc = complex(v0 * v0 + 16.0 * c)
    root = np.sqrt(disc)
    lp = (-v0 + root) / 4.0
    lm = (-v0 - root) / 4.0
    if disc.real >= 0:
        lp, lm = lp.real, lm.real
    return lp, lm


@dataclass(frozen=True)
class EquilibriumData:
    mode: str
    masses: np.ndarray
    q: np.ndarray
    chart: int
    s0: np.ndarray
    V: float
    v0: float
    hessian_eigs: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    radial_eig: float  # u-direction (parabolic) or r-direction (collision)
    beta: float
    degenerate: bool
    residual: float = 0.0

    def eigenvalues(self) -> np.ndarray:
        """Full spectrum of the blown-up linearization at (0, v0, s0, 0)."""
        return np.concatenate([[self.radial_eig, self.v0], self.lam_plus, self.lam_minus]).astype(complex)

    @property
    def p0(self) -> np.ndarray:
        return np.concatenate([[0.0, self.v0], self.s0, np.zeros_like(self.s0)])

    def signature(self, tol: float = 1e-12):
        ev = self.eigenvalues()
        return (int(np.sum(ev.real < -tol)), int(np.sum(np.abs(ev.real) <= tol)), int(np.sum(ev.real > tol)))


def classify(cc: CentralConfig, mode: str, chart: Optional[int] = None,
             degeneracy_tol: float = DEGENERACY_TOL) -> EquilibriumData:
    """Equilibrium data of the blown-up field at the CC.

    v0 = +sqrt(2V) for ``parabolic`` and -sqrt(2V) for ``collision``. Each
    Hessian eigenvalue c gives lambda+- = (-v0 +- sqrt(v0^2 + 16c))/4. The
    radial eigenvalue is -v0/2 for u' = -uv/2 and v0 for r' = rv.
    """
    if mode not in ("parabolic", "collision"):
        raise ValueError(f"unknown mode {mode!r}")
    frame, s0 = cc_chart(cc, chart)
    V = fubini_data(frame, s0).V
    v0 = math.sqrt(2 * V) * (1.0 if mode == "parabolic" else -1.0)
    cs = hessian_eigenvalues(cc, chart)
    pairs = [lambda_pair(v0, c) for c in cs]
    lp = np.array([p[0] for p in pairs], dtype=complex if any(isinstance(p[0], complex) for p in pairs) else float)
    lm = np.array([p[1] for p in pairs], dtype=lp.dtype)
    radial = -v0 / 2 if mode == "parabolic" else v0
    scale = max(float(np.abs(cs).max()) if cs.size else 0.0, 1.0)
    degenerate = bool(np.any(np.abs(cs) < degeneracy_tol * scale))
    ev = np.concatenate([[radial, v0], lp, lm]).astype(complex)
    re = np.abs(ev.real)
    nz = re[re > degeneracy_tol * max(abs(v0), 1.0)]
    beta = float(nz.min()) if nz.size else 0.0
    return EquilibriumData(mode, cc.masses, cc.q, frame.chart, s0, V, v0, cs, lp, lm, radial, beta, degenerate,
                           cc.residual)


# --------------------------------------------------------------------------- #
# multistart

def _shape_key(m, q, digits=6):
    iu, ju = np.triu_indices(len(m), 1)
    d = np.linalg.norm(q[iu] - q[ju], axis=1)
    return tuple(sorted((round(float(m[i]), 9), round(float(m[j]), 9), round(float(x), digits))
                        if m[i] <= m[j] else (round(float(m[j]), 9), round(float(m[i]), 9), round(float(x), digits))
                        for i, j, x in zip(iu, ju, d)))


def multistart(sys: MassSystem, cluster: Cluster, n_starts: int = 50, seed: int = 0, tol: float = 1e-12):
    """Random-start search; distinct CCs up to rotation, reflection and equal-mass relabelling."""
    rng = np.random.default_rng(seed)
    k = cluster.size
    found = {}
    for _ in range(n_starts):
        q = rng.normal(size=(k, 2))
        try:
            cc = find_cc(sys, cluster, q, tol=tol)
        except (ConvergenceError, ValueError):
            continue
        if cc.residual > 1e-9:
            continue
        key = _shape_key(cc.masses, cc.q)
        found.setdefault(key, cc)
    return sorted(found.values(), key=lambda c: c.lam)


# --------------------------------------------------------------------------- #
# JSON records

def to_record(cc: CentralConfig, eq: Optional[EquilibriumData] = None) -> dict:
    rec = {
        "masses": [float(x) for x in cc.masses],
        "positions": [[float(a), float(b)] for a, b in cc.q],
        "lambda": float(cc.lam),
    }
    if eq is not None:
        rec["eigenvalues"] = [float(x) for x in eq.hessian_eigs]
        rec["beta"] = float(eq.beta)
        rec["mode"] = eq.mode
    return rec


def from_record(rec: dict) -> CentralConfig:
    m = np.asarray(rec["masses"], dtype=float)
    q = np.asarray(rec["positions"], dtype=float)
    msys = MassSystem(m)
    res, lam = cc_residual(msys, Cluster.everything(msys), q)
    if not math.isclose(lam, float(rec["lambda"]), rel_tol=1e-9):
        raise ValueError(f"record lambda {rec['lambda']} disagrees with U/I = {lam}")
    qc, I, _ = _moments(m, q)
    return CentralConfig(m, qc, lam, abs(I - 1.0) < 1e-9, res)


def save_cc(path, cc: CentralConfig, eq: Optional[EquilibriumData] = None) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(to_record(cc, eq), indent=2))


def load_cc(path) -> CentralConfig:
    with open(path) as fh:
        return from_record(json.load(fh))
