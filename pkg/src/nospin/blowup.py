"""Shape coordinates, Fubini-Study geometry and McGehee blow-up variables.

A cluster's relative configuration z in C^{k-1} (mass-metric Hermitian
form) is written

    z = r e^{i theta} (s, 1) / ||(s, 1)||

where the "1" sits at the chart index ``a`` and ``s`` in C^{k-2} is stored as
a real vector of interleaved (re, im) pairs. Every derivative of F, A, B and
V with respect to ``s`` is computed in closed form from the Hermitian form,
not by numerical differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from .core import (
    CartesianState,
    Cluster,
    MassMetric,
    MassSystem,
    cluster_geometry,
    mass_metric,
    potential_hessian,
)

CHART_SWITCH_RATIO = 0.3


class ChartError(ValueError):
    """The configuration is (nearly) singular in the requested chart."""


# --------------------------------------------------------------------------- #
# chart helpers

def r2c(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[0::2] + 1j * x[1::2]


def c2r(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


@dataclass(frozen=True)
class ShapeFrame:
    """Cluster bookkeeping shared by every shape-space computation."""

    system: MassSystem
    cluster: Cluster
    metric: MassMetric
    chart: int = -1  # position of the fixed homogeneous coordinate; -1 means last

    @classmethod
    def build(cls, sys: MassSystem, cluster: Cluster, chart: int = -1) -> "ShapeFrame":
        met = mass_metric(sys, cluster)
        a = chart % (cluster.size - 1)
        return cls(sys, cluster, met, a)

    def with_chart(self, a: int) -> "ShapeFrame":
        return replace(self, chart=a % (self.cluster.size - 1))

    @property
    def k(self) -> int:
        return self.cluster.size

    @property
    def dim(self) -> int:
        """Real dimension 2k - 4 of the shape chart."""
        return 2 * self.k - 4

    @property
    def masses(self) -> np.ndarray:
        return self.metric.masses

    # -- embeddings ---------------------------------------------------------
    @cached_property
    def others(self) -> np.ndarray:
        return np.array([j for j in range(self.k - 1) if j != self.chart], dtype=int)

    def embed(self, s) -> np.ndarray:
        Z = np.ones(self.k - 1, dtype=complex)
        Z[self.others] = r2c(s)
        return Z

    def embed0(self, w) -> np.ndarray:
        W = np.zeros(self.k - 1, dtype=complex)
        W[self.others] = r2c(w)
        return W

    @cached_property
    def E(self) -> np.ndarray:
        """Complex directions E_l in C^{k-1} of the real chart coordinates, (dim, k-1)."""
        E = np.zeros((self.dim, self.k - 1), dtype=complex)
        for p, j in enumerate(self.others):
            E[2 * p, j] = 1.0
            E[2 * p + 1, j] = 1j
        return E

    def basis(self) -> np.ndarray:
        return self.E

    @cached_property
    def MEt(self) -> np.ndarray:
        """Mc E^T, so that b(X, E_l) = conj(X) @ MEt."""
        return self.metric.Mc @ self.E.T

    @cached_property
    def H(self) -> np.ndarray:
        """H[l, j] = b(E_l, E_j), constant on the chart."""
        return np.conj(self.E) @ self.MEt

    @cached_property
    def Er(self) -> np.ndarray:
        return np.array([c2r(e) for e in self.E]).reshape(self.dim, 2 * (self.k - 1))

    @cached_property
    def pairs(self):
        iu, ju = np.triu_indices(self.k, 1)
        m = self.masses
        return iu, ju, m[iu] * m[ju]

    def chart_of(self, zc: np.ndarray) -> int:
        """Chart index whose homogeneous coordinate is largest (mass weighted)."""
        w = np.abs(zc) * np.sqrt(np.diag(self.metric.Mc))
        return int(np.argmax(w))

    def chart_ratio(self, zc: np.ndarray, a: Optional[int] = None) -> float:
        a = self.chart if a is None else a
        w = np.abs(zc) * np.sqrt(np.diag(self.metric.Mc))
        return float(w[a] / w.max())

    # -- cluster potential on complex relative coordinates --------------------
    def planar(self, zc) -> np.ndarray:
        return self.metric.to_planar(np.asarray(zc, dtype=complex))

    def full(self, zc) -> np.ndarray:
        """Complex positions of all k bodies relative to the cluster center."""
        m = self.masses
        return np.append(zc, -(m[:-1] @ zc) / m[-1])

    def Uk(self, zc) -> float:
        x = self.full(zc)
        iu, ju, mm = self.pairs
        return float(np.sum(mm / np.abs(x[iu] - x[ju])))

    def U_and_grad(self, zc):
        """U_k and its complex gradient g (dU = re(conj(g) . dz)) in one pass."""
        x = self.full(zc)
        iu, ju, mm = self.pairs
        dx = x[ju] - x[iu]
        r = np.abs(dx)
        U = float(np.sum(mm / r))
        f = mm * dx / r**3  # pull on i toward j
        gfull = np.zeros(self.k, dtype=complex)
        np.add.at(gfull, iu, f)
        np.add.at(gfull, ju, -f)
        m = self.masses
        return U, gfull[:-1] - (m[:-1] / m[-1]) * gfull[-1]

    def grad_Uk(self, zc) -> np.ndarray:
        """Complex gradient g with dU = re(conj(g) . dz)."""
        return self.U_and_grad(zc)[1]

    def _jac(self) -> np.ndarray:
        """d(planar positions)/d(real interleaved z), shape (2k, 2k-2)."""
        k = self.k
        m = self.masses
        J = np.zeros((2 * k, 2 * (k - 1)))
        J[: 2 * (k - 1), :] = np.eye(2 * (k - 1))
        for j in range(k - 1):
            J[2 * (k - 1):, 2 * j: 2 * j + 2] = -(m[j] / m[-1]) * np.eye(2)
        return J

    def hess_Uk(self, zc) -> np.ndarray:
        """Real Hessian of U_k in interleaved z coordinates."""
        J = self._jac()
        return J.T @ potential_hessian(self.masses, self.planar(zc)) @ J


# --------------------------------------------------------------------------- #
# Fubini-Study data

@dataclass(frozen=True)
class FubiniData:
    F: float
    A: np.ndarray
    B: np.ndarray
    Omega: float
    G: float
    V: float
    norm2: float


def fubini_data(frame: ShapeFrame, s, omega=None) -> FubiniData:
    """F = ||omega||_FS^2, its matrix A(s), the row B(s), Omega, G and V_k(s)."""
    d = frame.dim
    s = np.asarray(s, dtype=float).reshape(d)
    Mc = frame.metric.Mc
    Z = frame.embed(s)
    MZ = Mc @ Z
    n = float(np.real(np.conj(Z) @ MZ))
    V = math.sqrt(n) * frame.Uk(Z)
    if d == 0:
        return FubiniData(0.0, np.zeros((0, 0)), np.zeros(0), 0.0, 0.0, V, n)
    P = np.conj(Z) @ frame.MEt
    A = frame.H.real / n - np.real(np.outer(np.conj(P), P)) / n**2
    B = P.imag / n
    if omega is None:
        return FubiniData(0.0, A, B, 0.0, 0.0, V, n)
    W = frame.embed0(np.asarray(omega, dtype=float).reshape(d))
    p = complex(np.conj(MZ) @ W)
    q = float(np.real(np.conj(W) @ Mc @ W))
    F = q / n - abs(p) ** 2 / n**2
    return FubiniData(max(F, 0.0), A, B, p.imag, p.real, V, n)


@dataclass(frozen=True)
class ShapeDerivatives:
    """Closed-form s-derivatives needed by the equations of motion."""

    fd: FubiniData
    gradV: np.ndarray
    gradF: np.ndarray
    DAww: np.ndarray  # DA(s)(omega) omega
    K: np.ndarray  # curl of the connection 1-form B


def shape_derivatives(frame: ShapeFrame, s, omega) -> ShapeDerivatives:
    d = frame.dim
    if d == 0:
        z = np.zeros(0)
        return ShapeDerivatives(fubini_data(frame, s, omega), z, z, z, np.zeros((0, 0)))
    s = np.asarray(s, dtype=float).reshape(d)
    omega = np.asarray(omega, dtype=float).reshape(d)
    Mc = frame.metric.Mc
    Z = frame.embed(s)
    W = frame.embed0(omega)
    MZ = Mc @ Z
    MW = Mc @ W
    n = float(np.real(np.conj(Z) @ MZ))
    N = math.sqrt(n)
    H = frame.H  # H[l, j] = b(E_l, E_j)
    P = np.conj(Z) @ frame.MEt  # P[j] = b(Z, E_j)
    dn = 2.0 * P.real
    p = complex(np.conj(MZ) @ W)
    q = float(np.real(np.conj(W) @ MW))
    F = q / n - abs(p) ** 2 / n**2
    PP = np.real(np.outer(np.conj(P), P))
    A = H.real / n - PP / n**2
    B = P.imag / n

    # V = N U(Z)
    U, g = frame.U_and_grad(Z)
    dU = np.real(np.conj(g) @ frame.E.T)
    gradV = dn / (2 * N) * U + N * dU
    fd = FubiniData(max(F, 0.0), A, B, p.imag, p.real, N * U, n)

    # F = q/n - |p|^2/n^2 at fixed omega; dp/ds_l = b(E_l, W)
    R = np.conj(frame.E) @ MW
    dp2 = 2.0 * np.real(np.conj(p) * R)
    gradF = -q * dn / n**2 - dp2 / n**2 + 2 * abs(p) ** 2 * dn / n**3

    # sum_{l,j} omega_l dA_ij/ds_l omega_j without forming the 3-tensor
    dnw = dn @ omega
    Pw = P @ omega
    DAww = (
        -(H.real @ omega) * dnw / n**2
        - np.real((np.conj(H).T @ omega) * Pw + np.conj(P) * (omega @ H @ omega)) / n**2
        + 2.0 * (PP @ omega) * dnw / n**3
    )

    # dB_l/ds_j = im H[j, l]/n - im P_l dn_j / n^2 ; K_jl = dB_l/ds_j - dB_j/ds_l
    dB = H.imag / n - np.outer(dn, P.imag) / n**2
    K = dB - dB.T
    return ShapeDerivatives(fd, gradV, gradF, DAww, K)


def hessian_V(frame: ShapeFrame, s) -> np.ndarray:
    """Euclidean Hessian of V_k in the chart coordinates."""
    d = frame.dim
    if d == 0:
        return np.zeros((0, 0))
    s = np.asarray(s, dtype=float)
    Mc = frame.metric.Mc
    Z = frame.embed(s)
    n = float(np.real(np.conj(Z) @ Mc @ Z))
    N = math.sqrt(n)
    P = np.conj(Z) @ frame.MEt
    dn = 2.0 * P.real
    d2n = 2.0 * frame.H.real
    dN = dn / (2 * N)
    d2N = d2n / (2 * N) - np.outer(dn, dn) / (4 * N**3)
    U, g = frame.U_and_grad(Z)
    dU = np.real(np.conj(g) @ frame.E.T)
    Er = frame.Er
    d2U = Er @ frame.hess_Uk(Z) @ Er.T
    return d2N * U + np.outer(dN, dU) + np.outer(dU, dN) + N * d2U


def fs_gradient_V(frame: ShapeFrame, s) -> np.ndarray:
    """Fubini-Study gradient A^{-1} grad V."""
    if frame.dim == 0:
        return np.zeros(0)
    sd = shape_derivatives(frame, s, np.zeros(frame.dim))
    return np.linalg.solve(sd.fd.A, sd.gradV)


# --------------------------------------------------------------------------- #
# shape states

@dataclass(frozen=True)
class External:
    """Center of mass of the cluster and the bodies outside it at one instant."""

    c: np.ndarray
    cdot: np.ndarray
    q: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class ShapeState:
    frame: ShapeFrame
    t: float
    r: float
    rho: float
    theta: float
    mu: float
    s: np.ndarray
    omega: np.ndarray
    ext: Optional[External] = None

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.r, self.rho, self.theta, self.mu], self.s, self.omega])


def to_shape(frame: ShapeFrame, state: CartesianState, chart: Optional[int] = None) -> ShapeState:
    """Cartesian state -> (r, rho, theta, mu, s, omega) in the given chart.

    ``chart=None`` keeps ``frame.chart``; pass ``"auto"`` to pick the best
    conditioned chart. Raises ChartError when the fixed homogeneous
    coordinate vanishes.
    """
    geo = cluster_geometry(frame.system, frame.cluster, state)
    met = frame.metric
    zc = met.to_complex(geo.z)
    zd = met.to_complex(geo.zdot)
    if chart == "auto":
        frame = frame.with_chart(frame.chart_of(zc))
    elif chart is not None:
        frame = frame.with_chart(chart)
    a = frame.chart
    r = met.norm(zc)
    if r == 0:
        raise ChartError("cluster has zero size (total collision)")
    if frame.k > 2 and frame.chart_ratio(zc) < 1e-8:
        raise ChartError(f"homogeneous coordinate {a} vanishes; switch chart")
    rho = met.herm(zc, zd).real / r
    theta = float(np.angle(zc[a]))
    others = [j for j in range(frame.k - 1) if j != a]
    s = zc[others] / zc[a]
    w = (zd[others] * zc[a] - zc[others] * zd[a]) / zc[a] ** 2
    kp = frame.cluster.cidx
    ext = External(geo.c, geo.cdot, state.q[kp].copy(), state.v[kp].copy())
    return ShapeState(frame, state.t, r, rho, theta, geo.mu, c2r(s), c2r(w), ext)


def from_shape(shape: ShapeState):
    """Inverse of :func:`to_shape` on the cluster: planar relative (z, zdot), each (k, 2)."""
    frame = shape.frame
    Mc = frame.metric.Mc
    Z = frame.embed(shape.s)
    W = frame.embed0(shape.omega)
    n = float(np.real(np.conj(Z) @ Mc @ Z))
    N = math.sqrt(n)
    p = complex(np.conj(Z) @ Mc @ W)
    G, Om = p.real, p.imag
    thd = shape.mu / shape.r**2 - Om / n
    e = np.exp(1j * shape.theta)
    zc = shape.r * e * Z / N
    zd = (shape.rho / shape.r + 1j * thd) * zc + shape.r * e * (W / N - Z * G / (N * n))
    return frame.planar(zc), frame.planar(zd)


def cartesian_from_shape(shape: ShapeState) -> CartesianState:
    """Rebuild the full Cartesian state (needs the external data)."""
    frame = shape.frame
    if shape.ext is None:
        raise ValueError("shape state carries no external data")
    z, zd = from_shape(shape)
    n = frame.system.n
    q = np.zeros((n, 2))
    v = np.zeros((n, 2))
    k, kp = frame.cluster.idx, frame.cluster.cidx
    q[k] = z + shape.ext.c
    v[k] = zd + shape.ext.cdot
    q[kp] = shape.ext.q
    v[kp] = shape.ext.v
    return CartesianState(shape.t, q, v)


def cross_partials(shape: ShapeState):
    """(dU_kk'/dr, dU_kk'/dtheta, grad_s U_kk') at fixed center of mass."""
    frame = shape.frame
    d = frame.dim
    if shape.ext is None or len(frame.cluster.complement) == 0:
        return 0.0, 0.0, np.zeros(d)
    Mc = frame.metric.Mc
    Z = frame.embed(shape.s)
    n = float(np.real(np.conj(Z) @ Mc @ Z))
    N = math.sqrt(n)
    e = np.exp(1j * shape.theta)
    zc = shape.r * e * Z / N
    qk = frame.planar(zc) + shape.ext.c
    m_all = frame.system.masses
    mk, mkp = m_all[frame.cluster.idx], m_all[frame.cluster.cidx]
    dq = shape.ext.q[None, :, :] - qk[:, None, :]
    rr = np.linalg.norm(dq, axis=-1)
    grad_k = ((np.outer(mk, mkp) / rr**3)[:, :, None] * dq).sum(axis=1)
    g = frame.metric.pullback(grad_k)
    dUr = float(np.real(np.conj(g) @ (zc / shape.r)))
    dUth = float(np.real(np.conj(g) @ (1j * zc)))
    if d == 0:
        return dUr, dUth, np.zeros(0)
    E = frame.basis()
    P = np.conj(Z) @ Mc @ E.T
    dN = P.real / N
    dz = shape.r * e * (E / N - np.outer(dN, Z) / n)  # (d, k-1)
    gs = np.real(np.conj(g) @ dz.T)
    return dUr, dUth, gs


def el_field(shape: ShapeState, include_curvature: bool = True) -> np.ndarray:
    """Time derivative of (r, rho, theta, mu, s, omega).

    The omega equation carries the term (mu/r^2) A^{-1} K omega, where K is
    the curl of the connection form B; it vanishes when mu = 0 or k = 2 and
    can be switched off to compare against the reduced equations.
    """
    frame = shape.frame
    r, rho, mu = shape.r, shape.rho, shape.mu
    sd = shape_derivatives(frame, shape.s, shape.omega)
    fd = sd.fd
    dUr, dUth, gs = cross_partials(shape)
    rdot = rho
    rhodot = r * fd.F - fd.V / r**2 + mu**2 / r**3 + dUr
    thdot = mu / r**2 - fd.Omega / fd.norm2
    mudot = dUth
    sdot = shape.omega
    if frame.dim:
        rhs = 0.5 * sd.gradF + sd.gradV / r**3 + gs / r**2 - mudot * fd.B / r**2 - sd.DAww
        if include_curvature:
            rhs = rhs + (mu / r**2) * (sd.K @ shape.omega)
        wdot = np.linalg.solve(fd.A, rhs) - 2 * rho * shape.omega / r
    else:
        wdot = np.zeros(0)
    return np.concatenate([[rdot, rhodot, thdot, mudot], sdot, wdot])


def energy_shape(shape: ShapeState) -> float:
    fd = fubini_data(shape.frame, shape.s, shape.omega)
    r = shape.r
    return shape.rho**2 / 2 + shape.mu**2 / (2 * r**2) + r**2 * fd.F / 2 - fd.V / r


def theta_dot_constant(frame: ShapeFrame, s) -> float:
    """sqrt(B A^{-1} B^T): the best C with |B omega| <= C ||omega||_FS at s."""
    if frame.dim == 0:
        return 0.0
    fd = fubini_data(frame, s)
    return float(math.sqrt(max(fd.B @ np.linalg.solve(fd.A, fd.B), 0.0)))


# --------------------------------------------------------------------------- #
# McGehee variables

@dataclass(frozen=True)
class BlowupState:
    variant: str  # parabolic | collision
    x: float  # u for parabolic, r for collision
    v: float
    s: np.ndarray
    w: np.ndarray
    tau: float = 0.0
    t: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.x, self.v], self.s, self.w])

    @classmethod
    def from_vector(cls, variant, y, tau=0.0, t=0.0) -> "BlowupState":
        y = np.asarray(y, dtype=float)
        d = (y.size - 2) // 2
        return cls(variant, float(y[0]), float(y[1]), y[2:2 + d].copy(), y[2 + d:].copy(), tau, t)


def _check_variant(variant):
    if variant not in ("parabolic", "collision"):
        raise ValueError(f"unknown blow-up variant {variant!r}")


def to_blowup(shape: ShapeState, variant: str, tau: float = 0.0) -> BlowupState:
    _check_variant(variant)
    r = shape.r
    x = r**-0.5 if variant == "parabolic" else r
    return BlowupState(variant, x, math.sqrt(r) * shape.rho, shape.s.copy(), r**1.5 * shape.omega, tau, shape.t)


def blowup_radius(b: BlowupState) -> float:
    return b.x**-2 if b.variant == "parabolic" else b.x


def from_blowup(b: BlowupState, frame: ShapeFrame, theta: float = 0.0, mu: float = 0.0,
                ext: Optional[External] = None) -> ShapeState:
    r = blowup_radius(b)
    return ShapeState(frame, b.t, r, b.v / math.sqrt(r), theta, mu, b.s.copy(), b.w / r**1.5, ext)


@dataclass(frozen=True)
class Forcing:
    """Sampled P(tau), Q(tau) and the curvature coefficient, held constant off-grid.

    ``kappa`` is mu for the parabolic variant and mu r^{-5/2} for the
    collision variant; it multiplies the curvature term in the w equation.
    """

    variant: str
    tau: np.ndarray
    P: np.ndarray
    Q: np.ndarray  # (N, dim)
    kappa: np.ndarray

    @classmethod
    def zero(cls, variant: str, dim: int) -> "Forcing":
        return cls(variant, np.array([0.0, 1.0]), np.zeros(2), np.zeros((2, dim)), np.zeros(2))

    def __call__(self, tau: float):
        P = float(np.interp(tau, self.tau, self.P))
        Q = np.array([np.interp(tau, self.tau, self.Q[:, j]) for j in range(self.Q.shape[1])])
        kap = float(np.interp(tau, self.tau, self.kappa))
        return P, Q, kap

    def sup(self):
        supQ = float(np.linalg.norm(self.Q, axis=1).max()) if self.Q.size else 0.0
        return float(np.abs(self.P).max()), supQ


def res_field(b: BlowupState, forcing: Forcing, frame: ShapeFrame, tau: Optional[float] = None) -> np.ndarray:
    """d/dtau of (u or r, v, s, w) for the blown-up equations."""
    if forcing.variant != b.variant:
        raise ValueError(f"forcing variant {forcing.variant!r} does not match state variant {b.variant!r}")
    tau = b.tau if tau is None else tau
    P, Q, kap = forcing(tau)
    return autonomous_field(b.variant, frame, b.vector()) + forcing_term(b.variant, frame, b.vector(), P, Q, kap)


def autonomous_field(variant: str, frame: ShapeFrame, y: np.ndarray) -> np.ndarray:
    """The blown-up field with all forcing set to zero."""
    d = frame.dim
    x, v = y[0], y[1]
    s, w = y[2:2 + d], y[2 + d:]
    sd = shape_derivatives(frame, s, w)
    fd = sd.fd
    xdot = -0.5 * x * v if variant == "parabolic" else x * v
    vdot = 0.5 * v**2 + fd.F - fd.V
    if d:
        wdot = -0.5 * v * w + np.linalg.solve(fd.A, sd.gradV + 0.5 * sd.gradF - sd.DAww)
    else:
        wdot = np.zeros(0)
    return np.concatenate([[xdot, vdot], w, wdot])


def forcing_term(variant: str, frame: ShapeFrame, y: np.ndarray, P: float, Q, kap: float) -> np.ndarray:
    """Non-autonomous part: x^2 P in v', x^2 Q plus the curvature term in w'.

    The curvature term is u kappa A^{-1} K w (parabolic) or r^2 kappa A^{-1} K w
    (collision).
    """
    d = frame.dim
    x = y[0]
    out = np.zeros_like(y)
    out[1] = x**2 * P
    if d:
        s, w = y[2:2 + d], y[2 + d:]
        out[2 + d:] = x**2 * np.asarray(Q)
        if kap != 0.0 and np.any(w):
            sd = shape_derivatives(frame, s, w)
            pref = x if variant == "parabolic" else x**2
            out[2 + d:] += pref * kap * np.linalg.solve(sd.fd.A, sd.K @ w)
    return out


def energy_blowup(b: BlowupState, mu: float, frame: ShapeFrame):
    """Return (h_k, bracket) with h_k = u^2 * bracket (parabolic variant)."""
    if b.variant != "parabolic":
        raise ValueError("energy_blowup is defined for the parabolic variant")
    fd = fubini_data(frame, b.s, b.w)
    u = b.x
    bracket = b.v**2 / 2 + u**2 * mu**2 / 2 + fd.F / 2 - fd.V
    return u**2 * bracket, bracket


# --------------------------------------------------------------------------- #
# trajectories

@dataclass
class ShapeSeries:
    """A trajectory in shape and blow-up coordinates, one row per sample."""

    frame: ShapeFrame
    variant: str
    t: np.ndarray
    tau: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    theta: np.ndarray  # continuous across chart switches
    mu: np.ndarray
    s: np.ndarray
    omega: np.ndarray
    charts: np.ndarray
    hk: np.ndarray
    F: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    kappa: np.ndarray
    theta_C: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.r**-0.5 if self.variant == "parabolic" else self.r

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.r) * self.rho

    @property
    def w(self) -> np.ndarray:
        return self.r[:, None] ** 1.5 * self.omega

    def forcing(self) -> Forcing:
        return Forcing(self.variant, self.tau, self.P, self.Q, self.kappa)

    def blowup_state(self, i: int) -> BlowupState:
        return BlowupState(self.variant, float(self.x[i]), float(self.v[i]), self.s[i].copy(),
                           self.w[i].copy(), float(self.tau[i]), float(self.t[i]))

    def header(self):
        d = self.frame.dim
        cols = ["tau", "t", "u" if self.variant == "parabolic" else "r", "v"]
        cols += [f"s{j // 2 + 1}_{'re' if j % 2 == 0 else 'im'}" for j in range(d)]
        cols += [f"w{j // 2 + 1}_{'re' if j % 2 == 0 else 'im'}" for j in range(d)]
        cols += ["hk", "F", "P"]
        cols += [f"Q{j // 2 + 1}_{'re' if j % 2 == 0 else 'im'}" for j in range(d)]
        cols += ["theta", "mu"]
        return cols

    def table(self) -> np.ndarray:
        return np.column_stack([self.tau, self.t, self.x, self.v, self.s, self.w, self.hk, self.F, self.P,
                                self.Q, self.theta, self.mu])


def forcing_values(shape: ShapeState, variant: str):
    """P, Q and kappa at one shape state."""
    frame = shape.frame
    r, mu = shape.r, shape.mu
    dUr, dUth, gs = cross_partials(shape)
    if variant == "parabolic":
        P = mu**2 + r**3 * dUr
        scale = r**2
        kap = mu
    else:
        P = mu**2 / r**3 + dUr
        scale = 1.0 / r
        kap = mu * r**-2.5
    if frame.dim:
        fd = fubini_data(frame, shape.s)
        Q = scale * np.linalg.solve(fd.A, gs - dUth * fd.B)
    else:
        Q = np.zeros(0)
    return P, Q, kap


def transform_trajectory(sys: MassSystem, cluster: Cluster, trajectory, variant: str,
                         chart: Optional[int] = None, switch_ratio: float = CHART_SWITCH_RATIO) -> ShapeSeries:
    """Shape/blow-up coordinates along a Cartesian trajectory.

    The chart is chosen from the last sample (or given); it is switched, with
    theta spliced continuously, whenever the fixed homogeneous coordinate
    drops below ``switch_ratio`` of the largest one. tau is the cumulative
    Simpson quadrature of r^{-3/2} dt with tau = 0 at the first sample.
    """
    _check_variant(variant)
    frame = ShapeFrame.build(sys, cluster)
    met = frame.metric
    N = len(trajectory.t)
    d = frame.dim
    zcs = []
    for i in range(N):
        geo = cluster_geometry(sys, cluster, trajectory.state(i))
        zcs.append(met.to_complex(geo.z))
    a = frame.chart_of(zcs[-1]) if chart is None else chart % (frame.k - 1)
    out = {k: np.zeros(N) for k in ("r", "rho", "theta", "mu", "hk", "F", "P", "kappa")}
    S = np.zeros((N, d))
    Om = np.zeros((N, d))
    Qs = np.zeros((N, d))
    charts = np.zeros(N, dtype=int)
    offset = 0.0
    prev_theta = None
    theta_C: dict = {}
    # walk backward from the reference chart so the last samples share it
    order = range(N - 1, -1, -1)
    for i in order:
        if d and frame.chart_ratio(zcs[i], a) < switch_ratio:
            new_a = frame.chart_of(zcs[i])
            if prev_theta is not None:
                # splice: theta in the new chart differs by arg(z_new / z_old)
                offset += float(np.angle(zcs[i][a] / zcs[i][new_a]))
            a = new_a
        fr = frame.with_chart(a)
        sh = to_shape(fr, trajectory.state(i))
        th = sh.theta + offset
        if prev_theta is not None:
            th = prev_theta + (th - prev_theta + np.pi) % (2 * np.pi) - np.pi
        prev_theta = th
        out["r"][i], out["rho"][i], out["theta"][i], out["mu"][i] = sh.r, sh.rho, th, sh.mu
        S[i], Om[i] = sh.s, sh.omega
        charts[i] = a
        fd = fubini_data(fr, sh.s, sh.omega)
        out["F"][i] = fd.F
        out["hk"][i] = energy_shape(sh)
        P, Q, kap = forcing_values(sh, variant)
        out["P"][i], out["kappa"][i] = P, kap
        Qs[i] = Q
        theta_C[a] = max(theta_C.get(a, 0.0), theta_dot_constant(fr, sh.s))
    t = np.asarray(trajectory.t, dtype=float)
    integrand = out["r"] ** -1.5
    if N >= 3:
        tau = cumulative_simpson(integrand, x=t, initial=0.0)
    else:
        tau = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    return ShapeSeries(frame.with_chart(charts[-1]), variant, t, tau, out["r"], out["rho"], out["theta"],
                       out["mu"], S, Om, charts, out["hk"], out["F"], out["P"], Qs, out["kappa"], theta_C)


def forcing_from_trajectory(sys: MassSystem, cluster: Cluster, trajectory, variant: str = "parabolic",
                            chart: Optional[int] = None) -> Forcing:
    """Sampled forcing (P, Q, kappa) of the blown-up cluster along a Cartesian trajectory."""
    fo = transform_trajectory(sys, cluster, trajectory, variant, chart).forcing()
    if not (np.all(np.isfinite(fo.P)) and np.all(np.isfinite(fo.Q))):
        raise ValueError("forcing is not finite along the trajectory")
    return fo
