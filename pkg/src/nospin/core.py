"""Mass systems, clusters, potentials and the derived scalar quantities.

Indices are 0-based throughout the Python API; the CLI converts from the
1-based labels used in scenario files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DRIFT_TOL = 1e-8


class CollisionError(ValueError):
    """Two bodies occupy the same position."""

    def __init__(self, i: int, j: int):
        super().__init__(f"bodies {i} and {j} coincide (r_ij = 0)")
        self.pair = (i, j)


@dataclass(frozen=True)
class MassSystem:
    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).copy()
        if m.ndim != 1 or m.size < 2:
            raise ValueError("a mass system needs at least two bodies")
        if np.any(~np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("every mass must be a positive finite number")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def n(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


@dataclass(frozen=True)
class Cluster:
    """An ordered subset ``k`` of body indices, size at least two."""

    indices: tuple
    n: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(idx) < 2:
            raise ValueError("a cluster needs at least two bodies")
        if len(set(idx)) != len(idx):
            raise ValueError("cluster indices must be distinct")
        if idx[0] < 0 or idx[-1] >= self.n:
            raise ValueError(f"cluster indices must lie in 0..{self.n - 1}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, sys: MassSystem, indices: Sequence[int]) -> "Cluster":
        return cls(tuple(indices), sys.n)

    @classmethod
    def everything(cls, sys: MassSystem) -> "Cluster":
        return cls(tuple(range(sys.n)), sys.n)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def complement(self) -> tuple:
        s = set(self.indices)
        return tuple(i for i in range(self.n) if i not in s)

    @property
    def idx(self) -> np.ndarray:
        return np.array(self.indices, dtype=int)

    @property
    def cidx(self) -> np.ndarray:
        return np.array(self.complement, dtype=int)


@dataclass(frozen=True)
class CartesianState:
    t: float
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1, 2)
        v = np.array(self.v, dtype=float).reshape(-1, 2)
        if q.shape != v.shape:
            raise ValueError("positions and velocities must have the same shape")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def centered(cls, sys: MassSystem, t, q, v, drift_tol: float = DRIFT_TOL):
        """Build a state in the center-of-mass frame.

        Small drift (below ``drift_tol`` relative to the configuration scale)
        is removed; anything larger is rejected.
        """
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        v = np.asarray(v, dtype=float).reshape(-1, 2)
        if q.shape[0] != sys.n:
            raise ValueError(f"expected {sys.n} bodies, got {q.shape[0]}")
        m = sys.masses
        cq = m @ q / m.sum()
        cv = m @ v / m.sum()
        qscale = max(1.0, float(np.abs(q).max()))
        vscale = max(1.0, float(np.abs(v).max()))
        if np.linalg.norm(cq) > drift_tol * qscale or np.linalg.norm(cv) > drift_tol * vscale:
            raise ValueError(
                f"center of mass drift too large: |c|={np.linalg.norm(cq):.3e}, "
                f"|cdot|={np.linalg.norm(cv):.3e}"
            )
        state = cls(t, q - cq, v - cv)
        check_no_collision(state.q)
        return state

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q.ravel(), self.v.ravel()])

    @classmethod
    def from_vector(cls, t, y) -> "CartesianState":
        y = np.asarray(y, dtype=float)
        h = y.size // 2
        return cls(t, y[:h].reshape(-1, 2), y[h:].reshape(-1, 2))


def check_no_collision(q: np.ndarray, pairs=None) -> None:
    q = np.asarray(q, dtype=float)
    n = len(q)
    d = np.linalg.norm(q[:, None, :] - q[None, :, :], axis=-1)
    d[np.diag_indices(n)] = np.inf
    if pairs is not None:
        mask = np.full((n, n), np.inf)
        for i, j in pairs:
            mask[i, j] = mask[j, i] = 1.0
        d = np.where(np.isinf(mask), np.inf, d)
    if np.any(d == 0):
        i, j = np.argwhere(d == 0)[0]
        raise CollisionError(int(min(i, j)), int(max(i, j)))


def _positions(state_or_q) -> np.ndarray:
    if isinstance(state_or_q, CartesianState):
        return state_or_q.q
    return np.asarray(state_or_q, dtype=float).reshape(-1, 2)


def pair_potential(m: np.ndarray, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Sum of m_i m_j / r_ij over i in ``a``, j in ``b`` (a, b disjoint)."""
    if len(a) == 0 or len(b) == 0:
        return 0.0
    d = q[a][:, None, :] - q[b][None, :, :]
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        i, j = np.argwhere(r == 0)[0]
        raise CollisionError(int(a[i]), int(b[j]))
    return float(np.sum(np.outer(m[a], m[b]) / r))


def _self_potential(m: np.ndarray, q: np.ndarray, a: np.ndarray) -> float:
    if len(a) < 2:
        return 0.0
    iu, ju = np.triu_indices(len(a), 1)
    d = q[a[iu]] - q[a[ju]]
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        p = int(np.argmax(r == 0))
        raise CollisionError(int(a[iu[p]]), int(a[ju[p]]))
    return float(np.sum(m[a[iu]] * m[a[ju]] / r))


def total_potential(sys: MassSystem, q) -> float:
    """U(q) = sum_{i<j} m_i m_j / r_ij."""
    q = _positions(q)
    return _self_potential(sys.masses, q, np.arange(sys.n))


def split_potentials(sys: MassSystem, cluster: Cluster, q):
    """Return ``(U_k, U_k', U_kk')`` with U_k + U_k' + U_kk' = U."""
    q = _positions(q)
    m = sys.masses
    k, kp = cluster.idx, cluster.cidx
    return (
        _self_potential(m, q, k),
        _self_potential(m, q, kp),
        pair_potential(m, q, k, kp),
    )


def potential_gradient(masses, q) -> np.ndarray:
    """Gradient of sum_{i<j} m_i m_j / r_ij with respect to each position.

    Returns an (n, 2) array; row i is nabla_i U, pointing toward the other
    bodies.
    """
    m = np.asarray(masses, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q[None, :, :] - q[:, None, :]  # d[i, j] = q_j - q_i
    r = np.linalg.norm(d, axis=-1)
    np.fill_diagonal(r, np.inf)
    if np.any(r == 0):
        i, j = np.argwhere(r == 0)[0]
        raise CollisionError(int(min(i, j)), int(max(i, j)))
    w = np.outer(m, m) / r**3
    return np.einsum("ij,ijk->ik", w, d)


def potential_hessian(masses, q) -> np.ndarray:
    """Hessian of the self potential, shape (2n, 2n), row-major (x, y) per body."""
    m = np.asarray(masses, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(m)
    H = np.zeros((2 * n, 2 * n))
    eye = np.eye(2)
    for i in range(n):
        for j in range(i + 1, n):
            d = q[i] - q[j]
            r = np.linalg.norm(d)
            if r == 0:
                raise CollisionError(i, j)
            blk = m[i] * m[j] * (3.0 * np.outer(d, d) / r**5 - eye / r**3)
            si, sj = slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2)
            H[si, si] += blk
            H[sj, sj] += blk
            H[si, sj] -= blk
            H[sj, si] -= blk
    return H


def cross_gradient(sys: MassSystem, cluster: Cluster, q) -> np.ndarray:
    """Gradient of U_kk' with respect to every body position, shape (n, 2)."""
    q = _positions(q)
    m = sys.masses
    k, kp = cluster.idx, cluster.cidx
    g = np.zeros_like(q)
    if len(kp) == 0:
        return g
    d = q[kp][None, :, :] - q[k][:, None, :]  # q_j - q_i, i in k, j in k'
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        i, j = np.argwhere(r == 0)[0]
        raise CollisionError(int(k[i]), int(kp[j]))
    w = np.outer(m[k], m[kp]) / r**3
    f = w[:, :, None] * d
    g[k] = f.sum(axis=1)
    g[kp] = -f.sum(axis=0)
    return g


@dataclass(frozen=True)
class ClusterGeometry:
    c: np.ndarray
    cdot: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    I: float
    K: float
    U: float
    h: float
    mu: float


def cluster_geometry(sys: MassSystem, cluster: Cluster, state: CartesianState) -> ClusterGeometry:
    """Center of mass, relative configuration, I_k, h_k and mu of a cluster.

    The state need not be in the center-of-mass frame; every returned
    quantity except ``c`` and ``cdot`` is translation invariant.
    """
    m = sys.masses[cluster.idx]
    q = state.q[cluster.idx]
    v = state.v[cluster.idx]
    mk = m.sum()
    c = m @ q / mk
    cdot = m @ v / mk
    z = q - c
    zdot = v - cdot
    Uk = _self_potential(sys.masses, state.q, cluster.idx)
    I = float(m @ np.sum(z**2, axis=1))
    K = 0.5 * float(m @ np.sum(zdot**2, axis=1))
    mu = float(m @ (z[:, 0] * zdot[:, 1] - z[:, 1] * zdot[:, 0]))
    return ClusterGeometry(c, cdot, z, zdot, I, K, Uk, K - Uk, mu)


@dataclass(frozen=True)
class MassMetric:
    """Mass metric on the relative coordinates z_1..z_{k-1}.

    ``Mc`` is the (k-1)x(k-1) real symmetric matrix of the Hermitian form on
    C^{k-1}; ``M`` is its real (2k-2)x(2k-2) version acting on interleaved
    (x, y) pairs.
    """

    masses: np.ndarray
    Mc: np.ndarray
    m0: float
    M: np.ndarray = field(repr=False)

    def herm(self, a: np.ndarray, b: np.ndarray) -> complex:
        """<<a, b>>_C = conj(a)^T Mc b."""
        return complex(np.conj(a) @ self.Mc @ b)

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.herm(a, a).real, 0.0)))

    def to_complex(self, z_full: np.ndarray) -> np.ndarray:
        """Planar relative positions of all k bodies -> complex z_1..z_{k-1}."""
        z_full = np.asarray(z_full, dtype=float)
        return z_full[:-1, 0] + 1j * z_full[:-1, 1]

    def to_planar(self, zc: np.ndarray) -> np.ndarray:
        """Complex z_1..z_{k-1} -> planar relative positions of all k bodies."""
        m = self.masses
        last = -(m[:-1] @ zc) / m[-1]
        full = np.append(zc, last)
        return np.stack([full.real, full.imag], axis=1)

    def pullback(self, grad_full: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. all k planar positions -> gradient w.r.t. complex z.

        Returned as complex numbers g_j = dU/dx_j + i dU/dy_j, so that the
        real directional derivative along dz is re(conj(g) . dz).
        """
        g = np.asarray(grad_full, dtype=float)
        gc = g[:, 0] + 1j * g[:, 1]
        m = self.masses
        return gc[:-1] - (m[:-1] / m[-1]) * gc[-1]


def mass_metric(sys: MassSystem, cluster: Cluster) -> MassMetric:
    """Kinetic metric in the coordinates z_i = q_i - c_k, i < k.

    Eliminating q_k = c - sum_{i<k} (m_i/m_k) z_i gives
    M_ij = m_i delta_ij + m_i m_j / m_k, with the center of mass decoupled.
    """
    m = sys.masses[cluster.idx]
    mi = m[:-1]
    Mc = np.diag(mi) + np.outer(mi, mi) / m[-1]
    M = np.kron(Mc, np.eye(2))
    return MassMetric(m.copy(), Mc, float(m.sum()), M)


def angular_momentum(metric: MassMetric, z, zdot) -> float:
    """mu = zdot^T M J z with J the blockwise +90 degree rotation.

    ``z`` and ``zdot`` are either complex vectors of length k-1 or real
    arrays of shape (k-1, 2).
    """
    z = np.asarray(z)
    zdot = np.asarray(zdot)
    if not np.iscomplexobj(z):
        z = z.reshape(-1, 2) @ np.array([1.0, 1j])
    if not np.iscomplexobj(zdot):
        zdot = zdot.reshape(-1, 2) @ np.array([1.0, 1j])
    return float(np.real(np.conj(zdot) @ metric.Mc @ (1j * z)))


def total_energy(sys: MassSystem, state: CartesianState) -> float:
    K = 0.5 * float(sys.masses @ np.sum(state.v**2, axis=1))
    return K - total_potential(sys, state.q)


def total_angular_momentum(sys: MassSystem, state: CartesianState) -> float:
    q, v = state.q, state.v
    return float(sys.masses @ (q[:, 0] * v[:, 1] - q[:, 1] * v[:, 0]))
