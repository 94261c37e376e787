"""Spin and arclength diagnostics, power-law rate fits, convergence to equilibria.

All asymptotic checks here are finite-horizon evidence: rate laws are fitted
on the last available decade, and convergence of the rotation angle is
measured by tail variation and a tail-Cauchy test on the shape arclength.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .blowup import ShapeFrame, ShapeSeries, cross_partials, to_shape
from .core import Cluster, cluster_geometry
from .dynamics import Trajectory, estimate_collision_time, gamma_residual

# --------------------------------------------------------------------------- #
# power-law fits


@dataclass
class RateFit:
    name: str
    slope: float
    intercept: float
    window: tuple
    rms: float
    target: float
    kind: str  # "upper": slope <= bound_hi; "lower": slope >= bound_lo; "two-sided"
    bound_lo: float
    bound_hi: float
    passed: bool
    reliable: bool
    n_points: int
    note: str = ""

    def as_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _bounds(target, tol, kind, lo=None, hi=None):
    if kind == "upper":
        return -math.inf, target + tol if hi is None else hi
    if kind == "lower":
        return target - tol if lo is None else lo, math.inf
    if kind == "two-sided":
        return (target - tol if lo is None else lo), (target + tol if hi is None else hi)
    raise ValueError(f"unknown bound kind {kind!r}")


def fit_power_law(x, y, name: str = "series", target: float = 0.0, tol: float = 0.35, kind: str = "two-sided",
                  toward: str = "large", decades: float = 1.0, floor: float = 0.0, rms_max: float = 0.5,
                  lo: Optional[float] = None, hi: Optional[float] = None, min_points: int = 5) -> RateFit:
    """Slope of log|y| against log x over the last ``decades`` toward the asymptotic end.

    ``toward`` is "large" for x -> infinity and "small" for x -> 0. Weighted
    least squares with weights proportional to the local spacing in log x,
    so clustered samples do not dominate. Samples with |y| <= ``floor`` are
    dropped first (roundoff floors). With less than 0.9 of the requested
    dynamic range the fit is marked unreliable, and does not pass.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > floor) & (y > 0)
    x, y = x[ok], y[ok]
    blo, bhi = _bounds(target, tol, kind, lo, hi)
    if x.size < 2:
        return RateFit(name, math.nan, math.nan, (math.nan, math.nan), math.nan, target, kind, blo, bhi, False,
                       False, int(x.size), "too few samples above the noise floor")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if toward == "large":
        win = x >= x[-1] * 10.0**-decades
    elif toward == "small":
        win = x <= x[0] * 10.0**decades
    else:
        raise ValueError("toward must be 'large' or 'small'")
    lx, ly = np.log(x[win]), np.log(y[win])
    span = (lx[-1] - lx[0]) / math.log(10.0) if lx.size else 0.0
    if lx.size < 2 or span <= 0:
        return RateFit(name, math.nan, math.nan, (float(x[win][0]), float(x[win][-1])), math.nan, target, kind,
                       blo, bhi, False, False, int(lx.size), "no dynamic range")
    wts = np.gradient(lx) if lx.size > 2 else np.ones_like(lx)
    wts = np.maximum(wts, 1e-300)
    slope, icpt = np.polyfit(lx, ly, 1, w=np.sqrt(wts))
    res = ly - (slope * lx + icpt)
    rms = float(math.sqrt(np.sum(wts * res**2) / np.sum(wts)))
    reliable = bool(span >= 0.9 * decades and lx.size >= min_points)
    passed = bool(reliable and blo <= slope <= bhi and rms <= rms_max)
    note = "" if reliable else f"insufficient dynamic range ({span:.2f} decades, {lx.size} points)"
    return RateFit(name, float(slope), float(icpt), (float(x[win][0]), float(x[win][-1])), rms, target, kind,
                   blo, bhi, passed, reliable, int(lx.size), note)


# Rate laws: (series, target exponent, kind, explicit bounds). Bounds that are
# not given default to target +- 0.35.
PARABOLIC_LAWS = {
    "h_k": (-5.0 / 3.0, "upper", None, -1.33),
    "dU_dr": (-2.0, "upper", None, None),
    "dU_dtheta": (-4.0 / 3.0, "upper", None, None),
    "grad_s_U": (-4.0 / 3.0, "upper", None, None),
    "gamma_k": (-7.0 / 3.0, "upper", None, -2.0),
}
COLLISION_LAWS = {
    "mu_vs_r": (2.5, "lower", 2.2, None),
    "dU_dtheta_vs_r": (1.0, "lower", None, None),
    "grad_s_U_vs_r": (1.0, "lower", None, None),
    "I_k": (4.0 / 3.0, "two-sided", 1.2, 1.5),
    "K_k": (-2.0 / 3.0, "two-sided", None, None),
}


def _cross_series(sys, cluster: Cluster, trajectory: Trajectory):
    """(|dU'/dr|, |dU'/dtheta|, |grad_s U'|) along the trajectory, charts chosen per sample."""
    frame = ShapeFrame.build(sys, cluster)
    N = len(trajectory)
    out = np.zeros((N, 3))
    for i in range(N):
        st = trajectory.state(i)
        sh = to_shape(frame, st, chart="auto")
        dr, dth, gs = cross_partials(sh)
        out[i] = abs(dr), abs(dth), float(np.linalg.norm(gs))
    return out


def rate_suite(trajectory: Trajectory, cluster: Cluster, mode: str, T: Optional[float] = None,
               mu_floor: float = 1e-10, h_floor: float = 1e-10, tol: float = 0.35) -> list:
    """Fit every applicable rate law on the last decade of a trajectory.

    ``parabolic``: series against t. ``collision``: mu, dU'/dtheta and
    grad_s U' against r; I_k and K_k against T - t with T extrapolated
    from I_k when not given. ``mu_floor`` and ``h_floor`` drop samples at
    the roundoff level of the integrator before the window is chosen.
    """
    sys = trajectory.system
    geos = [cluster_geometry(sys, cluster, st) for st in trajectory.states()]
    t = np.asarray(trajectory.t, dtype=float)
    has_outside = len(cluster.complement) > 0
    fits = []

    def add(name, x, y, laws, toward, floor=0.0):
        target, kind, lo, hi = laws[name]
        fits.append(fit_power_law(x, y, name, target, tol, kind, toward=toward, floor=floor, lo=lo, hi=hi))

    if mode == "parabolic":
        tt = t - t[0] + 1.0 if t[0] <= 0 else t
        # for the all-body cluster h_k is the conserved total energy; no decay law applies
        if has_outside:
            add("h_k", tt, [g.h for g in geos], PARABOLIC_LAWS, "large", floor=h_floor)
            cs = _cross_series(sys, cluster, trajectory)
            add("dU_dr", tt, cs[:, 0], PARABOLIC_LAWS, "large")
            if cluster.size > 2:
                add("dU_dtheta", tt, cs[:, 1], PARABOLIC_LAWS, "large")
                add("grad_s_U", tt, cs[:, 2], PARABOLIC_LAWS, "large")
            add("gamma_k", tt, gamma_residual(sys, cluster, trajectory).max(axis=1), PARABOLIC_LAWS, "large")
    elif mode == "collision":
        I = np.array([g.I for g in geos])
        K = np.array([g.K for g in geos])
        r = np.sqrt(I)
        mu = np.array([g.mu for g in geos])
        add("mu_vs_r", r, mu, COLLISION_LAWS, "small", floor=mu_floor)
        if has_outside and cluster.size > 2:
            cs = _cross_series(sys, cluster, trajectory)
            add("dU_dtheta_vs_r", r, cs[:, 1], COLLISION_LAWS, "small", floor=mu_floor)
            add("grad_s_U_vs_r", r, cs[:, 2], COLLISION_LAWS, "small", floor=mu_floor)
        if T is None:
            T = estimate_collision_time(t, I)
        if T is None:
            fits.append(RateFit("I_k", math.nan, math.nan, (math.nan, math.nan), math.nan, 4.0 / 3.0, "two-sided",
                                1.2, 1.5, False, False, 0, "no collision time could be extrapolated"))
        else:
            dt = T - t
            keep = dt > 0
            add("I_k", dt[keep], I[keep], COLLISION_LAWS, "small")
            add("K_k", dt[keep], K[keep], COLLISION_LAWS, "small")
    else:
        raise ValueError(f"mode must be 'parabolic' or 'collision', got {mode!r}")
    return fits


# --------------------------------------------------------------------------- #
# spin


class SpinError(ValueError):
    pass


@dataclass
class SpinReport:
    t: np.ndarray
    theta: np.ndarray
    arclength: np.ndarray  # partial sums of the Fubini-Study arclength, int sqrt(F) dt
    tail_variation: float
    tail_arclength: float
    prev_arclength: float
    winding: int
    tail_cauchy: bool
    theta_limit: Optional[float]
    window: tuple
    tol: float
    max_jump: float

    @property
    def converged(self) -> bool:
        return self.theta_limit is not None and self.tail_cauchy

    def as_dict(self) -> dict:
        return {
            "tail_variation": self.tail_variation,
            "tail_arclength": self.tail_arclength,
            "previous_window_arclength": self.prev_arclength,
            "total_arclength": float(self.arclength[-1]),
            "winding": self.winding,
            "tail_cauchy": self.tail_cauchy,
            "theta_limit": self.theta_limit,
            "window": list(self.window),
            "tolerance": self.tol,
            "max_jump": self.max_jump,
            "converged": self.converged,
            "evidence_only": True,
        }


def _cumtrapz(y, x):
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])


def spin_report(t, theta, F, clock=None, tol: float = 1e-3, max_jump: float = math.pi / 2) -> SpinReport:
    """Rotation angle and shape arclength diagnostics of a transformed trajectory.

    The tail is the last dyadic window of ``clock`` (its second half; ``t``
    when None): physical time for parabolic runs, the regularized time tau
    for collision runs, in which the approach to T is unbounded. The
    arclength is tail-Cauchy when its increment over the tail is below
    ``tol``; the preceding window's increment is reported alongside.
    Consecutive jumps
    of theta beyond ``max_jump`` mean the sampling cannot resolve the
    rotation; such series are refused.
    """
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    F = np.asarray(F, dtype=float)
    if t.size < 4:
        raise SpinError("need at least four samples")
    if np.any(np.diff(t) <= 0):
        raise SpinError("sample times must increase")
    jumps = np.abs(np.diff(theta))
    mj = float(jumps.max())
    if mj > max_jump:
        i = int(np.argmax(jumps))
        raise SpinError(f"theta jumps by {mj:.3g} between samples {i} and {i + 1}; not spliced or undersampled")
    L = _cumtrapz(np.sqrt(np.maximum(F, 0.0)), t)
    L = np.maximum.accumulate(L)
    s = t if clock is None else np.asarray(clock, dtype=float)
    s_mid = s[0] + 0.5 * (s[-1] - s[0])
    s_q = s[0] + 0.25 * (s[-1] - s[0])
    tail = s >= s_mid
    prev = (s >= s_q) & (s <= s_mid)
    tv = float(np.sum(np.abs(np.diff(theta[tail]))))
    Lt = float(L[-1] - L[tail][0])
    Lp = float(L[prev][-1] - L[prev][0]) if prev.sum() > 1 else math.inf
    cauchy = bool(Lt < tol)
    winding = int(math.floor(abs(theta[-1] - theta[0]) / (2 * math.pi)))
    lim = float(theta[-1]) if tv < tol else None
    return SpinReport(t, theta, L, tv, Lt, Lp, winding, cauchy, lim, (float(s[tail][0]), float(s[-1])), tol, mj)


def spin_report_series(series: ShapeSeries, tol: float = 1e-3) -> SpinReport:
    clock = series.t if series.variant == "parabolic" else series.tau
    return spin_report(series.t, series.theta, series.F, clock, tol)


def theta_rate_bound(series: ShapeSeries) -> float:
    """Largest ratio |theta'| / (|mu|/r^2 + C sqrt(F)) along a transformed trajectory.

    Uses the analytic angular velocity from the shape coordinates
    and the per-chart constant C; values <= 1 mean
    the pointwise bound holds.
    """
    from .blowup import fubini_data

    worst = 0.0
    for i in range(len(series.t)):
        fr = series.frame.with_chart(int(series.charts[i]))
        fd = fubini_data(fr, series.s[i], series.omega[i])
        thd = series.mu[i] / series.r[i] ** 2 - (fd.Omega / fd.norm2 if fr.dim else 0.0)
        C = series.theta_C.get(int(series.charts[i]), 0.0)
        bound = abs(series.mu[i]) / series.r[i] ** 2 + C * math.sqrt(max(fd.F, 0.0))
        if bound > 0:
            worst = max(worst, abs(thd) / bound)
        elif abs(thd) > 0:
            return math.inf
    return worst


# --------------------------------------------------------------------------- #
# convergence to a blow-up equilibrium


@dataclass
class EquilibriumConvergence:
    tau: np.ndarray
    dist_x: np.ndarray
    dist_v: np.ndarray
    dist_s: np.ndarray
    dist_w: np.ndarray
    v_final: float
    v0: Optional[float]
    bracket: np.ndarray
    rate: Optional[float]
    mirrored: bool = False
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "v_final": self.v_final,
            "v0": self.v0,
            "v_error": None if self.v0 is None else abs(self.v_final - self.v0),
            "final_distance": {
                "x": float(self.dist_x[-1]),
                "v": float(self.dist_v[-1]),
                "s": float(self.dist_s[-1]),
                "w": float(self.dist_w[-1]),
            },
            "bracket_final": float(self.bracket[-1]),
            "rate": self.rate,
            "mirrored": self.mirrored,
            "notes": list(self.notes),
        }


def _shape_target(eq, series: ShapeSeries):
    """s0 expressed in each sample's chart, choosing the orientation closest at the end."""
    from .centconfig import CentralConfig, cc_chart

    charts = np.unique(series.charts)
    best = None
    for mirror in (False, True):
        q = eq.q * np.array([1.0, -1.0]) if mirror else eq.q
        targets = {int(a): cc_chart(CentralConfig(eq.masses, q, 0.0, True), int(a))[1] for a in charts}
        d_end = np.linalg.norm(series.s[-1] - targets[int(series.charts[-1])])
        if best is None or d_end < best[0]:
            best = (d_end, targets, mirror)
    return best[1], best[2]


def equilibrium_convergence(series: ShapeSeries, eq=None, tail: float = 0.5) -> EquilibriumConvergence:
    """Distance of the blow-up orbit (x, v, s, w)(tau) to the equilibrium (0, v0, s0, 0).

    Without equilibrium data only x, w and the final v are reported. The
    energy bracket is u^{-2} h_k for the parabolic variant and r h_k for the
    collision variant; it tends to zero on the equilibrium manifold. The
    exponential rate is fitted on the last ``tail`` fraction of tau when the
    equilibrium is hyperbolic.
    """
    x, v, w = series.x, series.v, series.w
    N = len(series.t)
    notes = []
    if eq is not None and eq.mode != series.variant:
        raise ValueError(f"equilibrium mode {eq.mode} does not match series variant {series.variant}")
    dist_x = np.abs(x)
    dist_w = np.linalg.norm(w, axis=1) if w.size else np.zeros(N)
    v0 = None
    mirrored = False
    if eq is not None:
        v0 = float(eq.v0)
        dist_v = np.abs(v - v0)
        if series.frame.dim:
            targets, mirrored = _shape_target(eq, series)
            dist_s = np.array([np.linalg.norm(series.s[i] - targets[int(series.charts[i])]) for i in range(N)])
        else:
            dist_s = np.zeros(N)
    else:
        # target v = +-sqrt(2 V_k) at the final shape, exact when the shape space is a point
        from .blowup import fubini_data

        fr = series.frame.with_chart(int(series.charts[-1]))
        Vend = fubini_data(fr, series.s[-1]).V
        v0 = (1.0 if series.variant == "parabolic" else -1.0) * math.sqrt(2.0 * Vend)
        dist_v = np.abs(v - v0)
        dist_s = np.zeros(N)
        if series.frame.dim:
            notes.append("no equilibrium given; v target uses V_k at the final shape")
    if series.variant == "parabolic":
        bracket = series.hk / x**2
    else:
        bracket = series.r * series.hk
    rate = None
    if eq is not None and not eq.degenerate:
        # x = r on collision orbits tends to zero exponentially in tau; use the combined distance
        total = np.sqrt(dist_v**2 + dist_s**2 + dist_w**2)
        sel = series.tau >= series.tau[0] + (1 - tail) * (series.tau[-1] - series.tau[0])
        sel &= total > 1e-13
        if sel.sum() >= 5 and total[sel][0] >= 100.0 * total[sel][-1]:
            rate = float(-np.polyfit(series.tau[sel], np.log(total[sel]), 1)[0])
        else:
            notes.append("distance does not decay by two decades above roundoff in the tail; no rate fitted")
    return EquilibriumConvergence(series.tau, dist_x, dist_v, dist_s, dist_w, float(v[-1]), v0, bracket, rate,
                                  mirrored, notes)
