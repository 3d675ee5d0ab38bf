"""Horizontally invariant subsolutions for the unstable two-phase interface.

With the closure ``m2 = -alpha (1 - rho^2)`` the conservation law for the
density becomes a Burgers-type equation

    d_t rho + d_2 (-alpha (1 - rho^2)) = 0,   rho(x2, 0) = sign(x2),

on ``(-1, 1)`` with no flux through ``x2 = +-1``.  Its entropy solution is a
rarefaction fan opening at speed ``2 alpha`` in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import HullParams, in_closed_hull

ZONE_TOL = 1e-6
CONTINUITY_JUMP_TOL = 0.25
RESIDUAL_CONSTANT = 4.0


@dataclass
class SubsolutionProfile:
    """Snapshots of ``(rho_bar, m2_bar)`` on cell centres of ``(-1, 1)``.

    ``rho`` and ``m2`` have shape ``(len(t), nx)``; ``m2_faces`` holds the
    numerical flux through the ``nx + 1`` cell faces, whose end values are
    the boundary fluxes.
    """

    alpha: float
    x2: np.ndarray
    t: np.ndarray
    rho: np.ndarray
    m2: np.ndarray
    m2_faces: np.ndarray
    kind: str = "entropy"

    @property
    def nx(self):
        return len(self.x2)

    @property
    def dx(self):
        return 2.0 / self.nx

    @property
    def T(self):
        return float(self.t[-1])

    def sample(self, x2, t):
        """Linear interpolation of ``(rho_bar, m2_bar)`` at arbitrary points."""
        x2 = np.clip(np.asarray(x2, dtype=float), self.x2[0], self.x2[-1])
        t = np.clip(np.asarray(t, dtype=float), self.t[0], self.t[-1])
        pts = np.stack(np.broadcast_arrays(t, x2), axis=-1)
        if len(self.t) == 1:
            r = np.interp(x2, self.x2, self.rho[0])
            return r, m2_closure(self.alpha, r)
        rho = RegularGridInterpolator((self.t, self.x2), self.rho)(pts)
        return rho, m2_closure(self.alpha, rho)


@dataclass
class MixingZone:
    t: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    bound_ok: bool = True
    violations: list = field(default_factory=list)


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")


def closed_form_rho(alpha, x2, t):
    """Rarefaction profile: -1, ``x2 / (2 alpha t)``, +1 for ``0 < t < 1/(2 alpha)``."""
    _check_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t >= 1.0 / (2 * alpha)):
        raise ValueError("closed form is valid only for 0 < t < 1/(2 alpha)")
    x2 = np.asarray(x2, dtype=float)
    out = np.clip(x2 / (2 * alpha * t), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def m2_closure(alpha, rho):
    return -alpha * (1.0 - np.asarray(rho) ** 2)


def _godunov(alpha, left, right):
    # f(r) = alpha (r^2 - 1) is convex with its minimum at r = 0.
    f = lambda r: alpha * (r * r - 1.0)
    return np.maximum(f(np.maximum(left, 0.0)), f(np.minimum(right, 0.0)))


def _faces(alpha, rho):
    F = np.zeros(rho.shape[:-1] + (rho.shape[-1] + 1,))
    F[..., 1:-1] = _godunov(alpha, rho[..., :-1], rho[..., 1:])
    return F


def entropy_solve(alpha, nx, T, cfl=0.95, nsnap=None, times=None) -> SubsolutionProfile:
    """Godunov finite-volume solution with zero-flux walls.

    Snapshots are stored at ``times`` (default ``nsnap`` uniform times,
    ``nsnap`` defaulting to ``nx // 4 + 1``); the time step is shortened
    to land exactly on each of them.
    """
    _check_alpha(alpha)
    if nx < 8:
        raise ValueError("nx must be at least 8")
    if not 0 < cfl < 1:
        raise ValueError("cfl must lie in (0, 1)")
    if T <= 0:
        raise ValueError("T must be positive")
    dx = 2.0 / nx
    x2 = -1.0 + (np.arange(nx) + 0.5) * dx
    if times is None:
        times = np.linspace(0.0, T, nsnap or nx // 4 + 1)
    times = np.asarray(times, dtype=float)
    rho = np.sign(x2)
    dt_max = cfl * dx / (2.0 * alpha)
    t = 0.0
    snaps = []
    for target in times:
        while t < target - 1e-15:
            dt = min(dt_max, target - t)
            F = _faces(alpha, rho)
            rho = rho - dt / dx * (F[1:] - F[:-1])
            t += dt
        snaps.append(rho.copy())
    R = np.array(snaps)
    return SubsolutionProfile(alpha, x2, times, R, m2_closure(alpha, R), _faces(alpha, R))


def closed_form_profile(alpha, nx, times) -> SubsolutionProfile:
    """Closed-form profile sampled at cell centres (t = 0 gives the initial datum)."""
    _check_alpha(alpha)
    dx = 2.0 / nx
    x2 = -1.0 + (np.arange(nx) + 0.5) * dx
    times = np.asarray(times, dtype=float)
    rows = [np.sign(x2) if tt == 0 else closed_form_rho(alpha, x2, tt) for tt in times]
    R = np.array(rows, dtype=float)
    faces = _faces(alpha, R)
    return SubsolutionProfile(alpha, x2, times, R, m2_closure(alpha, R), faces, kind="closed_form")


def total_mass(p: SubsolutionProfile):
    return p.rho.sum(axis=1) * p.dx


def l1_error(p: SubsolutionProfile, t_index=-1):
    """L^1 distance to the closed form (cell averages of the exact profile)."""
    t = p.t[t_index]
    edges = -1.0 + np.arange(p.nx + 1) * p.dx
    # exact cell averages of clip(x / (2 alpha t), -1, 1) via its antiderivative
    a = 2 * p.alpha * t

    def prim(x):
        inside = np.abs(x) < a
        # continuous antiderivative of clip(x / a, -1, 1)
        return np.where(inside, x * x / (2 * a), np.abs(x) - a / 2)

    avg = (prim(edges[1:]) - prim(edges[:-1])) / p.dx
    return float(np.sum(np.abs(p.rho[t_index] - avg)) * p.dx)


def _test_functions(ntest, T):
    """Smooth tests in (-1, 1) x [0, T): spatial bumps times sine modes,
    with a temporal cutoff vanishing near T but not at t = 0."""
    out = []
    for k in range(ntest):
        kx = 1 + k % 3
        kt = k // 3
        c = -0.5 + (k % 5) * 0.25

        def phi(x, t, kx=kx, kt=kt, c=c):
            r2 = np.clip(1.0 - ((x - c) / 0.45) ** 2, 0.0, None)
            bx = r2**4 * np.cos(kx * np.pi * x)
            s = t / T
            bt = np.clip(1.0 - s * s, 0.0, None) ** 3 * np.cos(kt * np.pi * s)
            return bx * bt

        out.append(phi)
    return out


def _grad_fd(phi, x, t, h=1e-6):
    return (phi(x, t + h) - phi(x, t - h)) / (2 * h), (phi(x + h, t) - phi(x - h, t)) / (2 * h)


def admissibility_report(p: SubsolutionProfile, ntest=12) -> dict:
    """Checks of the subsolution conditions on a stored profile.

    (a) weak form of ``d_t rho + d_2 m2 = 0`` with the initial datum, each
        residual compared against ``RESIDUAL_CONSTANT * dx``;
    (b) zero flux through ``x2 = +-1``;
    (c) ``-(1 - rho^2) <= m2 <= 0`` at every node;
    (d) largest jump between neighbouring zone nodes (space and time) over
        ``t >= T / 10``, where the fan already spans many cells;
    (e) strict hull interior of the lifted states inside the zone, and the
        nodes where it fails.
    """
    T = p.T
    X, Tt = np.meshgrid(p.x2, p.t)
    wt = np.full(len(p.t), 0.0)
    if len(p.t) > 1:
        dt = np.diff(p.t)
        wt[:-1] += dt / 2
        wt[1:] += dt / 2
    rho0 = np.sign(p.x2)
    residuals = []
    for phi in _test_functions(ntest, T):
        pt, px = _grad_fd(phi, X, Tt)
        integrand = p.rho * pt + p.m2 * px
        r = np.sum(integrand * wt[:, None]) * p.dx + np.sum(rho0 * phi(p.x2, 0.0)) * p.dx
        residuals.append(abs(float(r)))
    res_tol = RESIDUAL_CONSTANT * p.dx
    boundary = [float(p.m2_faces[:, 0].max(initial=0.0)), float(np.abs(p.m2_faces[:, -1]).max(initial=0.0))]
    lo = p.m2 < -(1.0 - p.rho**2)
    hi = p.m2 > 0
    sub4 = [(int(i), int(k)) for i, k in zip(*np.nonzero(lo | hi))]
    zone = np.abs(p.rho) < 1 - ZONE_TOL
    jump = 0.0
    if len(p.t) > 1:
        late = p.t >= p.T / 10
        zz = zone[late]
        r = p.rho[late]
        jx = np.abs(np.diff(r, axis=1))[zz[:, 1:] & zz[:, :-1]]
        jt = np.abs(np.diff(r, axis=0))[zz[1:] & zz[:-1]]
        jump = float(max(jx.max(initial=0.0), jt.max(initial=0.0)))
    lifted = lift_profile_states(p.rho, p.m2)
    strict = in_closed_hull(lifted, HullParams(), tol=0.0)
    margin = _lifted_margin(p.rho, p.m2)
    non_strict = zone & ~(margin > 0)
    nonstrict_nodes = [(int(i), int(k)) for i, k in zip(*np.nonzero(non_strict))]
    return {
        "alpha": p.alpha,
        "weak_residuals": residuals,
        "weak_threshold": res_tol,
        "weak_ok": bool(max(residuals, default=0.0) <= res_tol),
        "boundary_flux": boundary,
        "boundary_ok": bool(max(abs(b) for b in boundary) == 0.0),
        "sub4_violations": sub4,
        "sub4_ok": not sub4,
        "max_zone_jump": jump,
        "continuity_ok": bool(jump <= CONTINUITY_JUMP_TOL),
        "hull_ok": bool(np.all(strict)),
        "strict_violations": nonstrict_nodes,
        "strict_ok": not nonstrict_nodes,
    }


def lift_profile_states(rho, m2):
    """Lifted states ``(rho, (0, rho), (0, m2 + 1/2))`` of a profile (``v = 0``)."""
    rho = np.asarray(rho, dtype=float)
    z = np.zeros(rho.shape + (5,))
    z[..., 0] = rho
    z[..., 2] = rho
    z[..., 4] = m2 + 0.5
    return z


def _lifted_margin(rho, m2):
    # slack of |m - rho u / 2| <= (1 - rho^2)/2 for the lifted state
    return 0.5 * (1 - rho**2) - np.abs(m2 + 0.5 * (1 - rho**2))


def mixing_envelope(p: SubsolutionProfile, tol=ZONE_TOL) -> MixingZone:
    """Outer faces of the cells where ``|rho| < 1 - tol`` at each time.

    The bound check compares against ``2 t + dx`` on both sides.
    """
    zone = np.abs(p.rho) < 1 - tol
    lower = np.full(len(p.t), np.nan)
    upper = np.full(len(p.t), np.nan)
    violations = []
    for i, row in enumerate(zone):
        idx = np.nonzero(row)[0]
        if idx.size == 0:
            continue
        lower[i] = p.x2[idx[0]] - p.dx / 2
        upper[i] = p.x2[idx[-1]] + p.dx / 2
        bound = 2 * p.t[i] + p.dx
        if upper[i] > bound or -lower[i] > bound:
            violations.append(int(i))
    return MixingZone(p.t.copy(), lower, upper, not violations, violations)


def gamma_compatibility(p: SubsolutionProfile, gamma) -> bool:
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    z = lift_profile_states(p.rho, p.m2)
    return bool(np.all(in_closed_hull(z, HullParams(gamma=gamma))))
