"""Space-time fields and exact solutions of the linear conservation system.

The linear part of the relaxed system is

    d_t rho + div m = 0,   div(u - (0, rho)) = 0,   curl(u + (0, rho)) = 0.

Fields live on a space-time grid ordered ``(t, x2, x1)``; coordinates and
spacings are listed in ``(x1, x2, t)`` order.  Torus grids are periodic in
all three directions (nodes at ``lower + i*L/n``); box grids use cell
centres on ``(-1, 1)^2 x (0, T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import STATE_DIM, State, as_states, wave_cone_contains

POINTS_PER_WAVELENGTH = 8
RESIDUAL_TOL_TORUS = 1e-10
# Lower bound for the normalised L^2 mass of a localized wave,
# int |w|^2 / (|zbar|^2 |ball|), measured at j * radius >= 16 and frozen.
WAVE_MASS_CONSTANT = 0.022


class ResolutionError(ValueError):
    """Requested frequency cannot be represented on the grid."""


@dataclass(frozen=True)
class Grid:
    kind: str
    nx: int
    ny: int
    nt: int
    lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if min(self.nx, self.ny, self.nt) < 4:
            raise ValueError("grid sizes must be at least 4")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise ValueError("upper corner must exceed lower corner")

    @classmethod
    def torus(cls, nx, ny, nt, lengths=(1.0, 1.0, 1.0)):
        return cls("torus", nx, ny, nt, (0.0, 0.0, 0.0), tuple(float(v) for v in lengths))

    @classmethod
    def box(cls, nx, ny, nt, T=1.0):
        return cls("box", nx, ny, nt, (-1.0, -1.0, 0.0), (1.0, 1.0, float(T)))

    @property
    def shape(self):
        return (self.nt, self.ny, self.nx)

    @property
    def counts(self):
        return (self.nx, self.ny, self.nt)

    @property
    def lengths(self):
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def cell_volume(self):
        dx, dy, dt = self.spacing
        return dx * dy * dt

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def periodic(self):
        return self.kind == "torus"

    def axes(self):
        off = 0.0 if self.periodic else 0.5
        return tuple(a + (np.arange(n) + off) * h for a, n, h in zip(self.lower, self.counts, self.spacing))

    def mesh(self):
        """Coordinate arrays ``(X1, X2, T)``, each of shape ``(nt, ny, nx)``."""
        x1, x2, t = self.axes()
        T, X2, X1 = np.meshgrid(t, x2, x1, indexing="ij")
        return X1, X2, T

    def displacement(self, pts, center):
        """``pts - center`` in (x1, x2, t) order, minimum image on the torus."""
        d = np.asarray(pts, dtype=float) - np.asarray(center, dtype=float)
        if self.periodic:
            L = np.asarray(self.lengths)
            d = d - L * np.round(d / L)
        return d


@dataclass
class Field:
    """States on a grid: ``z`` has shape ``(nt, ny, nx, 5)``.

    ``mask`` flags the perturbable region (the mixing zone on box domains);
    ``max_frequency`` records the largest angular frequency of the waves
    the field contains and feeds the residual thresholds.
    """

    grid: Grid
    z: np.ndarray
    mask: np.ndarray | None = None
    max_frequency: float = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        if self.z.shape != self.grid.shape + (STATE_DIM,):
            raise ValueError(f"field shape {self.z.shape} does not match grid {self.grid.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.grid.shape:
                raise ValueError("mask shape does not match grid")

    @classmethod
    def zeros(cls, grid, mask=None):
        return cls(grid, np.zeros(grid.shape + (STATE_DIM,)), mask)

    @property
    def rho(self):
        return self.z[..., 0]

    @property
    def u(self):
        return self.z[..., 1:3]

    @property
    def m(self):
        return self.z[..., 3:5]

    def copy(self):
        return Field(self.grid, self.z.copy(), None if self.mask is None else self.mask.copy(), self.max_frequency)


@dataclass
class PotentialPair:
    """Potentials generating a solution: ``rho = lap(phi)/2`` and ``m`` from ``psi``."""

    grid: Grid
    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class WaveVector:
    xi_t: float
    xi_x: tuple[float, float]

    def as_array(self):
        """Space-time vector in (x1, x2, t) order."""
        return np.array([self.xi_x[0], self.xi_x[1], self.xi_t])


# Array axis holding each coordinate direction (arrays are (t, x2, x1)).
_AXIS = {0: 2, 1: 1, 2: 0}


def _wavenumbers(grid):
    ks = []
    for n, L in zip(grid.counts, grid.lengths):
        k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
        if n % 2 == 0:
            k[n // 2] = 0.0
        ks.append(k)
    k1, k2, kt = ks
    return k1[None, None, :], k2[None, :, None], kt[:, None, None]


class Differentiator:
    """Partial derivatives on a grid: spectral on the torus, second-order
    central differences with one-sided closures on the box.

    On the torus every derivative is a Fourier multiplier built from the
    same first-order symbols (Nyquist mode dropped), so mixed partials
    commute exactly.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        if grid.periodic:
            self._k = _wavenumbers(grid)

    def __call__(self, f, orders):
        """Derivative of ``f`` of order ``orders = (a1, a2, at)``."""
        f = np.asarray(f, dtype=float)
        if self.grid.periodic:
            sym = 1.0
            for k, a in zip(self._k, orders):
                if a:
                    sym = sym * (1j * k) ** a
            if np.isscalar(sym):
                return f.copy()
            return np.fft.ifftn(np.fft.fftn(f, axes=(0, 1, 2)) * sym, axes=(0, 1, 2)).real
        out = f
        for d, a in enumerate(orders):
            for _ in range(a):
                out = np.gradient(out, self.grid.spacing[d], axis=_AXIS[d], edge_order=2)
        return out


def potentials_to_field(p: PotentialPair) -> Field:
    """Evaluate the state generated by the potentials ``(phi, psi)``::

        rho = lap(phi)/2,  u = (d12 phi, (d22 phi - d11 phi)/2),
        m = -d_t grad(phi)/2 + grad_perp(psi),   grad_perp = (-d2, d1).
    """
    phi = np.asarray(p.phi, dtype=float)
    psi = np.asarray(p.psi, dtype=float)
    if phi.shape != p.grid.shape or psi.shape != p.grid.shape:
        raise ValueError("potential grids do not match")
    D = Differentiator(p.grid)
    p11 = D(phi, (2, 0, 0))
    p22 = D(phi, (0, 2, 0))
    p12 = D(phi, (1, 1, 0))
    pt1 = D(phi, (1, 0, 1))
    pt2 = D(phi, (0, 1, 1))
    s1 = D(psi, (1, 0, 0))
    s2 = D(psi, (0, 1, 0))
    z = np.stack([0.5 * (p11 + p22), p12, 0.5 * (p22 - p11), -0.5 * pt1 - s2, -0.5 * pt2 + s1], axis=-1)
    return Field(p.grid, z)


def linear_residual(field: Field) -> dict[str, float]:
    """Relative max-norm residuals of the three linear equations.

    Each residual is divided by the largest individual derivative term of
    its equation, so a value near machine precision means exact.
    """
    D = Differentiator(field.grid)
    rho, u1, u2, m1, m2 = (field.z[..., i] for i in range(5))
    terms = {
        "mass": [D(rho, (0, 0, 1)), D(m1, (1, 0, 0)), D(m2, (0, 1, 0))],
        "div": [D(u1, (1, 0, 0)), D(u2 - rho, (0, 1, 0))],
        "curl": [D(u2 + rho, (1, 0, 0)), -D(u1, (0, 1, 0))],
    }
    out = {}
    for name, ts in terms.items():
        scale = max(float(np.max(np.abs(t))) for t in ts)
        res = float(np.max(np.abs(sum(ts))))
        out[name] = res / scale if scale > 0 else res
    return out


def plane_wave_vector(zbar, tol: float = 1e-9) -> WaveVector:
    """Wave vector ``xi`` with ``zbar * h(xi . y)`` solving the linear system.

    The constraints are ``(u - (0,rho)) . xi_x = 0``,
    ``(u + (0,rho)) . perp(xi_x) = 0`` and ``rho xi_t + m . xi_x = 0``;
    the first two are compatible exactly on the wave cone.  ``|xi_x| = 1``.
    """
    z = as_states(zbar)
    scale = max(1.0, float(np.max(np.abs(z))))
    if not wave_cone_contains(z, tol * scale**2):
        raise ValueError("direction is not in the wave cone")
    rho, u, m = z[0], z[1:3], z[3:5]
    plus = u + np.array([0.0, rho])
    minus = u - np.array([0.0, rho])
    if np.linalg.norm(plus) > tol * scale:
        xi = plus / np.linalg.norm(plus)
    elif np.linalg.norm(minus) > tol * scale:
        xi = np.array([minus[1], -minus[0]]) / np.linalg.norm(minus)
        if xi[0] < 0 or (xi[0] == 0 and xi[1] < 0):
            xi = -xi
    else:
        nm = np.linalg.norm(m)
        if nm == 0:
            raise ValueError("zero direction has no wave vector")
        return WaveVector(0.0, (float(-m[1] / nm), float(m[0] / nm)))
    return WaveVector(float(-(m @ xi) / rho), (float(xi[0]), float(xi[1])))


def max_resolved_frequency(grid: Grid, xi: WaveVector) -> float:
    """Largest j with at least POINTS_PER_WAVELENGTH nodes per period on every axis."""
    step = max(abs(x) * h for x, h in zip(xi.as_array(), grid.spacing))
    return math.inf if step == 0 else 2 * np.pi / (POINTS_PER_WAVELENGTH * step)


def bump(d, radius):
    """``(1 - r^2)^4`` with its gradient and Hessian, ``r = |d| / radius``.

    ``d`` has shape (N, 3); returns arrays of shape (N,), (N, 3), (N, 3, 3).
    """
    R2 = radius * radius
    q = np.clip(1.0 - np.sum(d * d, axis=1) / R2, 0.0, None)
    chi = q**4
    grad = (-8.0 * q**3 / R2)[:, None] * d
    hess = (48.0 * q**2 / (R2 * R2))[:, None, None] * d[:, :, None] * d[:, None, :]
    hess -= (8.0 * q**3 / R2)[:, None, None] * np.eye(3)[None]
    return chi, grad, hess


def wave_states(zbar, xi: WaveVector, d, radius, j, phase=0.0, amplitude=1.0):
    """States of the localized wave at displacements ``d`` (N, 3) from the centre.

    Built from the potentials ``phi = chi H(theta)``, ``psi = chi P(theta)``
    with ``theta = xi . d``, ``H = -2 rho A sin(j theta + phase) / j^2`` and
    ``P = -(m . perp xi) A cos(j theta + phase) / j`` (``|xi_x| = 1``).  All
    derivatives are taken analytically, so the output vanishes exactly
    outside the ball and solves the linear system pointwise.
    """
    z = as_states(zbar)
    rho, m = z[0], z[3:5]
    k = xi.as_array()
    perp = np.array([-k[1], k[0]])
    cH = -2.0 * rho * amplitude
    cP = -float(m @ perp) * amplitude
    chi, g, Hs = bump(d, radius)
    arg = j * (d @ k) + phase
    s, c = np.sin(arg), np.cos(arg)
    H, H1, H2 = cH * s / j**2, cH * c / j, -cH * s
    P, P1 = cP * c / j, -cP * s

    def phi2(a, b):
        return Hs[:, a, b] * H + (g[:, a] * k[b] + g[:, b] * k[a]) * H1 + chi * k[a] * k[b] * H2

    def psi1(a):
        return g[:, a] * P + chi * k[a] * P1

    p11, p22, p12 = phi2(0, 0), phi2(1, 1), phi2(0, 1)
    out = np.stack(
        [
            0.5 * (p11 + p22),
            p12,
            0.5 * (p22 - p11),
            -0.5 * phi2(2, 0) - psi1(1),
            -0.5 * phi2(2, 1) + psi1(0),
        ],
        axis=1,
    )
    out[chi == 0.0] = 0.0
    return out


def check_ball(grid: Grid, center, radius):
    c = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if grid.periodic:
        if 2 * radius >= min(grid.lengths):
            raise ValueError("ball wraps around the torus")
    elif np.any(c - radius < np.asarray(grid.lower)) or np.any(c + radius > np.asarray(grid.upper)):
        raise ValueError("ball is not contained in the box")


def localized_wave(zbar, grid: Grid, center, radius: float, j: float, phase: float = 0.0,
                   amplitude: float = 1.0) -> Field:
    """Compactly supported solution oscillating along ``[-zbar, zbar]``.

    As ``j`` grows the field stays within ``O(1/j)`` of the segment, tends
    weakly to zero and keeps an L^2 mass proportional to ``|zbar|^2``.
    """
    check_ball(grid, center, radius)
    z = as_states(zbar)
    if not np.any(z):
        return Field.zeros(grid)
    xi = plane_wave_vector(z)
    if j < 1:
        raise ValueError("frequency index must be at least 1")
    if j > max_resolved_frequency(grid, xi) * (1 + 1e-12):
        raise ResolutionError(f"j = {j} needs more than the available grid resolution")
    X1, X2, T = grid.mesh()
    pts = np.stack([X1.ravel(), X2.ravel(), T.ravel()], axis=1)
    d = grid.displacement(pts, center)
    out = np.zeros((pts.shape[0], STATE_DIM))
    inside = np.sum(d * d, axis=1) < radius * radius
    out[inside] = wave_states(z, xi, d[inside], radius, j, phase, amplitude)
    f = Field(grid, out.reshape(grid.shape + (STATE_DIM,)))
    f.max_frequency = j * float(np.linalg.norm(xi.as_array()))
    return f


def segment_distance(w: np.ndarray, zbar) -> np.ndarray:
    """Pointwise distance of states ``w`` (..., 5) to the segment ``[-zbar, zbar]``."""
    zb = as_states(zbar)
    nn = float(zb @ zb)
    if nn == 0:
        return np.linalg.norm(w, axis=-1)
    s = np.clip((w @ zb) / nn, -1.0, 1.0)
    return np.linalg.norm(w - s[..., None] * zb, axis=-1)


def front_tests(grid: Grid, center, radius, xi: WaveVector) -> list[np.ndarray]:
    """Five test functions cut by the wave front through the ball centre.

    Each is a positive smooth weight times the indicator of
    ``{xi . (y - center) > 0}``.  Smooth tests see the oscillation only
    through their smoothness and decay faster than any power of ``1/j``;
    the cut makes the pairing decay exactly like ``1/j``, which is the
    rate the weak-convergence checks measure.
    """
    X1, X2, T = grid.mesh()
    pts = np.stack([X1, X2, T], axis=-1)
    d = grid.displacement(pts, center)
    k = xi.as_array()
    side = (d @ k) > 0
    y = d / radius
    weights = [
        np.ones(grid.shape),
        1.0 + 0.5 * y[..., 0],
        1.0 + 0.5 * y[..., 1],
        1.0 + 0.5 * y[..., 2],
        np.exp(-np.sum(y * y, axis=-1)),
    ]
    return [w * side for w in weights]


def pair(field_z: np.ndarray, test: np.ndarray, grid: Grid) -> np.ndarray:
    """Quadrature of ``field * test`` for each state component (uniform weights)."""
    return np.tensordot(test, field_z, axes=([0, 1, 2], [0, 1, 2])) * grid.cell_volume
