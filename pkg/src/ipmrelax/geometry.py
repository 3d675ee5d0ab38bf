"""State-space geometry of the relaxed porous-media inclusion.

A state is ``z = (rho, u, m)`` in R x R^2 x R^2 where ``u = 2v + (0, rho)``
is the symmetrized velocity and ``m`` the relaxed density flux.  The
constitutive set is

    K = {|rho| = 1, m = rho u / 2}

and its lamination hull is cut out by ``|rho| <= 1`` and
``|m - rho u / 2| <= (1 - rho^2) / 2``.  With a speed cap ``gamma > 1`` the
hull of ``K_gamma = K intersect {|u| <= gamma}`` needs three more
inequalities (see :func:`hull_slacks`).

Every function accepts either a :class:`State` or an array whose last axis
has length 5 (``rho, u1, u2, m1, m2``); array inputs are evaluated
elementwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STATE_DIM = 5
DEFAULT_TOL = 1e-9

# Lower bound factor for the symmetric amplitude returned by
# lambda_direction: t_plus >= DIRECTION_CONSTANT * (1 - rho^2).
DIRECTION_CONSTANT = 1.0 / 8.0

# Gravity offset applied to m before membership tests on bounded domains.
SHIFT = np.array([0.0, 0.0, 0.0, 0.0, 0.5])

CONSTRAINTS = ("density", "speed", "flux", "plus_sheet", "minus_sheet")


@dataclass(frozen=True)
class State:
    rho: float
    u: tuple[float, float]
    m: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "u", tuple(float(c) for c in self.u))
        object.__setattr__(self, "m", tuple(float(c) for c in self.m))
        if len(self.u) != 2 or len(self.m) != 2:
            raise ValueError("u and m must be 2-vectors")
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite state {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, *self.u, *self.m])

    @classmethod
    def from_array(cls, a) -> "State":
        a = np.asarray(a, dtype=float)
        if a.shape != (STATE_DIM,):
            raise ValueError(f"expected shape (5,), got {a.shape}")
        return cls(a[0], (a[1], a[2]), (a[3], a[4]))

    def __array__(self, dtype=None, copy=None):
        return self.as_array() if dtype is None else self.as_array().astype(dtype)


@dataclass(frozen=True)
class PhysicalState:
    """Density, Darcy velocity and flux as they appear in the IPM system."""

    rho: float
    v: tuple[float, float]
    m: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, *self.v, *self.m], dtype=float)


@dataclass(frozen=True)
class HullParams:
    gamma: float | None = None
    shift: bool = False

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")


class Status(str, enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class Membership:
    status: Status
    margin: float
    active_constraints: tuple[str, ...] = ()


@dataclass(frozen=True)
class LambdaDirection:
    """A wave-cone direction with an admissible amplitude window.

    ``normalization`` is ``"rho_m"`` when ``rho^2 + |m|^2 = 1`` and
    ``"unit"`` when the full 5-vector has unit length.
    """

    zbar: State
    t_minus: float
    t_plus: float
    normalization: str = "rho_m"


def as_states(z) -> np.ndarray:
    """Coerce a State, sequence of States or array to a float array (..., 5)."""
    if isinstance(z, State):
        return z.as_array()
    if isinstance(z, (list, tuple)) and z and isinstance(z[0], State):
        return np.stack([s.as_array() for s in z])
    a = np.asarray(z, dtype=float)
    if a.shape[-1:] != (STATE_DIM,):
        raise ValueError(f"state arrays need a trailing axis of length 5, got {a.shape}")
    return a


def _unpack(z):
    return z[..., 0], z[..., 1:3], z[..., 3:5]


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _shifted(z, shift: bool):
    return z + SHIFT if shift else z


def wave_cone_contains(zbar, tol: float = DEFAULT_TOL):
    """True where ``|rho^2 - |u|^2| <= tol``; the m components are irrelevant."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    z = as_states(zbar)
    rho, u, _ = _unpack(z)
    out = np.abs(rho**2 - np.sum(u * u, axis=-1)) <= tol
    return bool(out) if out.ndim == 0 else out


def in_K(z, params: HullParams = HullParams(), tol: float = DEFAULT_TOL):
    z = _shifted(as_states(z), params.shift)
    rho, u, m = _unpack(z)
    ok = (np.abs(np.abs(rho) - 1.0) <= tol) & (_norm(m - 0.5 * rho[..., None] * u) <= tol)
    if params.gamma is not None:
        ok &= _norm(u) <= params.gamma + tol
    return bool(ok) if ok.ndim == 0 else ok


def hull_slacks(z, params: HullParams = HullParams()) -> np.ndarray:
    """Signed slacks of the hull inequalities, last axis ordered as CONSTRAINTS.

    Positive means strictly satisfied.  Without gamma the speed and sheet
    columns are ``+inf``.  The speed slack is written in length units,
    ``sqrt(gamma^2 - 1 + rho^2) - |u|``.
    """
    z = _shifted(as_states(z), params.shift)
    rho, u, m = _unpack(z)
    h = 0.5 * (1.0 - rho**2)
    out = np.full(z.shape[:-1] + (5,), np.inf)
    out[..., 0] = 1.0 - np.abs(rho)
    out[..., 2] = h - _norm(m - 0.5 * rho[..., None] * u)
    g = params.gamma
    if g is not None:
        out[..., 1] = np.sqrt(np.maximum(g * g - 1.0 + rho**2, 0.0)) - _norm(u)
        out[..., 3] = 0.5 * g * (1.0 - rho) - _norm(m - 0.5 * u)
        out[..., 4] = 0.5 * g * (1.0 + rho) - _norm(m + 0.5 * u)
    return out


def hull_margin(z, params: HullParams = HullParams()):
    """Smallest hull slack; >= 0 on the closed hull."""
    return _scalar(np.min(hull_slacks(z, params), axis=-1))


def in_closed_hull(z, params: HullParams = HullParams(), tol: float = DEFAULT_TOL):
    out = np.min(hull_slacks(z, params), axis=-1) >= -tol
    return bool(out) if out.ndim == 0 else out


def in_hull(z, params: HullParams = HullParams(), tol: float = DEFAULT_TOL) -> Membership:
    """Classify a single state against the hull, with a two-sided boundary band."""
    s = hull_slacks(z, params)
    if s.ndim != 1:
        raise ValueError("in_hull classifies one state; use hull_margin for arrays")
    margin = float(np.min(s))
    active = tuple(name for name, v in zip(CONSTRAINTS, s) if abs(v) <= tol)
    if margin > tol:
        status = Status.INTERIOR
    elif margin < -tol:
        status = Status.OUTSIDE
    else:
        status = Status.BOUNDARY
    return Membership(status, margin, active)


def convex_f(z):
    """``|m - rho u / 2| + (rho^2 + |u|^2) / 4``, a convex function."""
    rho, u, m = _unpack(as_states(z))
    return _scalar(_norm(m - 0.5 * rho[..., None] * u) + 0.25 * (rho**2 + np.sum(u * u, axis=-1)))


def lambda_convex_g(z):
    """``convex_f + (rho^2 - |u|^2) / 4``; equals 1/2 on K and separates the hull."""
    rho, u, _ = _unpack(as_states(z))
    return _scalar(convex_f(z) + 0.25 * (rho**2 - np.sum(u * u, axis=-1)))


def identity_residual(z, gamma: float):
    """LHS minus RHS of the quadratic identity tying the five hull inequalities.

    The identity reads::

        [h^2 - |m - rho u/2|^2] + (1-rho^2)/4 [gamma^2 - |u|^2 - (1-rho^2)]
          = (1+rho)/2 [gamma^2 (1-rho)^2/4 - |m - u/2|^2]
          + (1-rho)/2 [gamma^2 (1+rho)^2/4 - |m + u/2|^2]

    with ``h = (1 - rho^2)/2``.  The weight of the speed bracket is
    ``(1 - rho^2)/4``; with ``(1 - rho)^2/4`` the two sides differ by
    ``rho (1 - rho) / 2`` times that bracket.
    """
    rho, u, m = _unpack(as_states(z))
    uu = np.sum(u * u, axis=-1)
    d = m - 0.5 * rho[..., None] * u
    lhs = (0.25 * (1 - rho**2) ** 2 - np.sum(d * d, axis=-1)) + 0.25 * (1 - rho**2) * (
        gamma**2 - uu - (1 - rho**2)
    )
    a = m - 0.5 * u
    b = m + 0.5 * u
    rhs = 0.5 * (1 + rho) * (0.25 * gamma**2 * (1 - rho) ** 2 - np.sum(a * a, axis=-1)) + 0.5 * (
        1 - rho
    ) * (0.25 * gamma**2 * (1 + rho) ** 2 - np.sum(b * b, axis=-1))
    return _scalar(lhs - rhs)


def dist_K(z, params: HullParams = HullParams()):
    """Euclidean distance in R^5 to K (or K_gamma).

    On the branch ``rho' = s`` (s = +-1) the squared distance is
    ``(rho - s)^2 + q(u')`` with ``q(u') = |u' - u|^2 + |u' - 2 s m|^2 / 4``.
    ``q`` is an isotropic quadratic, ``5/4 |u' - u*|^2 + const``, centred at
    ``u* = (4u + 2 s m)/5`` with minimum ``|u - 2 s m|^2 / 5``.  Under the
    speed cap the constrained minimiser is therefore the projection of
    ``u*`` onto the disc ``|u'| <= gamma``.
    """
    zz = _shifted(as_states(z), params.shift)
    rho, u, m = _unpack(zz)
    best = None
    for s in (1.0, -1.0):
        ustar = (4.0 * u + 2.0 * s * m) / 5.0
        if params.gamma is not None:
            n = _norm(ustar)
            scale = np.where(n > params.gamma, params.gamma / np.maximum(n, 1e-300), 1.0)
            ustar = ustar * scale[..., None]
        du = ustar - u
        dm = m - 0.5 * s * ustar
        d2 = (rho - s) ** 2 + np.sum(du * du, axis=-1) + np.sum(dm * dm, axis=-1)
        best = d2 if best is None else np.minimum(best, d2)
    return _scalar(np.sqrt(best))


def split_to_segment(z, e, tol: float = 1e-9):
    """Write a flux-boundary state as a barycentre of two points of K.

    ``z`` must satisfy ``m = rho u / 2 + (1 - rho^2) e / 2`` with ``|rho| < 1``.
    Returns ``(z1, z2, w1, w2)`` with ``z1`` on the ``rho = 1`` sheet,
    ``z2`` on the ``rho = -1`` sheet, ``z1 - z2`` in the wave cone and
    ``w1 z1 + w2 z2 = z``.
    """
    za = as_states(z)
    e = np.asarray(e, dtype=float)
    if za.shape != (5,) or e.shape != (2,):
        raise ValueError("split_to_segment works on a single state")
    if abs(np.linalg.norm(e) - 1.0) > tol:
        raise ValueError("e must be a unit vector")
    rho, u, m = za[0], za[1:3], za[3:5]
    if not abs(rho) < 1.0:
        raise ValueError("split needs |rho| < 1")
    defect = m - 0.5 * rho * u - 0.5 * (1 - rho**2) * e
    if np.linalg.norm(defect) > tol * (1.0 + np.linalg.norm(za)):
        raise ValueError("state is not on the flux boundary in direction e")
    u1 = u + (1 - rho) * e
    u2 = u - (1 + rho) * e
    z1 = State(1.0, u1, 0.5 * u1)
    z2 = State(-1.0, u2, -0.5 * u2)
    return z1, z2, 0.5 * (1 + rho), 0.5 * (1 - rho)


def _certify(z, zbar, t_minus, t_plus, params, tol, n=64):
    ts = np.linspace(t_minus, t_plus, n)
    pts = z[None, :] + ts[:, None] * zbar[None, :]
    return bool(np.all(np.min(hull_slacks(pts, params), axis=-1) >= -tol))


def lambda_direction(z, tol: float = DEFAULT_TOL, allow_boundary: bool = False) -> LambdaDirection:
    """Wave-cone direction along which ``z`` can oscillate inside the hull.

    Normalised by ``rho^2 + |m|^2 = 1``; the window is symmetric and
    ``t_plus >= DIRECTION_CONSTANT * (1 - rho^2)``.  With ``allow_boundary``
    states on the flux boundary (but off K) are accepted and the returned
    direction runs along the segment through them.
    """
    za = as_states(z)
    if za.shape != (5,):
        raise ValueError("lambda_direction works on a single state")
    mem = in_hull(za, HullParams(), tol)
    if mem.status is Status.OUTSIDE or (mem.status is Status.BOUNDARY and not allow_boundary):
        raise ValueError(f"state is not in the open hull ({mem.status.value})")
    rho, u, m = za[0], za[1:3], za[3:5]
    if abs(rho) >= 1.0 - tol:
        raise ValueError("no oscillation direction at |rho| = 1")
    h = 0.5 * (1 - rho**2)
    d = m - 0.5 * rho * u
    r = float(np.linalg.norm(d))
    if r < 0.5 * h:
        mbar = d / r if r > 0 else np.array([1.0, 0.0])
        zbar = np.array([0.0, 0.0, 0.0, *mbar])
        t = h - r
    else:
        e = d / r
        raw = np.array([2.0, *(2.0 * e), *(u - rho * e)])
        # Along z + s*raw the flux defect stays parallel to e with length
        # r - 2 rho s - 2 s^2, so admissibility is two quadratic conditions.
        root = math.sqrt(rho**2 + h + r)
        s_hi = min(0.5 * (1 - rho), 0.5 * (-rho + root))
        s_lo = max(-0.5 * (1 + rho), 0.5 * (-rho - root))
        s = min(s_hi, -s_lo)
        lam = 1.0 / math.sqrt(raw[0] ** 2 + raw[3] ** 2 + raw[4] ** 2)
        zbar = lam * raw
        t = s / lam
    if not _certify(za, zbar, -t, t, HullParams(), tol):
        raise RuntimeError("direction window failed certification")
    return LambdaDirection(State.from_array(zbar), -t, t, "rho_m")


def _line_window(z, zbar, params, tol, t_max):
    """Largest t with z + s*zbar in the closed hull for all 0 <= s <= t.

    Along wave-cone lines every hull inequality is convex in s (or affine),
    so the admissible set is an interval and bisection is exact.
    """
    def ok(t):
        return hull_margin(z + t * zbar, params) >= -tol

    if ok(t_max):
        return t_max
    lo, hi = 0.0, t_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _unit_solutions(u, c):
    """Unit vectors e with u . e = c."""
    n = float(np.linalg.norm(u))
    if n == 0.0 or abs(c) > n:
        return []
    a = u / n
    b = np.array([-a[1], a[0]])
    cos = c / n
    sin = math.sqrt(max(1.0 - cos * cos, 0.0))
    sols = [cos * a + sin * b]
    if sin > 0:
        sols.append(cos * a - sin * b)
    return sols


def lambda_direction_gamma(z, gamma: float, alpha: float, tol: float = DEFAULT_TOL) -> LambdaDirection:
    """Unit wave-cone direction for the speed-capped hull.

    Candidate directions are the ones used to exhibit extreme points of the
    capped hull: ``(1, e, 0)`` and the sheet-preserving directions
    ``(1, e, e/2 - (m - u/2)/(1 - rho))`` (and its mirror image), each with
    ``u . e = +-rho``, plus the flux-segment and pure-flux directions.  Each
    candidate's symmetric window is measured by bisection, the widest wins,
    and the window is re-checked on 64 samples.
    """
    if not gamma > 2.0:
        raise ValueError("directions for the capped hull need gamma > 2")
    params = HullParams(gamma)
    za = as_states(z)
    mem = in_hull(za, params, tol)
    if mem.status is not Status.INTERIOR:
        raise ValueError(f"state is not in the open capped hull ({mem.status.value})")
    if dist_K(za, params) < alpha:
        raise ValueError("state is closer to K_gamma than alpha")
    rho, u, m = za[0], za[1:3], za[3:5]
    cands = []
    for e in _unit_solutions(u, rho):
        cands.append(np.array([1.0, *e, 0.0, 0.0]))
        cands.append(np.array([1.0, *e, *(0.5 * e - (m - 0.5 * u) / (1 - rho))]))
    for e in _unit_solutions(u, -rho):
        cands.append(np.array([-1.0, *e, *(-0.5 * e - (m + 0.5 * u) / (1 + rho))]))
    d = m - 0.5 * rho * u
    r = float(np.linalg.norm(d))
    if r > 0:
        e = d / r
        cands.append(np.array([2.0, *(2.0 * e), *(u - rho * e)]))
        cands.append(np.array([0.0, 0.0, 0.0, *e]))
    for ang in np.linspace(0.0, np.pi, 8, endpoint=False):
        cands.append(np.array([0.0, 0.0, 0.0, math.cos(ang), math.sin(ang)]))
    t_max = 4.0 * (gamma + 1.0)
    best, best_t = None, -1.0
    for c in cands:
        c = c / np.linalg.norm(c)
        t = min(_line_window(za, c, params, tol, t_max), _line_window(za, -c, params, tol, t_max))
        if t > best_t:
            best, best_t = c, t
    if best_t <= 0 or not _certify(za, best, -best_t, best_t, params, tol):
        raise RuntimeError("no certified direction found")
    return LambdaDirection(State.from_array(best), -best_t, best_t, "unit")


def _random_unit(rng, n):
    ang = rng.uniform(0.0, 2 * np.pi, n)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _laminate(depth, rho, u, rng):
    """Build laminates with prescribed barycentric (rho, u).

    Returns the barycentre (computed as the weighted average of explicit
    points of K) and the largest leaf speed.  Two children always differ by
    a wave-cone vector: either ``|d rho| = |d u|`` or they share (rho, u).
    """
    n = rho.shape[0]
    leaf = np.abs(rho) >= 1.0
    if depth == 0 or np.all(leaf):
        if not np.all(leaf):
            raise ValueError("depth-0 laminates must sit on |rho| = 1")
        s = np.sign(rho)
        z = np.concatenate([s[:, None], u, 0.5 * s[:, None] * u], axis=1)
        return z, np.linalg.norm(u, axis=1)

    kind = rng.integers(0, 3, n) if depth > 1 else np.zeros(n, dtype=int)
    # kind 0: split straight onto rho = -1 and rho = +1
    # kind 1: split along a random rank-one line to interior densities
    # kind 2: split in the flux only (same rho, u)
    lo = rng.uniform(-1.0, rho)
    hi = rng.uniform(rho, 1.0)
    snap = rng.random(n) < 0.3
    lo = np.where((kind == 0) | snap, -1.0, lo)
    hi = np.where((kind == 0) | (rng.random(n) < 0.3), 1.0, hi)
    span = hi - lo
    e = _random_unit(rng, n)
    w_lo = np.where(kind == 2, rng.uniform(0.05, 0.95, n), (hi - rho) / np.where(span > 0, span, 1.0))
    w_hi = 1.0 - w_lo
    rho_a = np.where(kind == 2, rho, lo)
    rho_b = np.where(kind == 2, rho, hi)
    u_a = np.where((kind == 2)[:, None], u, u - (w_hi * span)[:, None] * e)
    u_b = np.where((kind == 2)[:, None], u, u + (w_lo * span)[:, None] * e)
    za, sa = _laminate_mixed(depth - 1, rho_a, u_a, rng)
    zb, sb = _laminate_mixed(depth - 1, rho_b, u_b, rng)
    z = w_lo[:, None] * za + w_hi[:, None] * zb
    z = np.where(leaf[:, None], np.concatenate([np.sign(rho)[:, None], u, 0.5 * np.sign(rho)[:, None] * u], 1), z)
    return z, np.where(leaf, np.linalg.norm(u, axis=1), np.maximum(sa, sb))


def _laminate_mixed(depth, rho, u, rng):
    # children at |rho| = 1 are leaves regardless of remaining depth
    leaf = np.abs(rho) >= 1.0
    if np.all(leaf) or depth == 0:
        return _laminate(0, np.where(leaf, rho, np.sign(rho)), u, rng)
    return _laminate(depth, rho, u, rng)


def laminate_sample(depth: int, count: int, seed: int, params: HullParams = HullParams()) -> np.ndarray:
    """Random laminate barycentres of K (or K_gamma) of order at most ``depth``.

    Depth 0 returns points of K.  Deeper samples are built top-down from a
    random barycentric (rho, u) by repeatedly splitting along wave-cone
    segments; the returned state is the weighted average of the explicit
    leaves in K, so it lies in the hull by construction.  With a speed cap,
    laminates with a leaf faster than gamma are discarded and redrawn.
    Returns an array of shape (count, 5).
    """
    if not 0 <= depth <= 4:
        raise ValueError("depth must be between 0 and 4")
    rng = np.random.default_rng(seed)
    radius = 2.0 if params.gamma is None else params.gamma
    out = []
    have = 0
    while have < count:
        n = max(2 * (count - have), 64)
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = radius * np.sqrt(rng.random(n))
        u = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        if depth == 0:
            rho = rng.choice([-1.0, 1.0], n)
        else:
            rho = rng.uniform(-1.0, 1.0, n)
        z, speed = _laminate(depth, rho, u, rng)
        if params.gamma is not None:
            z = z[speed <= params.gamma]
        out.append(z)
        have += len(z)
    z = np.concatenate(out)[:count]
    return z - SHIFT if params.shift else z
