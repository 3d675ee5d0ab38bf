"""Iterative convex integration on a grid.

Starting from a subsolution (zero on the torus, the lifted mixing profile
on the box), each step covers the perturbable region by disjoint balls on
which the gap ``F = min(1, dist(z, K))`` is roughly constant, and adds in
every ball a localized wave along a wave-cone direction admissible at the
ball centre.  Amplitudes are clamped so that every state stays in the
closed hull, capped by a weak-metric budget, and finally chosen to reduce
the gap inside the ball as much as possible.

All states are stored in lifted form ``(rho, u, m)`` with ``u = 2v + (0,
rho)``; on the box the flux also carries the shift ``(0, 1/2)``.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .geometry import (
    SHIFT,
    HullParams,
    LambdaDirection,
    PhysicalState,
    State,
    as_states,
    dist_K,
    hull_margin,
    in_closed_hull,
    lambda_direction,
    lambda_direction_gamma,
)
from .subsolution import SubsolutionProfile, ZONE_TOL, entropy_solve
from .waves import Field, Grid, max_resolved_frequency, plane_wave_vector, wave_states

# Phi(s) = C_PHI s^2; calibrated so that the amplitude Phi(F(z)) lies in the
# certified window of lambda_direction for at least 99% of hull states.
C_PHI = 0.25
# Pinned lower bound for the L^2 increment of the first step from a
# constant subsolution: increment >= KAPPA * Phi(eps / (4 |O|)).  Measured
# 1.26 (32x32x16) and 2.18 (16x16x8) on the zero torus field.
KAPPA = 1.0
MIN_BALL_CELLS = 2
AMPLITUDE_SAMPLES = 8
FREQ_DIVISORS = (1, 2, 4)
PHASES = 2
WEAK_LEVELS = 4
DIVERGENCE_STEPS = 3


class DivergenceError(RuntimeError):
    """The gap integral increased on too many consecutive steps."""


@dataclass
class RunConfig:
    domain: str = "torus"
    nx: int = 32
    ny: int = 32
    nt: int = 16
    lengths: tuple[float, float, float] = (1.0, 1.0, 0.5)
    T: float = 0.5
    gamma: float | None = None
    eta0: float = 1.0
    budget_decay: float = 0.5
    max_iters: int = 40
    stop_tol: float | None = None
    stop_fraction: float = 0.2
    seed: int = 0
    alpha: float = 1.0
    profile_nx: int = 400
    directions: int = 8

    def __post_init__(self):
        if self.domain not in ("torus", "box"):
            raise ValueError("domain must be 'torus' or 'box'")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.budget_decay < 1:
            raise ValueError("budget_decay must lie in (0, 1)")
        if self.stop_tol is not None and self.stop_tol <= 0:
            raise ValueError("stop_tol must be positive")
        if self.gamma is not None and self.gamma <= 2:
            raise ValueError("gamma must exceed 2")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @property
    def params(self):
        return HullParams(self.gamma)

    def grid(self) -> Grid:
        if self.domain == "torus":
            return Grid.torus(self.nx, self.ny, self.nt, self.lengths)
        return Grid.box(self.nx, self.ny, self.nt, self.T)


@dataclass(frozen=True)
class Ball:
    center: tuple[int, int, int]
    radius: float
    F_center: float


@dataclass
class BallCover:
    balls: list
    measure_fraction: float
    mass_fraction: float
    complete: bool


@dataclass
class IterationReport:
    gap: list = field(default_factory=list)
    l2_increment: list = field(default_factory=list)
    weak_distance: list = field(default_factory=list)
    budget: list = field(default_factory=list)
    balls: list = field(default_factory=list)
    clamped: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    stopped: str = ""
    final_saturated_fraction: float = float("nan")
    coarse_grained_error: float = float("nan")

    def to_dict(self, timing=False):
        """Deterministic content of the report (wall times only on request)."""
        out = {
            "gap": self.gap,
            "l2_increment": self.l2_increment,
            "weak_distance": self.weak_distance,
            "budget": self.budget,
            "balls": self.balls,
            "clamped": self.clamped,
            "stopped": self.stopped,
            "final_saturated_fraction": self.final_saturated_fraction,
            "coarse_grained_error": self.coarse_grained_error,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def lift(p: PhysicalState, box: bool = False) -> State:
    """``(rho, v, m) -> (rho, 2v + (0, rho), m + shift)``."""
    rho = float(p.rho)
    u = 2.0 * np.asarray(p.v, dtype=float) + np.array([0.0, rho])
    m = np.asarray(p.m, dtype=float) + (SHIFT[3:] if box else 0.0)
    return State(rho, u, m)


def unlift(z, box: bool = False) -> PhysicalState:
    z = as_states(z)
    rho = float(z[0])
    v = 0.5 * (z[1:3] - np.array([0.0, rho]))
    m = z[3:5] - (SHIFT[3:] if box else 0.0)
    return PhysicalState(rho, tuple(float(x) for x in v), tuple(float(x) for x in m))


def lift_array(rho, v, m, box=False):
    """Vectorised lift of component arrays to states (..., 5)."""
    rho = np.asarray(rho, dtype=float)
    z = np.zeros(rho.shape + (5,))
    z[..., 0] = rho
    z[..., 1] = 2 * v[..., 0]
    z[..., 2] = 2 * v[..., 1] + rho
    z[..., 3:5] = m
    if box:
        z[..., 4] += 0.5
    return z


def unlift_array(z, box=False):
    """Inverse of ``lift_array``: returns ``(rho, v, m)``."""
    z = np.asarray(z, dtype=float)
    rho = z[..., 0]
    v = np.stack([0.5 * z[..., 1], 0.5 * (z[..., 2] - rho)], axis=-1)
    m = z[..., 3:5].copy()
    if box:
        m[..., 1] -= 0.5
    return rho, v, m


def gap_F(z, params: HullParams = HullParams()):
    return np.minimum(1.0, dist_K(z, params))


def gap_modulus(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("gap modulus is defined on [0, 1]")
    out = C_PHI * s * s
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- balls


@functools.lru_cache(maxsize=64)
def _offsets(spacing, k):
    """Integer offsets (dt, dy, dx) of nodes at physical distance < k * h_min."""
    h1, h2, ht = spacing
    r = k * min(spacing)
    n1, n2, nt = (int(math.ceil(r / h)) for h in (h1, h2, ht))
    T, Y, X = np.meshgrid(np.arange(-nt, nt + 1), np.arange(-n2, n2 + 1), np.arange(-n1, n1 + 1), indexing="ij")
    dist2 = (X * h1) ** 2 + (Y * h2) ** 2 + (T * ht) ** 2
    keep = dist2 < r * r - 1e-12
    off = np.stack([T[keep], Y[keep], X[keep]], axis=1)
    return off, np.sqrt(dist2[keep])


def ball_indices(grid: Grid, center, k):
    """Flat node indices and displacements of the ball of radius ``k h_min``.

    Returns None on the box if the ball leaves the domain.
    """
    off, _ = _offsets(grid.spacing, k)
    idx = np.asarray(center)[None, :] + off
    shape = np.array(grid.shape)
    if grid.periodic:
        if 2 * k * min(grid.spacing) >= min(grid.lengths):
            return None
        idx = idx % shape
    else:
        axes = grid.axes()
        pos = np.array([axes[i][center[2 - i]] for i in range(3)])
        r = k * min(grid.spacing)
        if np.any(pos - r < np.asarray(grid.lower)) or np.any(pos + r > np.asarray(grid.upper)):
            return None
    flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
    h1, h2, ht = grid.spacing
    disp = np.stack([off[:, 2] * h1, off[:, 1] * h2, off[:, 0] * ht], axis=1)
    return flat, disp


def _depth(grid: Grid, region, pad):
    """Euclidean distance from each node of ``region`` to its complement."""
    spacing = grid.spacing[::-1]
    if grid.periodic:
        padded = np.pad(region, pad, mode="wrap")
        return distance_transform_edt(padded, sampling=spacing)[pad:-pad, pad:-pad, pad:-pad]
    return distance_transform_edt(np.pad(region, 1), sampling=spacing)[1:-1, 1:-1, 1:-1]


def _grow(grid: Grid, Ff, free, flat, max_k):
    """Largest ball at ``flat`` obeying the factor-2 rule on free nodes."""
    f0 = Ff[flat]
    center = np.unravel_index(flat, grid.shape)
    best = None
    for k in range(MIN_BALL_CELLS, max_k + 1):
        bi = ball_indices(grid, center, k)
        if bi is None:
            break
        idx = bi[0]
        vals = Ff[idx]
        if not np.all(free[idx]) or np.any(vals < 0.5 * f0) or np.any(vals > 2 * f0):
            break
        best = (k, idx)
    return center, best


def ball_cover(field: Field, mask=None, params: HullParams = HullParams(), F=None, max_k=None) -> BallCover:
    """Greedy cover by disjoint balls on which F varies by at most a factor 2.

    Seeds are taken band by band in decreasing dyadic levels of F.  Inside
    a band the next seed is the free node deepest inside the band's free
    part (ties by node index), so large balls are placed before the band
    fills up with small ones.  Each ball grows while it stays inside the
    mask, avoids earlier balls and keeps ``F(y0)/2 <= F(y) <= 2 F(y0)``.
    Selection stops once the balls hold half of the mask volume and half
    of the gap mass.
    """
    grid = field.grid
    if F is None:
        F = gap_F(field.z, params)
    Ff = F.ravel()
    mask = np.ones(grid.shape, bool) if mask is None else np.asarray(mask, bool)
    mf = mask.ravel()
    total_cells = int(mf.sum())
    total_mass = float(Ff[mf].sum())
    if total_cells == 0 or total_mass <= 0:
        raise ValueError("no positive gap on the perturbable region")
    if max_k is None:
        max_k = int(min(n for n in grid.counts)) // 2
    level = np.floor(np.log2(np.maximum(Ff, 1e-300)))
    level[~mf | (Ff <= 0)] = -np.inf
    free = mf.copy()
    tried = np.zeros_like(free)
    balls, cells, mass = [], 0, 0.0
    done = False
    for lev in np.unique(level[np.isfinite(level)])[::-1]:
        band = level == lev
        while not done:
            region = band & free & ~tried
            if not region.any():
                break
            depth = _depth(grid, (band & free).reshape(grid.shape), max_k + 1).ravel()
            cand = np.flatnonzero(region)
            order = cand[np.lexsort((cand, -depth[cand]))]
            placed = False
            for flat in order:
                center, best = _grow(grid, Ff, free, flat, max_k)
                tried[flat] = True
                if best is None:
                    continue
                k, idx = best
                free[idx] = False
                balls.append(Ball(tuple(int(c) for c in center), k * min(grid.spacing), float(Ff[flat])))
                cells += idx.size
                mass += float(Ff[idx].sum())
                placed = True
                done = cells >= 0.5 * total_cells and mass >= 0.5 * total_mass
                break
            if not placed:
                break
        if done:
            break
    mfrac = cells / total_cells
    ffrac = mass / total_mass
    return BallCover(balls, mfrac, ffrac, bool(mfrac >= 0.5 and ffrac >= 0.5))


# ---------------------------------------------------------- weak metric


def _smooth_box(x, c, half, delta, period):
    d = x - c
    if period is not None:
        d = d - period * np.round(d / period)
    return 0.5 * (1.0 + np.tanh((half - np.abs(d)) / delta))


@functools.lru_cache(maxsize=16)
def _weak_dictionary(grid: Grid, levels: int):
    """Per level, per axis: weights of the mollified dyadic intervals."""
    out = []
    axes = grid.axes()
    for lev in range(levels):
        n = 2**lev
        per_axis = []
        for ax, lo, L, h in zip(axes, grid.lower, grid.lengths, grid.spacing):
            w = L / n
            centres = lo + (np.arange(n) + 0.5) * w
            delta = max(w / 8, h)
            period = L if grid.periodic else None
            per_axis.append(np.stack([_smooth_box(ax, c, w / 2, delta, period) for c in centres]))
        out.append(per_axis)
    return out


def weak_metric(field_a: Field, field_b: Field, levels: int = WEAK_LEVELS) -> float:
    """``sum_l 2^-l sum_Q |<a - b, chi_Q>|`` over mollified dyadic cubes."""
    if field_a.grid != field_b.grid:
        raise ValueError("weak metric needs a common grid")
    return weak_metric_array(field_a.grid, field_a.z - field_b.z, levels)


def weak_metric_array(grid: Grid, diff, levels: int = WEAK_LEVELS) -> float:
    total = 0.0
    for lev, (w1, w2, wt) in enumerate(_weak_dictionary(grid, levels)):
        p = np.einsum("at,by,cx,tyxk->abck", wt, w2, w1, diff, optimize=True)
        total += 2.0**-lev * float(np.sum(np.linalg.norm(p, axis=-1)))
    return total * grid.cell_volume


def _weak_metric_local(grid: Grid, flat, values, levels=WEAK_LEVELS):
    it, iy, ix = np.unravel_index(flat, grid.shape)
    total = 0.0
    for lev, (w1, w2, wt) in enumerate(_weak_dictionary(grid, levels)):
        p = np.einsum("an,bn,cn,nk->abck", wt[:, it], w2[:, iy], w1[:, ix], values, optimize=True)
        total += 2.0**-lev * float(np.sum(np.linalg.norm(p, axis=-1)))
    return total * grid.cell_volume


# ------------------------------------------------------------ the step


def _candidates(zc, params: HullParams, ndir: int):
    """Certified wave-cone directions at a ball centre, with symmetric windows."""
    out = []
    try:
        if params.gamma is None:
            out.append(lambda_direction(zc, allow_boundary=True))
        else:
            out.append(lambda_direction_gamma(zc, params.gamma, 0.0))
    except (ValueError, RuntimeError):
        pass
    rho, u = zc[0], zc[1:3]
    for ang in np.linspace(0.0, 2 * np.pi, ndir, endpoint=False):
        e = np.array([math.cos(ang), math.sin(ang)])
        raw = np.array([2.0, *(2.0 * e), *(u - rho * e)])
        zbar = raw / np.linalg.norm(raw)
        t = min(_window(zc, zbar, params), _window(zc, -zbar, params))
        if t > 0:
            out.append(LambdaDirection(State.from_array(zbar), -t, t, "unit"))
    return out


def _window(z, zbar, params, t_max=4.0, iters=50):
    if hull_margin(z, params) < -1e-12:
        return 0.0
    lo, hi = 0.0, t_max
    if hull_margin(z + hi * zbar, params) >= 0:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if hull_margin(z + mid * zbar, params) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def _max_amplitude(zb, W, a_cap, params, levels=3, samples=16):
    """Largest a <= a_cap (to a_cap * samples^-levels) keeping zb + a W in
    the closed hull.  The admissible amplitudes form an interval because
    the hull is convex, so a bracketing search on a few batched samples
    is exact up to its resolution."""
    lo, hi = 0.0, a_cap
    for _ in range(levels):
        a = lo + (hi - lo) * np.arange(1, samples + 1) / samples
        ok = np.all(in_closed_hull(zb[None] + a[:, None, None] * W[None], params, 0.0), axis=1)
        n = int(np.argmin(ok)) if not ok.all() else samples
        if n == samples:
            return float(a[-1]), lo > 0.0 or hi < a_cap
        lo, hi = (lo if n == 0 else float(a[n - 1])), float(a[n])
    return lo, True


def perturb_step(field: Field, mask=None, eta: float = 1.0, params: HullParams = HullParams(), seed: int = 0,
                 stop_tol: float = 0.0, ndir: int = 8, freq_divisors=FREQ_DIVISORS, phases: int = PHASES):
    """One covering-and-oscillation step.  Returns ``(new_field, report)``.

    For every ball the candidates are the certified directions at its
    centre, combined with a few frequencies (the finest resolvable one and
    coarser divisors) and phases.  Each candidate amplitude is capped by
    the certified window and the weak-metric share ``eta / k``, clamped to
    the closed hull, and the amplitude minimising the gap inside the ball
    wins (zero amplitude included, so the gap never increases).
    """
    grid = field.grid
    if mask is None:
        mask = field.mask if field.mask is not None else np.ones(grid.shape, bool)
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("mask is empty")
    z = field.z
    F = gap_F(z, params)
    eps = float(F[mask].sum() * grid.cell_volume)
    report = {"gap_before": eps, "gap_after": eps, "balls": 0, "clamped": 0, "l2_increment": 0.0,
              "weak_distance": 0.0, "measure_fraction": 0.0, "mass_fraction": 0.0, "no_op": False}
    if eps <= stop_tol or not np.any(F[mask] > 0):
        report["no_op"] = True
        return field.copy(), report
    cover = ball_cover(field, mask, params, F)
    rng = np.random.default_rng(seed)
    zf = z.reshape(-1, 5)
    Ff = F.ravel()
    new = zf.copy()
    k = max(len(cover.balls), 1)
    weak = 0.0
    clamped = 0
    maxfreq = field.max_frequency
    for ball in cover.balls:
        flat, disp = ball_indices(grid, ball.center, int(round(ball.radius / min(grid.spacing))))
        zc = zf[np.ravel_multi_index(ball.center, grid.shape)]
        zb = zf[flat]
        best_F, best = float(Ff[flat].sum()), None
        phase0 = float(rng.uniform(0, 2 * np.pi))
        for cand in _candidates(zc, params, ndir):
            zbar = cand.zbar.as_array()
            xi = plane_wave_vector(zbar)
            j_max = max_resolved_frequency(grid, xi)
            for div in freq_divisors:
                j = max(math.floor(j_max / div), 1)
                for ph in phase0 + 2 * np.pi * np.arange(phases) / phases:
                    W = wave_states(zbar, xi, disp, ball.radius, j, ph)
                    wm = _weak_metric_local(grid, flat, W)
                    cap = cand.t_plus if wm == 0 else min(cand.t_plus, eta / (k * wm))
                    a_max, was_clamped = _max_amplitude(zb, W, cap, params)
                    clamped += int(was_clamped)
                    if a_max <= 0:
                        continue
                    amps = a_max * np.arange(AMPLITUDE_SAMPLES, 0, -1) / AMPLITUDE_SAMPLES
                    Fs = gap_F(zb[None] + amps[:, None, None] * W[None], params).sum(axis=1)
                    i = int(np.argmin(Fs))
                    if Fs[i] < best_F - 1e-12:
                        best_F, best = float(Fs[i]), (amps[i], W, j * float(np.linalg.norm(xi.as_array())), wm)
        if best is None:
            continue
        a, W, freq, wm = best
        new[flat] = zb + a * W
        weak += a * wm
        maxfreq = max(maxfreq, freq)
    out = Field(grid, new.reshape(z.shape), None if field.mask is None else field.mask.copy(), maxfreq)
    F_new = gap_F(out.z, params)
    report.update(
        balls=len(cover.balls),
        clamped=clamped,
        l2_increment=float(np.sum((out.z - z) ** 2) * grid.cell_volume),
        weak_distance=weak,
        measure_fraction=cover.measure_fraction,
        mass_fraction=cover.mass_fraction,
        gap_after=float(F_new[mask].sum() * grid.cell_volume),
    )
    return out, report


# ------------------------------------------------------------- driving


def subsolution_field(grid: Grid, profile: SubsolutionProfile, tol=ZONE_TOL) -> Field:
    """Lifted subsolution on a box grid with the mixing zone as mask."""
    X1, X2, T = grid.mesh()
    rho, m2 = profile.sample(X2, T)
    zero = np.zeros(rho.shape + (2,))
    m = np.zeros(rho.shape + (2,))
    m[..., 1] = m2
    z = lift_array(rho, zero, m, box=True)
    return Field(grid, z, np.abs(rho) < 1 - tol)


def initial_field(config: RunConfig) -> Field:
    grid = config.grid()
    if config.domain == "torus":
        return Field(grid, np.zeros(grid.shape + (5,)), np.ones(grid.shape, bool))
    profile = entropy_solve(config.alpha, config.profile_nx, config.T, nsnap=4 * config.nt + 1)
    return subsolution_field(grid, profile)


def saturated_fraction(field: Field, threshold=0.9):
    mask = field.mask if field.mask is not None else np.ones(field.grid.shape, bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(np.abs(field.rho[mask]) > threshold))


def run(config: RunConfig, callback=None):
    """Iterate ``perturb_step`` with budgets ``eta0 * decay^k``.

    ``callback(k, field, step_report)`` is called after every step (used
    for snapshots).  Returns ``(field, IterationReport)``.
    """
    params = config.params
    field0 = initial_field(config)
    mask = field0.mask
    grid = field0.grid
    field = field0.copy()
    report = IterationReport()
    F = gap_F(field.z, params)
    measure = float(mask.sum() * grid.cell_volume)
    gap = float(F[mask].sum() * grid.cell_volume)
    stop_tol = config.stop_tol if config.stop_tol is not None else config.stop_fraction * measure
    report.gap.append(gap)
    increases = 0
    report.stopped = "max_iters"
    for k in range(config.max_iters):
        if gap < stop_tol:
            report.stopped = "stop_tol"
            break
        eta = config.eta0 * config.budget_decay**k
        t0 = time.perf_counter()
        field, step = perturb_step(field, mask, eta, params, seed=config.seed * 1_000_003 + k,
                                   stop_tol=stop_tol, ndir=config.directions)
        report.wall_time.append(time.perf_counter() - t0)
        report.l2_increment.append(step["l2_increment"])
        report.weak_distance.append(step["weak_distance"])
        report.budget.append(eta)
        report.balls.append(step["balls"])
        report.clamped.append(step["clamped"])
        new_gap = step["gap_after"]
        increases = increases + 1 if new_gap > gap else 0
        gap = new_gap
        report.gap.append(gap)
        if callback is not None:
            callback(k, field, step)
        if increases >= DIVERGENCE_STEPS:
            raise DivergenceError(f"gap integral increased on {increases} consecutive steps")
        if step["no_op"]:
            report.stopped = "no_op"
            break
    else:
        if gap < stop_tol:
            report.stopped = "stop_tol"
    report.final_saturated_fraction = saturated_fraction(field)
    return field, report
