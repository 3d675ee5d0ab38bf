"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
written straight to the terminal even when output is captured.
"""

import json
import math
import time

import numpy as np
import pytest

from ipmrelax import cintegration as ci
from ipmrelax.geometry import (
    Status,
    convex_f,
    dist_K,
    identity_residual,
    in_closed_hull,
    in_hull,
    lambda_convex_g,
    laminate_sample,
)
from ipmrelax.subsolution import (
    closed_form_profile,
    entropy_solve,
    l1_error,
    mixing_envelope,
    total_mass,
)
from ipmrelax.verify import (
    DIVCURL_SPEED_GAP,
    coarse_grain,
    compare_to_profile,
    divcurl_stability,
    field_residuals,
)
from ipmrelax.waves import (
    WAVE_MASS_CONSTANT,
    Field,
    Grid,
    PotentialPair,
    front_tests,
    linear_residual,
    localized_wave,
    pair,
    plane_wave_vector,
    potentials_to_field,
    segment_distance,
)
from oracles import dist_K_bruteforce


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _cone_directions(rng, n):
    r = rng.normal(size=n)
    ang = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r, r * np.cos(ang), r * np.sin(ang), *rng.normal(size=(2, n))], axis=1)


# ------------------------------------------------------------------ 1


def test_c01_hull_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    samples = np.concatenate([laminate_sample(d, 2500, seed=100 + d) for d in range(4)])
    accepted = in_closed_hull(samples)
    statuses = [in_hull(z).status for z in samples[:500]]

    rng = np.random.default_rng(11)
    n = 10_000
    # half far probes, half just above the flux sheet (g = 1/2 + delta)
    far = rng.normal(scale=1.5, size=(4 * n, 5))
    far = far[lambda_convex_g(far) > 0.5 + 1e-6][: n // 2]
    rho = rng.uniform(-1, 1, n // 2)
    u = rng.normal(size=(n // 2, 2))
    ang = rng.uniform(0, 2 * np.pi, n // 2)
    e = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    delta = rng.uniform(2e-6, 1e-3, n // 2)
    m = 0.5 * rho[:, None] * u + (0.5 * (1 - rho**2) + delta)[:, None] * e
    near = np.column_stack([rho, u, m])
    probes = np.concatenate([far, near])
    g = lambda_convex_g(probes)
    rejected = ~in_closed_hull(probes)
    elapsed = time.perf_counter() - t0
    ok = (len(samples) == 10_000 and accepted.all() and all(s is not Status.OUTSIDE for s in statuses)
          and len(probes) == 10_000 and np.all(g > 0.5 + 1e-6) and rejected.all() and elapsed < 5.0)
    report(capsys, 1, ok, f"accepted {accepted.sum()}/{len(samples)} laminates, rejected "
                          f"{rejected.sum()}/{len(probes)} probes, {elapsed:.2f} s")


# ------------------------------------------------------------------ 2


def test_c02_identity_suite(capsys):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(1000):
        z = rng.normal(scale=rng.uniform(0.1, 3), size=5)
        gamma = rng.uniform(1.01, 6)
        scale = 1 + np.linalg.norm(z) ** 4 + gamma**4
        worst = max(worst, abs(identity_residual(z, gamma)) / scale)
    report(capsys, 2, worst <= 1e-12, f"max scaled identity residual {worst:.2e} (limit 1e-12)")


# ------------------------------------------------------------------ 3


def test_c03_lambda_convexity(capsys):
    rng = np.random.default_rng(13)
    n = 100_000
    z = rng.normal(size=(n, 5))
    zbar = _cone_directions(rng, n)
    t = rng.uniform(0.01, 2, n)
    scale = 1 + np.sum(z**2, axis=1) + t**2 * np.sum(zbar**2, axis=1)
    tz = t[:, None] * zbar
    g_def = lambda_convex_g(z) - 0.5 * (lambda_convex_g(z - tz) + lambda_convex_g(z + tz))
    w = rng.normal(size=(n, 5)) * t[:, None]
    f_def = convex_f(z) - 0.5 * (convex_f(z - w) + convex_f(z + w))
    f_scale = 1 + np.sum(z**2, axis=1) + np.sum(w**2, axis=1)
    gw, fw = float(np.max(g_def / scale)), float(np.max(f_def / f_scale))
    report(capsys, 3, gw <= 1e-10 and fw <= 1e-10,
           f"worst scaled midpoint defect g {gw:.2e}, f {fw:.2e} over {n} segments each")


# ------------------------------------------------------------------ 4


def test_c04_dist_K_oracle(capsys):
    rng = np.random.default_rng(14)
    z = rng.normal(size=(500, 5))
    err = max(abs(float(dist_K(zz)) - dist_K_bruteforce(zz)) for zz in z)
    report(capsys, 4, err <= 1e-6, f"max |dist_K - brute force| = {err:.2e} over 500 states")


# ------------------------------------------------------------------ 5


def test_c05_localized_waves(capsys):
    zbar = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    radius = 2.0
    grid = Grid.torus(32, 512, 32, (4.8, 4.8, 4.8))
    center = (2.4, 2.4, 2.4)
    tests = front_tests(grid, center, radius, plane_wave_vector(zbar))
    ball = 4.0 / 3.0 * math.pi * radius**3
    dists, pairs, mass = [], [], []
    for j in (8, 16, 32, 64):
        w = localized_wave(zbar, grid, center, radius, j).z
        dists.append(float(segment_distance(w, zbar).max()))
        pairs.append(max(float(np.linalg.norm(pair(w, t, grid))) for t in tests))
        mass.append(float(np.sum(w**2) * grid.cell_volume / (zbar @ zbar * ball)))
    ratio = lambda v: [b / a for a, b in zip(v, v[1:])]
    dr, pr = ratio(dists), ratio(pairs)
    mean = float(np.mean(mass))
    ok = (all(0.4 <= r <= 0.6 for r in dr) and all(0.4 <= r <= 0.6 for r in pr)
          and all(abs(mm / mean - 1) <= 0.1 for mm in mass) and min(mass) >= WAVE_MASS_CONSTANT)
    report(capsys, 5, ok, f"segment ratios {np.round(dr, 3).tolist()}, pairing ratios "
                          f"{np.round(pr, 3).tolist()}, masses {np.round(mass, 5).tolist()}")


# ------------------------------------------------------------------ 6


def _band_limited(grid, kmax, rng):
    X1, X2, T = grid.mesh()
    L1, L2, Lt = grid.lengths
    phi = np.zeros(grid.shape)
    psi = np.zeros(grid.shape)
    for _ in range(12):
        a, b, c = rng.integers(-kmax, kmax + 1, 3)
        ph = rng.uniform(0, 2 * np.pi, 2)
        arg = 2 * np.pi * (a * X1 / L1 + b * X2 / L2 + c * T / Lt)
        phi += rng.normal() * np.cos(arg + ph[0])
        psi += rng.normal() * np.cos(arg + ph[1])
    return PotentialPair(grid, phi, psi)


def test_c06_linear_residual(capsys):
    rng = np.random.default_rng(16)
    t0 = time.perf_counter()
    worst = 0.0
    for n in (16, 32, 64):
        for lengths in ((1.0, 1.0, 1.0), (1.0, 2.0, 0.5)):
            grid = Grid.torus(n, n, n, lengths)
            f = potentials_to_field(_band_limited(grid, n // 4, rng))
            worst = max(worst, max(linear_residual(f).values()))
    elapsed = time.perf_counter() - t0
    report(capsys, 6, worst <= 1e-10 and elapsed < 10.0,
           f"max relative residual {worst:.2e} on grids up to 64^3, {elapsed:.2f} s")


# ------------------------------------------------------------------ 7


def test_c07_entropy_solver(capsys):
    errs, drift = [], 0.0
    for nx in (200, 400):
        p = entropy_solve(1.0, nx, 0.4)
        errs.append(l1_error(p))
        mass = total_mass(p)
        drift = max(drift, float(np.max(np.abs(mass - mass[0]))))
    r = errs[1] / errs[0]
    report(capsys, 7, 0.4 <= r <= 0.6 and drift <= 1e-12,
           f"L1 errors {errs[0]:.5f} -> {errs[1]:.5f} (ratio {r:.3f}), mass drift {drift:.1e}")


# ------------------------------------------------------------------ 8


def test_c08_mixing_bound(capsys):
    nx = 400
    times = np.linspace(0.0, 0.45, 46)
    ok = True
    worst = {}
    for alpha in (0.25, 0.5, 0.75, 1.0):
        p = closed_form_profile(alpha, nx, times)
        env = mixing_envelope(p)
        live = p.t > 0
        dx = p.dx
        dev = np.maximum(np.abs(env.upper[live] - 2 * alpha * p.t[live]),
                         np.abs(-env.lower[live] - 2 * alpha * p.t[live]))
        worst[alpha] = float(dev.max() / dx)
        ok &= bool(np.all(dev <= dx) and env.bound_ok)
        if alpha == 1.0:
            ok &= bool(np.all(env.upper[live] >= 2 * p.t[live] - dx))
    report(capsys, 8, ok, "max |envelope - 2 alpha t| / dx per alpha: "
                          + ", ".join(f"{a}: {w:.2f}" for a, w in worst.items()))


# ------------------------------------------------------------------ 11


def test_c11_divcurl_exhibit(capsys):
    zbar = np.array([1.0, 0.0, 1.0, 0.3, 0.0])
    zbar /= np.linalg.norm(zbar)
    base = np.array([0.3, 0.1, 0.2, 0.0, 0.0])
    grid = Grid.torus(32, 512, 32, (4.8, 4.8, 4.8))
    center, radius = (2.4, 2.4, 2.4), 2.0
    limit = Field(grid, np.broadcast_to(base, grid.shape + (5,)).copy())
    seq = [Field(grid, limit.z + localized_wave(zbar, grid, center, radius, j).z) for j in (8, 16, 32, 64)]
    rep = divcurl_stability(seq, limit, front_tests(grid, center, radius, plane_wave_vector(zbar)))
    qr = rep["quadratic_ratios"]
    gap = min(rep["speed_error"])
    ok = all(0.4 <= r <= 0.6 for r in qr) and gap >= DIVCURL_SPEED_GAP
    report(capsys, 11, ok, f"rho^2-|u|^2 ratios {np.round(qr, 3).tolist()}, |u|^2 gap >= {gap:.3f} "
                           f"(pinned {DIVCURL_SPEED_GAP})")


# ------------------------------------------------------------------ 9, 10, 12


def _run_checked(config):
    """Run with per-step hull and off-mask checks."""
    init = ci.initial_field(config)
    off = ~init.mask
    state = {"hull": bool(in_closed_hull(init.z, config.params).all()), "offmask": True}

    def callback(k, field, step):
        state["hull"] &= bool(in_closed_hull(field.z, config.params).all())
        state["offmask"] &= bool(np.array_equal(field.z[off], init.z[off]))

    t0 = time.perf_counter()
    field, rep = ci.run(config, callback)
    state["elapsed"] = time.perf_counter() - t0
    return field, rep, state


TORUS = ci.RunConfig()
BOX = ci.RunConfig(domain="box", nx=32, ny=32, nt=8, T=0.5, alpha=1.0)


@pytest.fixture(scope="module")
def torus_run():
    return _run_checked(TORUS)


@pytest.fixture(scope="module")
def box_run():
    return _run_checked(BOX)


def test_c09_torus_run(capsys, torus_run):
    field, rep, state = torus_run
    reduction = rep.gap[0] / rep.gap[-1]
    steps = len(rep.gap) - 1
    ok = reduction >= 5 and steps <= 40 and state["hull"] and state["offmask"] and state["elapsed"] < 300
    report(capsys, 9, ok, f"gap {rep.gap[0]:.4f} -> {rep.gap[-1]:.4f} (reduction {reduction:.2f}x, need 5x) "
                          f"in {steps} steps, hull closure {state['hull']}, off-mask unchanged "
                          f"{state['offmask']}, {state['elapsed']:.0f} s")


def test_c10_muskat_end_to_end(capsys, box_run):
    field, rep, state = box_run
    grid = field.grid
    profile = entropy_solve(BOX.alpha, BOX.profile_nx, BOX.T, nsnap=4 * BOX.nt + 1)
    cg_err = compare_to_profile(coarse_grain(field, 8 * grid.spacing[0]), profile)
    res = field_residuals(field)
    sat = rep.final_saturated_fraction
    ok = sat >= 0.8 and cg_err <= 0.15 and res.ok and state["hull"] and state["offmask"]
    report(capsys, 10, ok, f"saturated fraction {sat:.3f} (need 0.8), coarse-grained L1 {cg_err:.3f} "
                           f"(limit 0.15), residuals ok {res.ok}, stopped by {rep.stopped}")


def test_c12_determinism(capsys, torus_run, box_run):
    same = []
    for config, (field, rep, _) in ((TORUS, torus_run), (BOX, box_run)):
        field2, rep2 = ci.run(config)
        same.append(json.dumps(rep.to_dict()) == json.dumps(rep2.to_dict())
                    and np.array_equal(field.z, field2.z))
    report(capsys, 12, all(same), f"bit-identical reports and fields: torus {same[0]}, box {same[1]}")
