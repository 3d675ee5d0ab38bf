"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 unresolvable frequency,
4 numerical divergence.  The default output directory is taken from
``IPMRELAX_OUTPUT_DIR`` (falling back to the current directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import cintegration as ci
from . import geometry as geo
from . import io
from . import subsolution as sub
from . import verify as ver
from . import waves as wv

EXIT_OK, EXIT_INPUT, EXIT_RESOLUTION, EXIT_DIVERGENCE = 0, 2, 3, 4
OUTPUT_ENV = "IPMRELAX_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise io.InputError(message)


def _outdir(value):
    path = Path(value or os.environ.get(OUTPUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _membership_line(label, mem):
    active = ",".join(mem.active_constraints) or "-"
    return f"{label}\t{mem.status.value}\tmargin={mem.margin!r}\tactive={active}"


# ------------------------------------------------------------------- hull


def cmd_hull(args):
    params = geo.HullParams(args.gamma, args.shift) if args.gamma is not None else geo.HullParams(shift=args.shift)
    states = []
    if args.csv:
        try:
            with open(args.csv, newline="") as fh:
                reader = csv.DictReader(fh)
                for i, row in enumerate(reader):
                    vals = [float(row[k]) for k in ("rho", "u1", "u2", "m1", "m2")]
                    states.append((str(i), vals))
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise io.InputError(f"cannot read states: {exc}") from None
    else:
        rho = io.parse_vector(args.rho, 1)[0]
        u = io.parse_vector(args.u, 2)
        m = io.parse_vector(args.m, 2)
        states.append(("state", [rho, *u, *m]))
    for label, vals in states:
        mem = geo.in_hull(np.array(vals), params)
        print(_membership_line(label, mem) if args.verbose or args.csv else mem.status.value)
        if args.verbose:
            print(f"\tdist_K={geo.dist_K(np.array(vals), params)!r}")
    return EXIT_OK


# ------------------------------------------------------------------- wave


def wave_sweep(zbar, js, grid, center, radius):
    """Lemma-style measurements of localized waves for each frequency."""
    zbar = np.asarray(zbar, dtype=float)
    rows = []
    nz = float(zbar @ zbar)
    ball = 4.0 / 3.0 * math.pi * radius**3
    tests = None
    last = None
    for j in js:
        f = wv.localized_wave(zbar, grid, center, radius, j)
        last = f
        dist = float(wv.segment_distance(f.z, zbar).max())
        if nz > 0:
            if tests is None:
                tests = wv.front_tests(grid, center, radius, wv.plane_wave_vector(zbar))
            pair = max(float(np.linalg.norm(wv.pair(f.z, t, grid))) for t in tests)
            mass = float(np.sum(f.z**2) * grid.cell_volume / (nz * ball))
        else:
            pair, mass = 0.0, 0.0
        rows.append({"j": j, "segment_distance": dist, "max_pairing": pair, "l2_ratio": mass,
                     "mean_abs": float(np.max(np.abs(f.z.mean(axis=(0, 1, 2)))))})
    return rows, last


def cmd_wave(args):
    zbar = io.parse_vector(args.zbar, 5)
    counts = [int(v) for v in io.parse_vector(args.grid, 3)]
    lengths = io.parse_vector(args.lengths, 3)
    grid = wv.Grid.torus(*counts, lengths)
    center = io.parse_vector(args.center, 3) if args.center else [L / 2 for L in lengths]
    js = [int(v) for v in args.j.split(",")]
    out = _outdir(args.out)
    try:
        rows, last = wave_sweep(zbar, js, grid, center, args.radius)
    except ValueError as exc:
        if isinstance(exc, wv.ResolutionError):
            raise
        raise io.InputError(str(exc)) from None
    table = out / "wave_sweep.csv"
    with table.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    if args.snapshot:
        io.write_field(last, out / "wave_field.csv")
    for r in rows:
        print(f"j={r['j']}\tdist={r['segment_distance']:.6g}\tpairing={r['max_pairing']:.6g}\tl2={r['l2_ratio']:.6g}")
    return EXIT_OK


# ------------------------------------------------------------ subsolution


def cmd_subsolution(args):
    if not 0 < args.alpha <= 1:
        raise io.InputError("alpha must lie in (0, 1]")
    try:
        p = sub.entropy_solve(args.alpha, args.nx, args.T, args.cfl, nsnap=args.nsnap)
    except ValueError as exc:
        raise io.InputError(str(exc)) from None
    out = _outdir(args.out)
    with (out / "profile.csv").open("w") as fh:
        fh.write("t,x2,rho,m2\n")
        for i, t in enumerate(p.t):
            for x, r, m in zip(p.x2, p.rho[i], p.m2[i]):
                fh.write(f"{float(t)!r},{float(x)!r},{float(r)!r},{float(m)!r}\n")
    adm = sub.admissibility_report(p)
    env = sub.mixing_envelope(p)
    mass = sub.total_mass(p)
    window = [i for i, t in enumerate(p.t) if 0 < t < 1 / (2 * p.alpha)]
    closed = []
    for i in window:
        closed.append({"t": float(p.t[i]), "l1_error": sub.l1_error(p, i)})
    # The Godunov profile smears the fan edge over several cells, so the
    # envelope bound is also checked on the limit profile at the same times.
    limit_times = [float(p.t[i]) for i in window]
    env_limit = sub.mixing_envelope(sub.closed_form_profile(p.alpha, p.nx, limit_times)) if limit_times else None
    body = {
        "alpha": p.alpha, "nx": p.nx, "T": p.T,
        "mass_drift": float(np.max(np.abs(mass - mass[0]))),
        "closed_form_comparison": closed,
        "admissibility": {k: v for k, v in adm.items() if k not in ("strict_violations", "sub4_violations")},
        "strict_violation_count": len(adm["strict_violations"]),
        "sub4_violation_count": len(adm["sub4_violations"]),
        "envelope": {"t": env.t, "lower": env.lower, "upper": env.upper, "bound_ok": env.bound_ok,
                     "violations": env.violations},
        "closed_form_envelope": None if env_limit is None else {
            "t": env_limit.t, "lower": env_limit.lower, "upper": env_limit.upper,
            "bound_ok": env_limit.bound_ok, "violations": env_limit.violations},
    }
    io.write_report(out / "subsolution_report.json", "subsolution", body)
    print(f"alpha={p.alpha} nx={p.nx} T={p.T} mass_drift={body['mass_drift']:.3g} "
          f"sub4_ok={adm['sub4_ok']} envelope_bound_ok={env.bound_ok} "
          f"closed_form_envelope_bound_ok={None if env_limit is None else env_limit.bound_ok}")
    return EXIT_OK


# -------------------------------------------------------------------- mix


def cmd_mix(args):
    if args.config:
        config, opts = io.load_config(args.config)
    else:
        config, opts = ci.RunConfig(), dict(io.OUTPUT_DEFAULTS)
    if args.max_iters is not None:
        if args.max_iters < 0:
            raise io.InputError("max-iters must be nonnegative")
        config.max_iters = args.max_iters
    if args.seed is not None:
        config.seed = args.seed
    out = _outdir(args.out or opts["output.dir"])
    every = opts["output.snapshot_every"]

    def callback(k, field, step):
        if every and (k + 1) % every == 0:
            io.write_field(field, out / f"snapshot_{k + 1:04d}.csv")

    if opts["output.export_initial"] or config.max_iters == 0:
        io.write_field(ci.initial_field(config), out / "initial.csv")
    try:
        field, report = ci.run(config, callback)
    except ci.DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    if opts["output.export_final"]:
        io.write_field(field, out / "final.csv")
    if config.domain == "box":
        profile = sub.entropy_solve(config.alpha, config.profile_nx, config.T, nsnap=4 * config.nt + 1)
        cg = ver.coarse_grain(field, 8 * field.grid.spacing[0])
        report.coarse_grained_error = ver.compare_to_profile(cg, profile)
    body = {"config": _config_dict(config), "report": report.to_dict(timing=args.timing)}
    io.write_report(out / "mix_report.json", "mix", body)
    print(f"gap {report.gap[0]:.6g} -> {report.gap[-1]:.6g} in {len(report.gap) - 1} steps ({report.stopped})")
    return EXIT_OK


def _config_dict(config):
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


# ----------------------------------------------------------------- verify


def cmd_verify(args):
    if args.sequence:
        seq = [io.read_field(p) for p in args.sequence]
        if not args.limit:
            raise io.InputError("sequence mode needs --limit")
        limit = io.read_field(args.limit)
        if any(f.grid != limit.grid for f in seq):
            raise io.InputError("sequence fields must share the limit's grid")
        tests = [t(*limit.grid.mesh())[0] for t in ver.default_tests(limit.grid).of("interior")]
        body = ver.divcurl_stability(seq, limit, tests)
        io.write_report(_outdir(args.out) / "divcurl_report.json", "divcurl", body)
        print(json.dumps(io._clean(body)))
        return EXIT_OK
    if not args.snapshot:
        raise io.InputError("verify needs a snapshot or --sequence")
    field = io.read_field(args.snapshot)
    params = geo.HullParams(args.gamma)
    inside = geo.in_closed_hull(field.z, params)
    res = ver.field_residuals(field)
    body = {
        "snapshot": str(args.snapshot),
        "hull_violations": int(np.sum(~inside)),
        "residuals": res.to_dict(),
        "ok": bool(inside.all() and res.ok),
    }
    io.write_report(_outdir(args.out) / "verify_report.json", "verify", body)
    print(f"hull_violations={body['hull_violations']} residuals_ok={res.ok}")
    return EXIT_OK if body["ok"] else 1


# ------------------------------------------------------------------- main


def build_parser():
    p = _Parser(prog="ipmrelax", description="Relaxed porous-media flow: hull, waves, subsolutions, mixing.")
    sp = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    h = sp.add_parser("hull", help="hull membership of states")
    h.add_argument("--rho", default="0")
    h.add_argument("--u", default="0,0")
    h.add_argument("--m", default="0,0")
    h.add_argument("--gamma", type=float)
    h.add_argument("--shift", action="store_true", help="states are unshifted box fluxes")
    h.add_argument("--csv", help="CSV of states with columns rho,u1,u2,m1,m2")
    h.add_argument("-v", "--verbose", action="store_true")
    h.set_defaults(func=cmd_hull)

    w = sp.add_parser("wave", help="localized wave frequency sweep")
    w.add_argument("--zbar", required=True)
    w.add_argument("--j", default="8,16,32")
    w.add_argument("--grid", default="32,128,32", help="nx,ny,nt")
    w.add_argument("--lengths", default="4.8,4.8,4.8")
    w.add_argument("--center")
    w.add_argument("--radius", type=float, default=2.0)
    w.add_argument("--snapshot", action="store_true")
    w.add_argument("--out")
    w.set_defaults(func=cmd_wave)

    s = sp.add_parser("subsolution", help="entropy profile and admissibility")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--nx", type=int, default=400)
    s.add_argument("--T", type=float, default=0.4)
    s.add_argument("--cfl", type=float, default=0.95)
    s.add_argument("--nsnap", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_subsolution)

    m = sp.add_parser("mix", help="convex-integration run")
    m.add_argument("--config")
    m.add_argument("--max-iters", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--out")
    m.add_argument("--timing", action="store_true", help="include wall times in the report")
    m.set_defaults(func=cmd_mix)

    v = sp.add_parser("verify", help="check stored snapshots")
    v.add_argument("snapshot", nargs="?")
    v.add_argument("--gamma", type=float)
    v.add_argument("--sequence", nargs="+")
    v.add_argument("--limit")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except wv.ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except io.InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
