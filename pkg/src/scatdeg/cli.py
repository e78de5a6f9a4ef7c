"""Command-line frontend.

Subcommands: scatter | degree | scan | deflect | hill | itinerary | trajfan.
Global flags: --config PATH (potential JSON), --out PATH, --tol FLOAT,
--seed INT, --threads INT (env SCATDEG_THREADS as fallback).

Numbers are serialized with 17 significant digits, CSV uses '.' decimals,
',' separators and LF line endings, so identical configs and seeds produce
byte-identical outputs.

Exit codes: 0 success, 2 validation/config error, 3 dynamics failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import degree as degree_mod
from . import scattering as scat_mod
from .dynamics import IntegratorConfig
from .errors import ConfigError, ScatDegError
from .geom import angle_of, rot90, unit
from .hill import hill_analysis
from .potential import load_model, virial_radius
from .symbolic import Itinerary, check_nonshadowing, effective_radii, realize_itinerary

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DYNAMICS = 3


def fmt(x) -> str:
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(payload: dict, out_path) -> None:
    text = json.dumps(_jsonable(payload), indent=2) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _parse_range(spec: str, name: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{name} must be min:max:count, got {spec!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    if count < 2:
        raise ConfigError(f"{name}: count must be >= 2")
    if not hi > lo:
        raise ConfigError(f"{name}: max must exceed min")
    return np.linspace(lo, hi, count)


def _parse_theta(spec: str, dim: int) -> np.ndarray:
    parts = spec.split(",")
    if len(parts) == 1:
        if dim != 2:
            raise ConfigError("an angle theta requires a planar model")
        a = float(parts[0])
        return np.array([math.cos(a), math.sin(a)])
    vec = np.array([float(p) for p in parts])
    if vec.shape[0] != dim:
        raise ConfigError(f"theta has {vec.shape[0]} components, model is {dim}-d")
    return unit(vec)


def _scatter_config(args) -> scat_mod.ScatterConfig:
    integ = IntegratorConfig()
    if args.tol is not None:
        integ = replace(integ, rtol=args.tol, atol=args.tol * 1e-2)
    return scat_mod.ScatterConfig(integrator=integ, threads=args.threads)


def cmd_scatter(args) -> int:
    model = load_model(args.config)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    theta = _parse_theta(args.theta, model.dimension)
    b_values = _parse_range(args.b_range, "--b-range")
    cfg = _scatter_config(args)
    virial = virial_radius(model, args.energy)
    records = [scat_mod.scatter_one(model, args.energy, theta, float(b), virial, cfg)
               for b in b_values]
    out = args.out or "scatter.csv"
    scat_mod.records_to_csv(records, out)
    return EXIT_OK


def cmd_degree(args) -> int:
    model = load_model(args.config)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    cfg = _scatter_config(args)
    theta = _parse_theta(args.theta, model.dimension) if args.theta else None
    payload: dict = {"E": args.energy}
    if model.dimension == 3:
        est = degree_mod.degree_sphere(model, args.energy, theta,
                                       mesh_level=args.mesh_level, cfg=cfg)
    elif model.is_central and model.terms:
        est = degree_mod.degree_winding(model, args.energy, theta, cfg=cfg)
        quad = degree_mod.degree_central(model, args.energy)
        if quad.value != est.value:
            raise ScatDegError(
                f"winding degree {est.value} disagrees with quadrature {quad.value}")
        payload["cross_check"] = {"method": quad.method, "value": quad.value,
                                  "residual": quad.residual}
    else:
        est = degree_mod.degree_winding(model, args.energy, theta, cfg=cfg)
    payload.update({
        "method": est.method,
        "value": est.value,
        "residual": est.residual,
        "theta": list(est.theta_used),
        "samples": est.samples,
        "refinement_level": est.refinement_level,
    })
    _write_json(payload, args.out)
    return EXIT_OK


def cmd_scan(args) -> int:
    model = load_model(args.config)
    energies = _parse_range(args.e_range, "--e-range") if args.e_range \
        else np.array([args.energy])
    if np.any(energies <= 0.0):
        raise ConfigError("energies must be positive")
    cfg = _scatter_config(args)
    plan = scat_mod.SamplePlan(seed=args.seed)
    report = scat_mod.trapping_scan(model, energies, plan, cfg)
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_deflect(args) -> int:
    model = load_model(args.config)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    if args.l == 0.0:
        raise ConfigError("--l must be nonzero")
    res = degree_mod.deflection_quadrature(model, args.energy, args.l)
    _write_json({
        "E": res.E, "l": res.l, "r_min": res.r_min,
        "delta_phi": res.delta_phi, "deflection": res.deflection,
        "converged": res.converged,
    }, args.out)
    return EXIT_OK


def cmd_hill(args) -> int:
    model = load_model(args.config)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    h = hill_analysis(model, args.energy, resolution=args.resolution)
    _write_json({
        "E": h.energy,
        "classification": h.classification,
        "n_boundary_loops": len(h.boundary_loops),
        "n_components": len(h.components),
        "resolution": h.resolution,
        "bbox": list(h.bbox),
    }, args.out)
    return EXIT_OK


def cmd_itinerary(args) -> int:
    model = load_model(args.config, allow_multi_singular=True)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    try:
        seq = tuple(int(s) for s in args.sequence.split(","))
    except ValueError as exc:
        raise ConfigError(f"--sequence: {exc}") from exc
    radii = effective_radii(model)
    centers = tuple(t.center for t in model.terms)
    itin = Itinerary(sequence=seq, centers=centers, radii=radii)
    ok, violation = check_nonshadowing(centers, radii)
    if not ok:
        raise ConfigError(f"supports are shadowing: line meets disks {violation}")
    cfg = _scatter_config(args)
    witness = realize_itinerary(model, args.energy, itin, cfg=cfg)
    _write_json({
        "E": witness.E,
        "sequence": list(seq),
        "b": witness.b,
        "theta": list(witness.theta),
        "visit_log": witness.visit_log,
        "bracket": [witness.bracket[0], witness.bracket[1]],
        "bracket_width": witness.bracket_width,
    }, args.out)
    return EXIT_OK


def cmd_trajfan(args) -> int:
    model = load_model(args.config)
    if args.energy <= 0.0:
        raise ConfigError("--energy must be positive")
    theta = _parse_theta(args.theta, model.dimension)
    b_values = _parse_range(args.b_range, "--b-range")
    cfg = _scatter_config(args)
    virial = virial_radius(model, args.energy)
    out = args.out or "trajfan.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = model.dimension
        w.writerow(["traj_id", "b", "t"] + [f"q{i+1}" for i in range(dim)])
        for tid, b in enumerate(b_values):
            rec = scat_mod.scatter_one(model, args.energy, theta, float(b),
                                       virial, cfg, keep_trajectory=True)
            if rec.trajectory is None:
                continue
            traj = rec.trajectory
            for i in range(len(traj.t)):
                w.writerow([str(tid), fmt(b), fmt(traj.t[i])]
                           + [fmt(x) for x in traj.q[i]])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scatdeg",
        description="Topological degree of classical potential scattering.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, energy=True):
        sp.add_argument("--config", required=True, help="potential config JSON")
        sp.add_argument("--out", default=None, help="output path (default stdout/CWD)")
        sp.add_argument("--tol", type=float, default=None, help="integrator rtol")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int,
                        default=int(os.environ.get("SCATDEG_THREADS", "1")))
        if energy:
            sp.add_argument("--energy", type=float, required=True)

    sp = sub.add_parser("scatter", help="CSV sweep of scattering records")
    common(sp)
    sp.add_argument("--theta", default="0", help="angle (d=2) or comma vector")
    sp.add_argument("--b-range", required=True, help="min:max:count")
    sp.set_defaults(fn=cmd_scatter)

    sp = sub.add_parser("degree", help="topological degree estimate as JSON")
    common(sp)
    sp.add_argument("--theta", default=None)
    sp.add_argument("--mesh-level", type=int, default=3)
    sp.set_defaults(fn=cmd_degree)

    sp = sub.add_parser("scan", help="trapping scan over energies as JSON")
    common(sp, energy=False)
    sp.add_argument("--energy", type=float, default=None)
    sp.add_argument("--e-range", default=None, help="min:max:count")
    sp.set_defaults(fn=cmd_scan)

    sp = sub.add_parser("deflect", help="central deflection quadrature as JSON")
    common(sp)
    sp.add_argument("--l", type=float, required=True, help="angular momentum")
    sp.set_defaults(fn=cmd_deflect)

    sp = sub.add_parser("hill", help="planar Hill-region classification as JSON")
    common(sp)
    sp.add_argument("--resolution", type=int, default=512)
    sp.set_defaults(fn=cmd_hill)

    sp = sub.add_parser("itinerary", help="realize a visit itinerary as JSON")
    common(sp)
    sp.add_argument("--sequence", required=True, help="comma list, e.g. 1,2,1,3")
    sp.set_defaults(fn=cmd_itinerary)

    sp = sub.add_parser("trajfan", help="CSV of trajectory polylines for a b sweep")
    common(sp)
    sp.add_argument("--theta", default="0")
    sp.add_argument("--b-range", required=True, help="min:max:count")
    sp.set_defaults(fn=cmd_trajfan)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        if getattr(args, "command", None) == "scan" and not (args.e_range or args.energy):
            raise ConfigError("scan requires --energy or --e-range")
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScatDegError as exc:
        print(f"dynamics error: {exc}", file=sys.stderr)
        return EXIT_DYNAMICS


if __name__ == "__main__":
    sys.exit(main())
