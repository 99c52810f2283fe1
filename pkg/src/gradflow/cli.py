"""Command-line front end: reproducible runs with CSV/JSON outputs.

Exit codes: 0 success, 2 invalid input, 3 failed acceptance check (--check).
Output files are written atomically (temp file + rename) so partial runs
never leave truncated artifacts behind.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import diagnostics, experiments
from .dynamics import assemble_generator, solve_trajectory
from .functionals import fisher
from .mesh import (Mesh, MeshError, build_cartesian_mesh, build_interval_mesh,
                   build_voronoi_mesh, Domain, isotropy_defect,
                   regularity_report)
from .reference import (discretize_reference, face_weights,
                        initial_measure_from_token, potential_from_token)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gradflow-")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv_atomic(path: str, writer) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               prefix=".gradflow-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_sites(path: str) -> np.ndarray:
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x"):
                continue
            rows.append([float(v) for v in line.replace(",", " ").split()])
    if not rows:
        raise ValueError(f"no sites found in {path}")
    return np.asarray(rows, dtype=float)


def _mesh_from_args(args) -> Mesh:
    if getattr(args, "mesh", None):
        return Mesh.read(args.mesh)
    kind = getattr(args, "kind", None)
    if kind == "uniform1d":
        return build_interval_mesh(args.n)
    if kind == "cartesian":
        nx = args.nx or args.n
        ny = args.ny or args.n
        return build_cartesian_mesh(nx, ny)
    if kind == "voronoi":
        if not args.sites:
            raise ValueError("voronoi meshes need --sites FILE")
        sites = _load_sites(args.sites)
        domain = (Domain.rectangle(0.0, 0.0, 1.0, 1.0) if sites.ndim == 2
                  and sites.shape[1] == 2 else Domain.interval(0.0, 1.0))
        return build_voronoi_mesh(sites, domain)
    raise ValueError("specify --mesh FILE or --kind with its parameters")


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_mesh(args) -> int:
    mesh = _mesh_from_args(args)
    out = _out_dir(args)
    mesh.write(os.path.join(out, "mesh.txt"))
    report = regularity_report(mesh)
    if args.zeta_min is not None and report.zeta < args.zeta_min:
        # quality shortfall is reported, never a construction error
        print(f"warning: zeta = {report.zeta:.6g} below the requested "
              f"threshold {args.zeta_min:.6g}", file=sys.stderr)
    potential = potential_from_token(args.potential, mesh.dim)
    pi = discretize_reference(mesh, potential)
    weights = face_weights(mesh, potential, args.mean)
    defects = isotropy_defect(mesh, weights, pi)

    def write_report(path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("zeta_inner,zeta_area,zeta,mesh_size,cells,faces\n")
            fh.write(",".join(repr(v) for v in
                              (report.zeta_inner, report.zeta_area, report.zeta,
                               report.mesh_size))
                     + f",{mesh.n_cells},{mesh.n_faces}\n")

    def write_isotropy(path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("cell,isotropy_defect\n")
            for k, d in enumerate(defects):
                fh.write(f"{k},{float(d)!r}\n")

    _write_csv_atomic(os.path.join(out, "regularity.csv"), write_report)
    _write_csv_atomic(os.path.join(out, "isotropy.csv"), write_isotropy)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "mesh", "cells": mesh.n_cells, "faces": mesh.n_faces,
                 "zeta": report.zeta, "mesh_size": report.mesh_size,
                 "sup_isotropy_defect": float(defects.max())})
    print(f"mesh: {mesh.n_cells} cells, {mesh.n_faces} faces, "
          f"zeta={report.zeta:.6g}, [T]={report.mesh_size:.6g}")
    return 0


def _setup_flow(args, mesh: Mesh):
    potential = potential_from_token(args.potential, mesh.dim)
    pi = discretize_reference(mesh, potential)
    weights = face_weights(mesh, potential, args.mean)
    generator = assemble_generator(mesh, weights, pi)
    m0 = initial_measure_from_token(args.m0, mesh, pi)
    return potential, pi, weights, generator, m0


def cmd_solve(args) -> int:
    mesh = _mesh_from_args(args)
    _, _, _, generator, m0 = _setup_flow(args, mesh)
    trajectory = solve_trajectory(m0, args.T, args.M, generator,
                                  scheme=args.scheme)
    out = _out_dir(args)
    _write_csv_atomic(os.path.join(out, "trajectory.csv"),
                      trajectory.export_csv)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "solve", "scheme": trajectory.scheme,
                 "T": args.T, "steps": args.M, "cells": mesh.n_cells})
    print(f"solve: {trajectory.scheme}, {args.M} steps to T={args.T}")
    return 0


def cmd_edi(args) -> int:
    mesh = _mesh_from_args(args)
    potential = potential_from_token(args.potential, mesh.dim)
    pi = discretize_reference(mesh, potential)
    m0 = initial_measure_from_token(args.m0, mesh, pi)
    audit = experiments.edi_audit(mesh, potential, m0, args.T, args.M,
                                  mean_kind=args.mean)
    coarse = experiments.edi_audit(mesh, potential, m0, args.T, args.M // 2,
                                   mean_kind=args.mean)
    tol = max(abs(coarse.residual - audit.residual) / 7.5,
              64.0 * np.finfo(float).eps * max(audit.entropy_start, 1.0))
    passed = (audit.residual >= -tol) and (abs(audit.residual) <= tol)
    out = _out_dir(args)

    def write(path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("H0,HT,action_integral,fisher_integral,residual,tol\n")
            fh.write(",".join(repr(v) for v in
                              (audit.entropy_start, audit.entropy_end,
                               audit.action_integral, audit.fisher_integral,
                               audit.residual, tol)) + "\n")

    _write_csv_atomic(os.path.join(out, "edi.csv"), write)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "edi", **audit.summary(), "tol": tol,
                 "pass": bool(passed)})
    print(f"edi: residual={audit.residual:.3e} (tol {tol:.3e}) "
          f"H0={audit.entropy_start:.6g}")
    if args.check and not passed:
        return 3
    return 0


def cmd_gamma(args) -> int:
    family = experiments.family_from_token(args.family, seed=args.seed)
    out = _out_dir(args)
    if args.mode == "affine":
        dim = 1 if args.family.startswith("uniform1d") else 2
        z = [float(v) for v in args.z.split(",")] if args.z else [0.5] * dim
        xi = [float(v) for v in args.xi.split(",")] if args.xi else [1.0] * dim
        study = experiments.gamma_affine_minimization_study(
            family, z, xi, args.eps)
        checks = all(r.error <= r.extras["boundary_layer"] + 1e-12 and
                     r.extras["harmonicity_residual"] <= 1e-11
                     for r in study.rows)
    else:
        dim = 1 if args.family.startswith("uniform1d") else 2
        potential = potential_from_token(args.potential, dim)
        phi, grad = _phi_from_token(args.phi, dim)
        study = experiments.gamma_energy_study(family, phi, potential,
                                               m_rule=args.m_rule, grad=grad)
        errors = study.column("error")
        checks = bool(np.all(np.diff(errors) < 0.0))
    _write_csv_atomic(os.path.join(out, "gamma.csv"), study.to_csv)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "gamma", **study.summary(), "pass": bool(checks)})
    print(f"gamma[{args.mode}]: {len(study.rows)} rows, "
          f"final error {study.rows[-1].error:.3e}")
    if args.check and not checks:
        return 3
    return 0


def _phi_from_token(token: str, dim: int):
    name, _, arg = token.partition(":")
    if name == "coordinate":
        axis = int(arg) if arg else 0
        if dim == 1:
            return (lambda x: float(np.atleast_1d(x)[0])), (lambda x: 1.0)
        e = np.eye(dim)[axis]
        return (lambda x: float(np.asarray(x) @ e)), (lambda x: e)
    if name == "cosine":
        freq = float(arg) if arg else 1.0
        if dim == 1:
            return (lambda x: math.cos(freq * math.pi * float(np.atleast_1d(x)[0])),
                    lambda x: -freq * math.pi * math.sin(
                        freq * math.pi * float(np.atleast_1d(x)[0])))
        return (lambda x: math.cos(freq * math.pi * float(np.asarray(x)[0])),
                lambda x: np.array([-freq * math.pi * math.sin(
                    freq * math.pi * float(np.asarray(x)[0])), 0.0]))
    raise ValueError(f"unknown test function {token!r}")


def cmd_converge(args) -> int:
    family = experiments.family_from_token(args.family, seed=args.seed)
    dim = 1 if args.family.startswith("uniform1d") else 2
    potential = potential_from_token(args.potential, dim)
    study = experiments.evolutionary_convergence_study(
        family, potential, args.rho0, args.T, mean_kind=args.mean)
    errors = study.column("error")
    orders = study.column("order")[1:]
    passed = bool(np.all(np.diff(errors) < 0.0) and np.all(orders >= 1.0))
    out = _out_dir(args)
    _write_csv_atomic(os.path.join(out, "converge.csv"), study.to_csv)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "converge", **study.summary(), "pass": passed})
    print(f"converge: final sup error {study.rows[-1].error:.3e}, "
          f"orders {np.array2string(orders, precision=2)}")
    if args.check and not passed:
        return 3
    return 0


def cmd_diagnose(args) -> int:
    mesh = _mesh_from_args(args)
    potential, pi, weights, generator, m0 = _setup_flow(args, mesh)
    report = diagnostics.condition_report(
        mesh, m0, pi,
        cube_centers=[mesh.sites[0]],
        eps_list=[0.2, 0.1, 0.05])
    constants = diagnostics.path_constants(mesh)
    out = _out_dir(args)
    _write_csv_atomic(os.path.join(out, "condition.csv"), report.to_csv)

    def write_paths(path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("c_count,c_length,pairs\n")
            fh.write(f"{constants.c_count!r},{constants.c_length!r},"
                     f"{constants.n_pairs}\n")

    _write_csv_atomic(os.path.join(out, "paths.csv"), write_paths)
    hol = diagnostics.l2_holder_modulus(
        mesh, np.asarray(m0.masses) / pi.masses,
        np.full(mesh.dim, 0.5 * mesh.size()), m0, pi, kind=args.mean)

    def write_holder(path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("value,bound,ratio\n")
            fh.write(f"{hol.value!r},{hol.bound!r},{hol.ratio!r}\n")

    _write_csv_atomic(os.path.join(out, "holder.csv"), write_holder)
    _write_json(os.path.join(out, "summary.json"),
                {"command": "diagnose", "k_lower": report.k_lower,
                 "k_upper": report.k_upper,
                 "neighbour_osc": report.neighbour_osc,
                 "c_count": constants.c_count, "c_length": constants.c_length,
                 "holder_ratio": hol.ratio})
    print(f"diagnose: k in [{report.k_lower:.4g}, {report.k_upper:.4g}], "
          f"osc={report.neighbour_osc:.4g}, paths ({constants.c_count:.3g}, "
          f"{constants.c_length:.3g})")
    return 0


def _add_mesh_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mesh", help="mesh file to load")
    p.add_argument("--kind", choices=["uniform1d", "cartesian", "voronoi"])
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--sites", help="CSV of site coordinates (voronoi)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--potential", default="zero")
    p.add_argument("--mean", default="logarithmic")
    p.add_argument("--out", default="gradflow-out")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--check", action="store_true",
                   help="exit 3 when the acceptance rule fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build a mesh and report its quality")
    _add_mesh_options(p)
    _add_common(p)
    p.add_argument("--zeta-min", dest="zeta_min", type=float,
                   help="warn (never fail) when the measured zeta drops below")
    p.set_defaults(fn=cmd_mesh)

    p = sub.add_parser("solve", help="integrate the flow, export trajectory")
    _add_mesh_options(p)
    _add_common(p)
    p.add_argument("--m0", default="stationary")
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--M", type=int, default=256)
    p.add_argument("--scheme", default="auto",
                   choices=["auto", "implicit_euler", "crank_nicolson",
                            "exact_dense"])
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("edi", help="audit the entropy balance")
    _add_mesh_options(p)
    _add_common(p)
    p.add_argument("--m0", default="blend:cosine:0.9")
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--M", type=int, default=256)
    p.set_defaults(fn=cmd_edi)

    p = sub.add_parser("gamma", help="energy or affine minimization study")
    _add_common(p)
    p.add_argument("--family", default="uniform1d:16..256")
    p.add_argument("--mode", default="energy", choices=["energy", "affine"])
    p.add_argument("--phi", default="cosine")
    p.add_argument("--m-rule", dest="m_rule", default="stationary",
                   choices=["stationary"])
    p.add_argument("--z")
    p.add_argument("--xi")
    p.add_argument("--eps", type=float, default=0.5)
    p.set_defaults(fn=cmd_gamma)

    p = sub.add_parser("converge", help="evolutionary convergence study")
    _add_common(p)
    p.add_argument("--family", default="uniform1d:16..256")
    p.add_argument("--rho0", default="cosine")
    p.add_argument("--T", type=float, default=0.1)
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("diagnose", help="condition, path, and Holder reports")
    _add_mesh_options(p)
    _add_common(p)
    p.add_argument("--m0", default="blend:cosine:0.9")
    p.set_defaults(fn=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (MeshError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
