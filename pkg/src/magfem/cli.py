"""Command-line interface: solve, study, material-check, mesh tools.

Run configurations are INI-style files with sections [problem], [mesh],
[material.<region>], [source], [map], and [newton]; see the README for
the full key list. Exit codes: 0 success, 1 usage/config error, 2 solver
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from . import assembly, geometry, harness, materials, solver
from .mesh import MeshParseError, generate_unit_square, parse_mesh, refine_uniform, serialize_mesh

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


def _build_law(section):
    kind = section.get("law")
    if kind == "brauer":
        params = materials.brauer_build(
            k1=section.getfloat("k1", 3.8),
            k2=section.getfloat("k2", 2.17),
            k3=section.getfloat("k3", 396.2),
            nu0=section.getfloat("nu0", materials.NU0),
        )
        return materials.BrauerLaw(params)
    if kind == "linear":
        return materials.LinearIsotropic(section.getfloat("nu", materials.NU0))
    if kind == "permanent_magnet":
        return materials.PermanentMagnet(
            section.getfloat("nu0", materials.NU0),
            (section.getfloat("mx", 0.0), section.getfloat("my", 0.0)),
        )
    if kind == "anisotropic":
        n11 = section.getfloat("n11")
        n12 = section.getfloat("n12", 0.0)
        n22 = section.getfloat("n22")
        return materials.AnisotropicLinear([[n11, n12], [n12, n22]])
    raise ConfigError(f"unknown material law {kind!r}")


def _build_map(section):
    name = section.get("name", "identity")
    if name == "identity":
        return geometry.identity_map()
    if name == "affine":
        matrix = [
            [section.getfloat("a11"), section.getfloat("a12", 0.0)],
            [section.getfloat("a21", 0.0), section.getfloat("a22")],
        ]
        shift = (section.getfloat("shift_x", 0.0), section.getfloat("shift_y", 0.0))
        return geometry.affine_map(matrix, shift)
    if name == "quarter_annulus":
        return geometry.quarter_annulus_map(
            section.getfloat("r_inner"), section.getfloat("r_outer")
        )
    raise ConfigError(f"unknown map {name!r}; choose from {geometry.BUILTIN_MAPS}")


def read_newton_config(parser):
    cfg = solver.NewtonConfig()
    if parser.has_section("newton"):
        s = parser["newton"]
        cg = solver.CGConfig(
            rel_tol=s.getfloat("cg_rel_tol", 1e-12),
            max_iter=s.getint("cg_max_iter", None) if s.get("cg_max_iter") else None,
            jacobi=s.getboolean("cg_jacobi", True),
        )
        cfg = solver.NewtonConfig(
            rho=s.getfloat("rho", cfg.rho),
            sigma=s.getfloat("sigma", cfg.sigma),
            tol_increment=s.getfloat("tol_increment", cfg.tol_increment),
            tol_residual=s.getfloat("tol_residual", cfg.tol_residual),
            max_iter=s.getint("max_iter", cfg.max_iter),
            max_backtracks=s.getint("max_backtracks", cfg.max_backtracks),
            cg=cg,
        )
    return cfg


def read_problem_config(path, mesh_file=None):
    """Build (Problem, NewtonConfig) from a run-config file."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)

    if mesh_file is not None:
        with open(mesh_file) as f:
            mesh = parse_mesh(f.read())
    elif parser.has_option("mesh", "unit_square_n"):
        mesh = generate_unit_square(parser.getint("mesh", "unit_square_n"))
    else:
        raise ConfigError("no mesh: pass --mesh or set [mesh] unit_square_n")

    if not parser.has_section("problem"):
        raise ConfigError("missing [problem] section")
    order = parser.getint("problem", "k", fallback=1)
    tags = frozenset(
        int(t) for t in parser.get("problem", "dirichlet_tags", fallback="1").split()
    )

    domain_map = _build_map(parser["map"]) if parser.has_section("map") else None

    laws = {}
    for name in parser.sections():
        if name.startswith("material."):
            region = int(name.split(".", 1)[1])
            law = _build_law(parser[name])
            if domain_map is not None:
                law = geometry.pullback_material(domain_map, law)
            laws[region] = law

    hs_field = None
    js_density = None
    if parser.has_section("source"):
        s = parser["source"]
        form = s.get("form", "none")
        if form == "js":
            if domain_map is not None:
                raise ConfigError("js sources are not supported with a domain map; use hs")
            js_density = {
                int(key.split(".", 1)[1]): float(value)
                for key, value in s.items()
                if key.startswith("region.")
            }
            if not js_density:
                raise ConfigError("js source needs region.<tag> entries")
        elif form == "hs":
            vec = np.array([s.getfloat("hs_x", 0.0), s.getfloat("hs_y", 0.0)])

            def constant_hs(x):
                return np.broadcast_to(vec, (len(np.atleast_2d(x)), 2)).copy()

            hs_field = constant_hs
            if domain_map is not None:
                hs_field = geometry.pullback_source(domain_map, constant_hs)
        elif form != "none":
            raise ConfigError(f"unknown source form {form!r}")

    problem = assembly.Problem(
        mesh=mesh,
        order=order,
        materials=laws,
        dirichlet_tags=tags,
        hs_field=hs_field,
        js_density=js_density,
    )
    return problem, read_newton_config(parser)


def _write_fields_csv(problem, coeffs, path):
    pts, b, h = assembly.fields_at_quadrature(problem, coeffs)
    ne, nq, _ = pts.shape
    with open(path, "w") as f:
        f.write("element,qpoint,x,y,bx,by,hx,hy\n")
        for e in range(ne):
            for q in range(nq):
                f.write(
                    f"{e},{q},{pts[e,q,0]:.12g},{pts[e,q,1]:.12g},"
                    f"{b[e,q,0]:.12g},{b[e,q,1]:.12g},{h[e,q,0]:.12g},{h[e,q,1]:.12g}\n"
                )


def _cmd_solve(args):
    problem, cfg = read_problem_config(args.config, mesh_file=args.mesh)
    coeffs, report = solver.newton_solve(problem, cfg=cfg)
    with open(args.out, "w") as f:
        f.write(report.to_json(config=cfg) + "\n")
    if args.fields:
        _write_fields_csv(problem, coeffs, args.fields)
    if not report.converged:
        print(f"solver did not converge: {report.failure}", file=sys.stderr)
        return EXIT_SOLVER
    print(
        f"converged in {report.n_iterations} iterations, "
        f"energy {report.final_energy:.12g}, telemetry in {args.out}"
    )
    return EXIT_OK


def _cmd_study(args):
    catalog = harness.builtin_benchmarks()
    if args.benchmark not in catalog:
        print(
            f"unknown benchmark {args.benchmark!r}; available: {sorted(catalog)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    benchmark = catalog[args.benchmark]
    cfg = solver.NewtonConfig()
    if args.config:
        parser = configparser.ConfigParser()
        with open(args.config) as f:
            parser.read_file(f)
        cfg = read_newton_config(parser)
    try:
        rows = harness.run_study(
            benchmark,
            cfg=cfg,
            order=args.degree,
            levels=args.levels,
            telemetry_dir=args.telemetry,
        )
    except harness.StudyError as exc:
        harness.write_study_csv(exc.rows, args.csv, aborted=str(exc))
        print(f"study aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    text = harness.write_study_csv(rows, args.csv)
    print(text, end="")
    return EXIT_OK


def _cmd_material_check(args):
    params = {}
    for item in args.params or []:
        if "=" not in item:
            raise ConfigError(f"--params entries must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key] = float(value)

    if args.material == "brauer":
        bp = materials.brauer_build(
            k1=params.get("k1", 3.8),
            k2=params.get("k2", 2.17),
            k3=params.get("k3", 396.2),
            nu0=params.get("nu0", materials.NU0),
        )
        law = materials.BrauerLaw(bp)
        print(f"s_star = {bp.s_star:.12g} T   a0 = {bp.a0:.12g}   a1 = {bp.a1:.12g}")
        res = brauer_c2_residuals(bp)
        print(
            "C2 matching residuals (relative): value %.3e  slope %.3e  curvature %.3e"
            % res
        )
        gamma_hat, l_hat, l2_hat = materials.certify_bounds(
            law, materials.radial_samples(2.0 * bp.s_star)
        )
        print(f"gamma = {law.gamma:.12g} (scan {gamma_hat:.12g})")
        print(f"L     = {law.lipschitz:.12g} (scan {l_hat:.12g})")
        print(f"L''   = {law.hess_lipschitz:.6g} (pair scan {l2_hat:.6g})")
        return EXIT_OK

    if args.material == "linear":
        law = materials.LinearIsotropic(params.get("nu", materials.NU0))
    elif args.material == "permanent_magnet":
        law = materials.PermanentMagnet(
            params.get("nu0", materials.NU0),
            (params.get("mx", 0.0), params.get("my", 0.0)),
        )
    elif args.material == "anisotropic":
        n12 = params.get("n12", 0.0)
        law = materials.AnisotropicLinear(
            [[params["n11"], n12], [n12, params["n22"]]]
        )
    else:
        print(f"unknown material {args.material!r}", file=sys.stderr)
        return EXIT_USAGE
    print(f"gamma = {law.gamma:.12g}")
    print(f"L     = {law.lipschitz:.12g}")
    print(f"L''   = {law.hess_lipschitz:.6g}")
    return EXIT_OK


def brauer_c2_residuals(bp):
    """Relative mismatch of value/slope/curvature across the threshold."""
    s = bp.s_star
    e = np.exp(bp.k2 * s * s)
    w_lo = bp.k1 / (2 * bp.k2) * e + 0.5 * bp.k3 * s * s
    d1_lo = s * (bp.k1 * e + bp.k3)
    d2_lo = bp.k1 * e * (1 + 2 * bp.k2 * s * s) + bp.k3
    w_hi = bp.a0 + bp.a1 * s + 0.5 * bp.nu0 * s * s
    d1_hi = bp.a1 + bp.nu0 * s
    d2_hi = bp.nu0
    return (
        abs(w_lo - w_hi) / abs(w_hi),
        abs(d1_lo - d1_hi) / abs(d1_hi),
        abs(d2_lo - d2_hi) / abs(d2_hi),
    )


def _cmd_mesh(args):
    if args.mesh_command == "gen":
        mesh = generate_unit_square(args.n)
        with open(args.out, "w") as f:
            f.write(serialize_mesh(mesh))
        print(f"wrote {mesh.num_triangles} triangles to {args.out}")
        return EXIT_OK
    with open(getattr(args, "in")) as f:
        mesh = parse_mesh(f.read())
    refined = refine_uniform(mesh)
    with open(args.out, "w") as f:
        f.write(serialize_mesh(refined))
    print(f"refined {mesh.num_triangles} -> {refined.num_triangles} triangles")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="magfem", description="2D nonlinear magnetostatics solver and benchmarks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a configured problem")
    p.add_argument("--config", required=True)
    p.add_argument("--mesh", help="mesh file (overrides [mesh] in the config)")
    p.add_argument("--out", required=True, help="telemetry JSON path")
    p.add_argument("--fields", help="optional quadrature-point field dump CSV")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("study", help="run a built-in benchmark refinement study")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--degree", type=int, default=None, help="curl order k")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--config", help="config file providing [newton] settings")
    p.add_argument("--csv", required=True)
    p.add_argument("--telemetry", help="directory for per-level telemetry JSON")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("material-check", help="print material constants")
    p.add_argument("--material", required=True)
    p.add_argument("--params", nargs="*", metavar="key=value")
    p.set_defaults(func=_cmd_material_check)

    p = sub.add_parser("mesh", help="mesh generation and refinement")
    msub = p.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="structured unit-square mesh")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_mesh)
    r = msub.add_parser("refine", help="uniform refinement of a mesh file")
    r.add_argument("--in", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_mesh)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (MeshParseError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except solver.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
