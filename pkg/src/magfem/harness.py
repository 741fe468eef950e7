"""Built-in benchmarks, refinement studies, and convergence-rate estimation.

A benchmark bundles geometry, region materials, source, boundary
conditions, and an error mode. Studies solve the benchmark on a hierarchy
of uniformly refined meshes and report, per level, the element count,
free dofs, Newton iteration count, and relative L2 errors of the flux b
and field h together with their estimated orders of convergence. Error
references are, depending on the mode, the manufactured exact solution,
the next-finer solution, or the next-degree solution; error integration
always uses a rule two degrees above the assembly rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import assembly, femspace, geometry, solver
from .materials import NU0, AnisotropicLinear, LinearIsotropic, MaterialLaw, PermanentMagnet, brauer_reference
from .mesh import Mesh, child_reference_map, generate_unit_square, refine_uniform, with_region_tags
from .quadrature import rule_for_degree

ERROR_MODES = ("manufactured-exact", "successive-refinement", "successive-degree")


class StudyError(RuntimeError):
    """A level failed to solve; partial rows are attached."""

    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A named problem family over a refinement hierarchy."""

    name: str
    base_mesh: Mesh
    materials: dict
    dirichlet_tags: frozenset
    error_mode: str
    order: int = 1
    levels: int = 3
    hs_field: object = None
    js_density: object = None
    exact_potential: object = None
    exact_flux: object = None
    domain_map: object = None

    def __post_init__(self):
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"unknown error mode {self.error_mode!r}")
        if self.error_mode == "manufactured-exact" and self.exact_flux is None:
            raise ValueError("manufactured mode requires the exact flux field")


@dataclass
class StudyRow:
    level: int
    ne: int
    dof: int
    iter: int
    err_b: float
    eoc_b: float  # None on the first row
    err_h: float
    eoc_h: float  # None on the first row


def compute_eoc(errors, ratio=2.0):
    """log-ratio convergence orders of a positive error sequence.

    eoc_i = log(err_{i-1} / err_i) / log(ratio); one value per
    consecutive pair, so the result is one shorter than the input.
    """
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("need at least two errors")
    if any(e <= 0.0 for e in errors):
        raise ValueError("errors must be positive")
    if ratio <= 1.0:
        raise ValueError("refinement ratio must exceed 1")
    return [
        math.log(errors[i - 1] / errors[i]) / math.log(ratio)
        for i in range(1, len(errors))
    ]


def mesh_at_level(benchmark, level):
    mesh = benchmark.base_mesh
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def problem_at_level(benchmark, level, order=None):
    return assembly.Problem(
        mesh=mesh_at_level(benchmark, level),
        order=benchmark.order if order is None else order,
        materials=benchmark.materials,
        dirichlet_tags=benchmark.dirichlet_tags,
        hs_field=benchmark.hs_field,
        js_density=benchmark.js_density,
    )


def _l2_norm(mesh, rule, values):
    sq = values * values
    if sq.ndim == 3:
        sq = sq.sum(axis=2)
    areas = np.abs(mesh.signed_areas())
    return float(np.sqrt((sq @ rule.weights) @ areas))


def _error_rule(order):
    return rule_for_degree(2 * order + 2)


def _eval_on_parent(coarse_problem, coarse_coeffs, fine_ne, rule):
    """Coarse solution's flux at the fine mesh's quadrature points.

    Relies on refine_uniform's child layout: fine element 4t+c sits in
    parent t under the fixed affine embedding of child c.
    """
    nq = len(rule)
    ref = np.broadcast_to(rule.points[None], (fine_ne, nq, 2)).copy()
    child = np.arange(fine_ne) % 4
    for c in range(4):
        rows = child == c
        M, off = child_reference_map(c)
        ref[rows] = ref[rows] @ M.T + off
    parents = np.repeat(np.arange(fine_ne) // 4, nq)
    b = femspace.eval_curl_batch(
        coarse_problem.space, coarse_coeffs, parents, ref.reshape(-1, 2)
    )
    return b.reshape(fine_ne, nq, 2)


def _h_from_b(problem, pts, b):
    return assembly._field_from_b(problem, pts, b)


def solve_level(benchmark, level, cfg, order=None):
    """Build and solve one refinement level; returns (problem, coeffs, report)."""
    problem = problem_at_level(benchmark, level, order=order)
    coeffs, report = solver.newton_solve(problem, cfg=cfg)
    if not report.converged:
        raise solver.SolverError(
            f"{benchmark.name} level {level} did not converge ({report.failure})"
        )
    return problem, coeffs, report


def run_study(benchmark, cfg=None, order=None, levels=None, telemetry_dir=None):
    """Solve a refinement hierarchy and tabulate errors and rates.

    In successive-refinement mode one extra level is solved internally so
    the finest reported row has an error reference. A solver failure
    raises StudyError with the completed rows attached.
    """
    cfg = cfg or solver.NewtonConfig()
    order = benchmark.order if order is None else order
    levels = benchmark.levels if levels is None else levels
    if levels < 2:
        raise ValueError("a study needs at least two levels for rates")
    err_rule = _error_rule(order)

    rows = []
    try:
        if benchmark.error_mode == "manufactured-exact":
            results = [solve_level(benchmark, lv, cfg, order) for lv in range(levels)]
            errors = [
                _manufactured_errors(benchmark, problem, coeffs, err_rule)
                for problem, coeffs, _ in results
            ]
            _tabulate(rows, results, errors)
        elif benchmark.error_mode == "successive-refinement":
            results = [solve_level(benchmark, lv, cfg, order) for lv in range(levels + 1)]
            errors = []
            for lv in range(levels):
                coarse_p, coarse_c, _ = results[lv]
                fine_p, fine_c, _ = results[lv + 1]
                errors.append(_refinement_errors(coarse_p, coarse_c, fine_p, fine_c, err_rule))
            _tabulate(rows, results[:levels], errors)
        else:  # successive-degree
            fine_rule = _error_rule(order + 1)
            results = []
            errors = []
            for lv in range(levels):
                problem, coeffs, report = solve_level(benchmark, lv, cfg, order)
                problem2, coeffs2, _ = solve_level(benchmark, lv, cfg, order + 1)
                results.append((problem, coeffs, report))
                errors.append(
                    _degree_errors(problem, coeffs, problem2, coeffs2, fine_rule)
                )
            _tabulate(rows, results, errors)
    except solver.SolverError as exc:
        raise StudyError(str(exc), rows) from exc

    if telemetry_dir is not None:
        import pathlib

        out = pathlib.Path(telemetry_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (problem, coeffs, report), row in zip(results, rows):
            path = out / f"{benchmark.name}_level{row.level}.json"
            path.write_text(report.to_json(config=cfg))
    return rows


def _tabulate(rows, results, errors):
    errs_b = [e[0] for e in errors]
    errs_h = [e[1] for e in errors]
    eoc_b = [None] + compute_eoc(errs_b)
    eoc_h = [None] + compute_eoc(errs_h)
    for lv, ((problem, coeffs, report), eb, eh, ob, oh) in enumerate(
        zip(results, errs_b, errs_h, eoc_b, eoc_h)
    ):
        rows.append(
            StudyRow(
                level=lv,
                ne=problem.mesh.num_triangles,
                dof=problem.space.n_free,
                iter=report.n_iterations,
                err_b=eb,
                eoc_b=ob,
                err_h=eh,
                eoc_h=oh,
            )
        )


def _manufactured_errors(benchmark, problem, coeffs, rule):
    pts, b_h, h_h = assembly.fields_at_quadrature(problem, coeffs, rule=rule)
    flat = pts.reshape(-1, 2)
    b_ex = np.asarray(benchmark.exact_flux(flat), float).reshape(b_h.shape)
    h_ex = _h_from_b(problem, pts, b_ex)
    mesh = problem.mesh
    err_b = _l2_norm(mesh, rule, b_h - b_ex) / _l2_norm(mesh, rule, b_ex)
    err_h = _l2_norm(mesh, rule, h_h - h_ex) / _l2_norm(mesh, rule, h_ex)
    return err_b, err_h


def _refinement_errors(coarse_p, coarse_c, fine_p, fine_c, rule):
    pts, b_fine, h_fine = assembly.fields_at_quadrature(fine_p, fine_c, rule=rule)
    b_coarse = _eval_on_parent(coarse_p, coarse_c, fine_p.mesh.num_triangles, rule)
    h_coarse = _h_from_b(fine_p, pts, b_coarse)
    mesh = fine_p.mesh
    err_b = _l2_norm(mesh, rule, b_coarse - b_fine) / _l2_norm(mesh, rule, b_fine)
    err_h = _l2_norm(mesh, rule, h_coarse - h_fine) / _l2_norm(mesh, rule, h_fine)
    return err_b, err_h


def _degree_errors(problem, coeffs, problem2, coeffs2, rule):
    pts, b_lo, h_lo = assembly.fields_at_quadrature(problem, coeffs, rule=rule)
    _, b_hi, h_hi = assembly.fields_at_quadrature(problem2, coeffs2, rule=rule)
    mesh = problem.mesh
    err_b = _l2_norm(mesh, rule, b_lo - b_hi) / _l2_norm(mesh, rule, b_hi)
    err_h = _l2_norm(mesh, rule, h_lo - h_hi) / _l2_norm(mesh, rule, h_hi)
    return err_b, err_h


def max_flux_magnitude(problem, coeffs):
    """Largest |b| over all quadrature points of the problem's rule."""
    b = assembly.curl_at_quadrature(problem, coeffs)
    return float(np.max(np.linalg.norm(b, axis=2)))


def write_study_csv(rows, path, aborted=None):
    """Study rows as CSV with the fixed column order."""
    lines = ["level,ne,dof,iter,err_b,eoc_b,err_h,eoc_h"]
    for r in rows:
        eoc_b = "" if r.eoc_b is None else f"{r.eoc_b:.6g}"
        eoc_h = "" if r.eoc_h is None else f"{r.eoc_h:.6g}"
        lines.append(
            f"{r.level},{r.ne},{r.dof},{r.iter},{r.err_b:.12g},{eoc_b},{r.err_h:.12g},{eoc_h}"
        )
    if aborted:
        lines.append(f"# aborted: {aborted}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return text


# -- built-in benchmark geometry ---------------------------------------------


def disc_mesh(rings, radius=1.0):
    """Hex-sector triangulation of a disc; 6 rings^2 elements.

    Ring i carries 6i equally spaced vertices on the circle of radius
    radius*i/rings, so the outer boundary is the inscribed 6*rings-gon.
    """
    if rings < 1:
        raise ValueError("rings must be positive")
    verts = [(0.0, 0.0)]
    index = {}
    for i in range(1, rings + 1):
        r = radius * i / rings
        for s in range(6):
            for j in range(i):
                index[(i, s, j)] = len(verts)
                theta = (np.pi / 3.0) * (s + j / i)
                verts.append((r * np.cos(theta), r * np.sin(theta)))

    def vid(i, s, j):
        if i == 0:
            return 0
        if j == i:
            return index[(i, (s + 1) % 6, 0)]
        return index[(i, s, j)]

    triangles = []
    for i in range(1, rings + 1):
        for s in range(6):
            for j in range(i):
                triangles.append((vid(i, s, j), vid(i, s, j + 1), vid(i - 1, s, j)))
            for j in range(i - 1):
                triangles.append((vid(i, s, j + 1), vid(i - 1, s, j + 1), vid(i - 1, s, j)))

    boundary = []
    for s in range(6):
        for j in range(rings):
            boundary.append((vid(rings, s, j), vid(rings, s, j + 1)))

    return Mesh(
        verts,
        triangles,
        np.ones(len(triangles), dtype=int),
        boundary,
        np.ones(len(boundary), dtype=int),
    )


def _tag_by_centroid(mesh, classify):
    pts = mesh.vertices[mesh.triangles]
    centroids = pts.mean(axis=1)
    return with_region_tags(mesh, classify(centroids))


# -- built-in benchmarks ------------------------------------------------------


def manufactured_benchmark(law=None, base_n=4, peak_flux=1.5, order=1, levels=4):
    """Unit-square problem with a known smooth solution.

    The potential alpha sin(pi x) sin(pi y) (alpha chosen so max |b| is
    peak_flux, deep in the nonlinear range of the default iron law) is
    made an exact solution by setting the source field to dw(b_exact),
    which cancels the constitutive term pointwise.
    """
    law = law or brauer_reference()
    alpha = peak_flux / np.pi

    def exact_potential(x):
        x = np.atleast_2d(x)
        return alpha * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def exact_flux(x):
        x = np.atleast_2d(x)
        sx, cx = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        sy, cy = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return alpha * np.pi * np.column_stack([sx * cy, -cx * sy])

    def hs(x):
        x = np.atleast_2d(x)
        return law.dw(x, exact_flux(x))

    return Benchmark(
        name="manufactured",
        base_mesh=generate_unit_square(base_n),
        materials={1: law},
        dirichlet_tags=frozenset({1}),
        error_mode="manufactured-exact",
        order=order,
        levels=levels,
        hs_field=hs,
        exact_potential=exact_potential,
        exact_flux=exact_flux,
    )


#: geometry of the two-wire disc benchmark (meters, A/m^2)
DISC_RADIUS = 0.1
WIRE_OFFSET = 0.05
WIRE_RADIUS = 0.025
WIRE_CURRENT_DENSITY = 1e5

IRON, WIRE_PLUS, WIRE_MINUS = 1, 2, 3


def two_wire_disc_benchmark(rings=12, order=1, levels=2):
    """Iron disc with two opposite-current wires and a no-flux boundary.

    The disc boundary is the inscribed polygon of the base mesh and wire
    regions are the base-level triangles whose centroid falls in the wire
    circles; refinement inherits both, so all levels share one geometry
    and successive-refinement errors are well defined. The source is the
    per-region current density +-1e5 in the wires.
    """
    base = disc_mesh(rings, DISC_RADIUS)

    def classify(c):
        tags = np.full(len(c), IRON)
        plus = (c[:, 0] ** 2 + (c[:, 1] - WIRE_OFFSET) ** 2) < WIRE_RADIUS**2
        minus = (c[:, 0] ** 2 + (c[:, 1] + WIRE_OFFSET) ** 2) < WIRE_RADIUS**2
        tags[plus] = WIRE_PLUS
        tags[minus] = WIRE_MINUS
        return tags

    base = _tag_by_centroid(base, classify)
    copper = LinearIsotropic(NU0)
    return Benchmark(
        name="two_wire_disc",
        base_mesh=base,
        materials={IRON: brauer_reference(), WIRE_PLUS: copper, WIRE_MINUS: copper},
        dirichlet_tags=frozenset({1}),
        error_mode="successive-refinement",
        order=order,
        levels=levels,
        js_density={WIRE_PLUS: WIRE_CURRENT_DENSITY, WIRE_MINUS: -WIRE_CURRENT_DENSITY},
    )


def pm_toy_benchmark(base_n=20, remanence=1.3, order=1, levels=2):
    """Square iron block with four alternately magnetized patches.

    Patch edges align with the base grid, the driving current is zero,
    and the field is produced by the magnets alone (h = nu0 b - m). The
    solution is singular at patch corners, so refinement studies show
    reduced convergence orders while iteration counts stay level.
    """
    if base_n % 5:
        raise ValueError("base_n must be a multiple of 5 so patch corners align")
    base = generate_unit_square(base_n)
    patches = {
        2: ((0.2, 0.4), (0.2, 0.4), +1.0),
        3: ((0.6, 0.8), (0.2, 0.4), -1.0),
        4: ((0.2, 0.4), (0.6, 0.8), -1.0),
        5: ((0.6, 0.8), (0.6, 0.8), +1.0),
    }

    def classify(c):
        tags = np.full(len(c), 1)
        for tag, (xr, yr, _) in patches.items():
            inside = (
                (c[:, 0] > xr[0]) & (c[:, 0] < xr[1]) & (c[:, 1] > yr[0]) & (c[:, 1] < yr[1])
            )
            tags[inside] = tag
        return tags

    base = _tag_by_centroid(base, classify)
    m0 = NU0 * remanence
    materials = {1: brauer_reference()}
    for tag, (_, _, sign) in patches.items():
        materials[tag] = PermanentMagnet(NU0, (0.0, sign * m0))
    return Benchmark(
        name="pm_toy",
        base_mesh=base,
        materials=materials,
        dirichlet_tags=frozenset({1}),
        error_mode="successive-refinement",
        order=order,
        levels=levels,
    )


#: quarter-annulus benchmark parameters (dimensionless)
ANNULUS_R_INNER = 0.5
ANNULUS_R_OUTER = 1.0
ANNULUS_MATRIX = np.array([[3.0, 1.0], [1.0, 2.0]])


def _annulus_hs_physical(xp):
    xp = np.atleast_2d(xp)
    return np.column_stack([-xp[:, 1], xp[:, 0]])


def annulus_mapped_benchmark(base_n=6, order=1, levels=3):
    """Anisotropic linear problem on a quarter annulus via pull-back.

    The curved domain is handled by mapping the unit square; material and
    source are pulled back to the reference square, so the mesh stays
    straight and quadrature exact.
    """
    amap = geometry.quarter_annulus_map(ANNULUS_R_INNER, ANNULUS_R_OUTER)
    law = geometry.pullback_material(amap, AnisotropicLinear(ANNULUS_MATRIX))
    hs = geometry.pullback_source(amap, _annulus_hs_physical)
    return Benchmark(
        name="annulus_mapped",
        base_mesh=generate_unit_square(base_n),
        materials={1: law},
        dirichlet_tags=frozenset({1}),
        error_mode="successive-refinement",
        order=order,
        levels=levels,
        hs_field=hs,
        domain_map=amap,
    )


class SpatialAnisotropicLinear(MaterialLaw):
    """w = 1/2 <N(x) b, b> with a point-dependent SPD matrix field."""

    def __init__(self, matrix_fn, gamma=None, lipschitz=None):
        self.matrix_fn = matrix_fn
        self.gamma = gamma
        self.lipschitz = lipschitz
        self.hess_lipschitz = 0.0

    def w(self, x, b):
        N = self.matrix_fn(np.atleast_2d(x))
        b = np.atleast_2d(b)
        return 0.5 * np.einsum("nij,ni,nj->n", N, b, b)

    def dw(self, x, b):
        N = self.matrix_fn(np.atleast_2d(x))
        return np.einsum("nij,nj->ni", N, np.atleast_2d(b))

    def d2w(self, x, b):
        return self.matrix_fn(np.atleast_2d(x)).copy()


def annulus_direct_benchmark(base_n=6, order=1, levels=3):
    """Hand-derived reference-square formulation of the annulus problem.

    The composed coefficient N(x) = F^T N' F / J and source F^T h_s' are
    written out from the polar map's Jacobian, independently of the
    generic pull-back machinery, to cross-check it end to end.
    """
    dr = ANNULUS_R_OUTER - ANNULUS_R_INNER
    half_pi = 0.5 * np.pi

    def jac(x):
        x = np.atleast_2d(x)
        r = ANNULUS_R_INNER + dr * x[:, 0]
        th = half_pi * x[:, 1]
        c, s = np.cos(th), np.sin(th)
        F = np.empty((len(x), 2, 2))
        F[:, 0, 0] = dr * c
        F[:, 0, 1] = -half_pi * r * s
        F[:, 1, 0] = dr * s
        F[:, 1, 1] = half_pi * r * c
        return F, dr * half_pi * r, r, th

    def matrix_fn(x):
        F, J, _, _ = jac(x)
        return np.einsum("nki,kl,nlj->nij", F, ANNULUS_MATRIX, F) / J[:, None, None]

    def hs(x):
        F, _, r, th = jac(x)
        phys = np.column_stack([-r * np.sin(th), r * np.cos(th)])
        return np.einsum("nji,nj->ni", F, phys)

    law = SpatialAnisotropicLinear(matrix_fn)
    return Benchmark(
        name="annulus_direct",
        base_mesh=generate_unit_square(base_n),
        materials={1: law},
        dirichlet_tags=frozenset({1}),
        error_mode="successive-refinement",
        order=order,
        levels=levels,
        hs_field=hs,
    )


def builtin_benchmarks():
    """Catalog of the four built-in benchmarks, keyed by name."""
    return {
        "manufactured": manufactured_benchmark(),
        "two_wire_disc": two_wire_disc_benchmark(),
        "pm_toy": pm_toy_benchmark(),
        "annulus_mapped": annulus_mapped_benchmark(),
    }
