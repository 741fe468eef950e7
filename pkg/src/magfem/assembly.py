"""Assembly of the quadrature-based discrete energy, gradient, and Hessian.

All three quantities are evaluated with one quadrature rule (exactness at
least twice the curl degree), so the assembled residual is the exact
gradient of the assembled energy and the Hessian its exact Jacobian.
Element contributions are computed in vectorized batches and scattered
into scipy sparse matrices through a fixed coordinate ordering, making
assembled operators bit-reproducible on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import femspace
from .quadrature import mapped_points, rule_for_degree


class ProblemConfigError(ValueError):
    """Inconsistent problem setup (missing material, bad source form)."""


@dataclass(frozen=True, eq=False)
class Problem:
    """Discrete minimization problem for the vector potential.

    Exactly one of hs_field (source field, evaluated pointwise, A/m) and
    js_density (out-of-plane current density, A/m^2) may be set; both
    unset means a purely magnet-driven problem. js_density may also be a
    {region tag: constant} dict, which keeps wire currents aligned with
    element boundaries on every refinement level. `order` is the curl
    degree k; the potential lives in Lagrange elements of degree k+1 and
    the default quadrature is exact to degree 2k.
    """

    mesh: object
    order: int
    materials: dict
    dirichlet_tags: frozenset
    hs_field: object = None
    js_density: object = None
    quad_degree: int = None
    space: femspace.FESpace = field(init=False)
    rule: object = field(init=False)

    def __post_init__(self):
        if self.hs_field is not None and self.js_density is not None:
            raise ProblemConfigError("set at most one of hs_field and js_density")
        missing = self.mesh.region_tags_present() - set(self.materials)
        if missing:
            raise ProblemConfigError(f"regions {sorted(missing)} have no material law")
        degree = self.quad_degree
        if degree is None:
            degree = max(2 * self.order, 1)
        elif degree < 2 * self.order:
            raise ProblemConfigError(
                f"quadrature exactness {degree} is below the bilinear requirement "
                f"2k = {2 * self.order}"
            )
        object.__setattr__(self, "quad_degree", degree)
        object.__setattr__(self, "rule", rule_for_degree(degree))
        object.__setattr__(
            self,
            "space",
            femspace.build_space(self.mesh, self.order + 1, self.dirichlet_tags),
        )
        object.__setattr__(self, "_cache", {})

    # -- cached quadrature-point data --------------------------------------

    def __repr__(self):
        source = "hs" if self.hs_field is not None else "js" if self.js_density is not None else "none"
        return (
            f"Problem(ne={self.mesh.num_triangles}, k={self.order}, "
            f"n_free={self.space.n_free}, regions={sorted(self.materials)}, "
            f"source={source})"
        )

    def _data(self):
        cached = self._cache.get("data")
        if cached is None:
            cached = _QuadData(self)
            self._cache["data"] = cached
        return cached

    def certified_bounds(self):
        """(gamma, L) over all region laws, or None if any law lacks them."""
        gammas, lips = [], []
        for law in self.materials.values():
            if law.gamma is None or law.lipschitz is None:
                return None
            gammas.append(law.gamma)
            lips.append(law.lipschitz)
        return min(gammas), max(lips)


class _QuadData:
    """Per-problem tabulated quadrature data shared by all assemblies."""

    def __init__(self, problem):
        mesh = problem.mesh
        space = problem.space
        rule = problem.rule
        self.points = mapped_points(mesh, rule)      # (ne, nq, 2)
        self.curls = femspace.tabulate_curl(space, rule)  # (ne, nq, nl, 2)
        self.values = femspace.tabulate_values(space, rule)  # (nq, nl)
        self.areas = space.element_areas
        self.weights = rule.weights
        ne, nq, _ = self.points.shape
        self.flat_points = self.points.reshape(ne * nq, 2)
        # elements grouped by region for material evaluation
        self.region_rows = {
            tag: np.nonzero(mesh.region_tag == tag)[0]
            for tag in sorted(mesh.region_tags_present())
        }
        # source samples are affine data; evaluate once
        self.hs = None
        self.js = None
        if problem.hs_field is not None:
            self.hs = np.asarray(problem.hs_field(self.flat_points), float).reshape(ne, nq, 2)
        elif problem.js_density is not None:
            js = problem.js_density
            if isinstance(js, dict):
                per_element = np.array(
                    [float(js.get(int(t), 0.0)) for t in mesh.region_tag]
                )
                self.js = np.broadcast_to(per_element[:, None], (ne, nq)).copy()
            else:
                self.js = np.asarray(js(self.flat_points), float).reshape(ne, nq)


def _local_coeffs(problem, coeffs):
    return coeffs.full()[problem.space.conn]  # (ne, nl)


def curl_at_quadrature(problem, coeffs):
    """Flux density b = Curl a_h at every quadrature point; (ne, nq, 2)."""
    data = problem._data()
    return np.einsum("el,eqli->eqi", _local_coeffs(problem, coeffs), data.curls)


def _material_apply(problem, fn_name, b):
    """Evaluate law.<fn_name> regionwise on the (ne, nq, ...) batch."""
    data = problem._data()
    ne, nq = b.shape[:2]
    out = None
    for tag, rows in data.region_rows.items():
        law = problem.materials[tag]
        xs = data.points[rows].reshape(-1, 2)
        bs = b[rows].reshape(-1, 2)
        vals = getattr(law, fn_name)(xs, bs)
        if out is None:
            out = np.empty((ne, nq) + vals.shape[1:])
        out[rows] = vals.reshape((len(rows), nq) + vals.shape[1:])
    return out


def assemble_energy(problem, coeffs):
    """Discrete magnetic energy W(a_h) = <w(Curl a_h), 1>_h - source term."""
    data = problem._data()
    b = curl_at_quadrature(problem, coeffs)
    w = _material_apply(problem, "w", b)  # (ne, nq)
    integrand = w
    if data.hs is not None:
        integrand = w - np.sum(data.hs * b, axis=2)
    total = float((integrand @ data.weights) @ data.areas)
    if data.js is not None:
        a_vals = _local_coeffs(problem, coeffs) @ data.values.T  # (ne, nq)
        total -= float(((data.js * a_vals) @ data.weights) @ data.areas)
    return total


def assemble_residual(problem, coeffs):
    """Gradient of the discrete energy over free dofs.

    Component i is <dw(Curl a_h) - h_s, Curl phi_i>_h (or the j-form
    variant with -<j_s, phi_i>_h as source).
    """
    data = problem._data()
    space = problem.space
    b = curl_at_quadrature(problem, coeffs)
    h = _material_apply(problem, "dw", b)  # (ne, nq, 2)
    if data.hs is not None:
        h = h - data.hs
    wq = data.weights[None, :] * data.areas[:, None]  # (ne, nq)
    cell = np.einsum("eq,eqi,eqli->el", wq, h, data.curls)
    if data.js is not None:
        cell -= np.einsum("eq,eq,ql->el", wq, data.js, data.values)

    res = np.zeros(space.num_dofs)
    np.add.at(res, space.conn.ravel(), cell.ravel())
    return res[~space.constrained]


def residual_scale(problem, coeffs):
    """Rounding-floor scale of the residual: norm of the |integrand| sums.

    The residual entries are sums of terms that may cancel; this is the
    same assembly with absolute values, so eps times it bounds the
    floating-point noise of an exactly zero residual (for example a
    uniformly magnetized domain, whose exact solution is a = 0).
    """
    data = problem._data()
    space = problem.space
    b = curl_at_quadrature(problem, coeffs)
    h = _material_apply(problem, "dw", b)
    if data.hs is not None:
        h = np.abs(h) + np.abs(data.hs)
    else:
        h = np.abs(h)
    wq = data.weights[None, :] * np.abs(data.areas[:, None])
    cell = np.einsum("eq,eqi,eqli->el", wq, h, np.abs(data.curls))
    if data.js is not None:
        cell += np.einsum("eq,eq,ql->el", wq, np.abs(data.js), np.abs(data.values))
    res = np.zeros(space.num_dofs)
    np.add.at(res, space.conn.ravel(), cell.ravel())
    return float(np.linalg.norm(res[~space.constrained]))


def assemble_hessian(problem, coeffs):
    """Second derivative of the energy on free dofs, as symmetric CSR.

    Entry (i, j) is <d2w(Curl a_h) Curl phi_j, Curl phi_i>_h.
    """
    data = problem._data()
    b = curl_at_quadrature(problem, coeffs)
    nu_d = _material_apply(problem, "d2w", b)  # (ne, nq, 2, 2)
    return _scatter_matrix(problem, nu_d)


def assemble_unit_stiffness(problem):
    """Stiffness matrix for unit reluctivity, <Curl phi_j, Curl phi_i>_h.

    Constant across the Newton iteration; used for increment norms and as
    the fixed-point preconditioner.
    """
    cached = problem._cache.get("unit_stiffness")
    if cached is None:
        data = problem._data()
        ne, nq = data.points.shape[:2]
        eye = np.broadcast_to(np.eye(2), (ne, nq, 2, 2))
        cached = _scatter_matrix(problem, eye)
        problem._cache["unit_stiffness"] = cached
    return cached


def _scatter_matrix(problem, nu_d):
    data = problem._data()
    space = problem.space
    wq = data.weights[None, :] * data.areas[:, None]
    cell = np.einsum("eq,eqli,eqij,eqmj->elm", wq, data.curls, nu_d, data.curls)

    nl = space.n_local
    free = space.free_index[space.conn]  # (ne, nl), -1 where constrained
    rows = np.repeat(free[:, :, None], nl, axis=2)
    cols = np.repeat(free[:, None, :], nl, axis=1)
    keep = (rows >= 0) & (cols >= 0)
    n = space.n_free
    mat = sp.coo_matrix(
        (cell[keep], (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def curl_norm(problem, free_values):
    """Discrete curl (semi)norm ||Curl v_h||_h of a free-dof vector."""
    K = assemble_unit_stiffness(problem)
    return float(np.sqrt(max(free_values @ (K @ free_values), 0.0)))


def fields_at_quadrature(problem, coeffs, rule=None):
    """Quadrature-point samples (x, b, h) for post-processing and errors.

    With `rule` given, re-tabulates on that rule (used for the
    over-integrated error norms); defaults to the problem's own rule.
    """
    if rule is None or rule.degree == problem.rule.degree:
        data = problem._data()
        pts = data.points
        b = curl_at_quadrature(problem, coeffs)
    else:
        pts = mapped_points(problem.mesh, rule)
        curls = femspace.tabulate_curl(problem.space, rule)
        b = np.einsum("el,eqli->eqi", _local_coeffs(problem, coeffs), curls)
    h = _field_from_b(problem, pts, b)
    return pts, b, h


def _field_from_b(problem, pts, b):
    ne, nq = b.shape[:2]
    h = np.empty_like(b)
    for tag in sorted(problem.mesh.region_tags_present()):
        rows = np.nonzero(problem.mesh.region_tag == tag)[0]
        law = problem.materials[tag]
        h[rows] = law.dw(
            pts[rows].reshape(-1, 2), b[rows].reshape(-1, 2)
        ).reshape(len(rows), nq, 2)
    return h
