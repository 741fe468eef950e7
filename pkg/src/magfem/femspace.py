"""H1-conforming Lagrange spaces P_p on triangles, in vector-potential form.

The discrete unknown is a scalar potential a_h whose rotated gradient
Curl a = (da/dy, -da/dx) is the flux density. Spaces carry homogeneous
Dirichlet constraints on tagged boundary edges (a = 0 realizes the no-flux
condition b.n = 0). Dof numbering is deterministic: vertex dofs by vertex
index, then edge dofs by sorted edge, then element-interior dofs by
element index; edge-interior dofs run from the lower- to the
higher-indexed vertex.

Spaces are immutable after construction and all evaluation routines are
pure, so they are safe to share between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_SPACE_DEGREE = 4

BOUNDARY_COMPATIBILITY_TOL = 1e-10


class BoundaryCompatibilityError(ValueError):
    """Interpolated function does not vanish on the Dirichlet boundary."""


# -- reference element -------------------------------------------------------


def _reference_nodes(p):
    """Equispaced Lagrange nodes: 3 vertices, 3 edges, then interior."""
    nodes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    for t in range(1, p):  # edge v0 -> v1
        nodes.append((t / p, 0.0))
    for t in range(1, p):  # edge v1 -> v2
        nodes.append(((p - t) / p, t / p))
    for t in range(1, p):  # edge v2 -> v0
        nodes.append((0.0, (p - t) / p))
    for i in range(1, p):
        for j in range(1, p - i):
            nodes.append((i / p, j / p))
    return np.array(nodes, dtype=float)


def _monomial_exponents(p):
    return [(i, d - i) for d in range(p + 1) for i in range(d + 1)]


@lru_cache(maxsize=None)
def _reference_element(p):
    """Nodes, monomial exponents, and the nodal coefficient matrix for P_p."""
    if not 1 <= p <= MAX_SPACE_DEGREE:
        raise ValueError(f"space degree must be in 1..{MAX_SPACE_DEGREE}, got {p}")
    nodes = _reference_nodes(p)
    expo = _monomial_exponents(p)
    vander = np.array([[x**a * y**b for a, b in expo] for x, y in nodes])
    coeffs = np.linalg.inv(vander)  # column i: monomial coefficients of shape i
    nodes.flags.writeable = False
    coeffs.flags.writeable = False
    return nodes, tuple(expo), coeffs


def _shape_values(p, points):
    """Shape-function values at reference points; (n_points, n_local)."""
    _, expo, coeffs = _reference_element(p)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mono = np.stack([pts[:, 0] ** a * pts[:, 1] ** b for a, b in expo], axis=1)
    return mono @ coeffs


def _shape_gradients(p, points):
    """Reference gradients at reference points; (n_points, n_local, 2)."""
    _, expo, coeffs = _reference_element(p)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    dx = np.stack(
        [a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x) for a, b in expo], axis=1
    )
    dy = np.stack(
        [b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(y) for a, b in expo], axis=1
    )
    return np.stack([dx @ coeffs, dy @ coeffs], axis=2)


# -- space -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FESpace:
    """Lagrange space of degree p on a mesh with Dirichlet constraints."""

    mesh: object
    degree: int
    conn: np.ndarray            # (ne, n_local) global dof per element
    dof_coords: np.ndarray      # (num_dofs, 2)
    constrained: np.ndarray     # (num_dofs,) bool
    free_index: np.ndarray      # (num_dofs,) position among free dofs, -1 if constrained
    dirichlet_tags: frozenset
    element_matrix: np.ndarray   # (ne, 2, 2) affine map matrix, columns v1-v0, v2-v0
    element_inverse: np.ndarray  # (ne, 2, 2) its inverse
    element_areas: np.ndarray    # (ne,) signed areas
    _curl_cache: dict

    def __repr__(self):
        return (
            f"FESpace(p={self.degree}, ndof={self.num_dofs}, n_free={self.n_free}, "
            f"dirichlet={sorted(self.dirichlet_tags)})"
        )

    @property
    def num_dofs(self):
        return self.dof_coords.shape[0]

    @property
    def n_free(self):
        return int(np.sum(~self.constrained))

    @property
    def n_local(self):
        return (self.degree + 1) * (self.degree + 2) // 2

    def scatter(self, free_values):
        """Full dof vector with zeros at constrained dofs."""
        full = np.zeros(self.num_dofs)
        full[~self.constrained] = free_values
        return full


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Free-dof coefficients of a discrete vector potential (Wb/m)."""

    space: FESpace
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.space.n_free,):
            raise ValueError(
                f"coefficient vector has length {vals.shape}, space has "
                f"{self.space.n_free} free dofs"
            )
        object.__setattr__(self, "values", vals)

    def full(self):
        return self.space.scatter(self.values)


def zero_coefficients(space):
    return CoefficientVector(space, np.zeros(space.n_free))


def build_space(mesh, degree, dirichlet_tags=frozenset()):
    """Build a P_degree space with homogeneous Dirichlet constraints.

    `dirichlet_tags` must be a subset of the mesh's boundary tags; dofs on
    edges with these tags (endpoints included) are constrained to zero.
    """
    p = int(degree)
    _reference_element(p)  # validates degree
    tags = frozenset(int(t) for t in dirichlet_tags)
    unknown = tags - mesh.boundary_tags_present()
    if unknown:
        raise ValueError(f"dirichlet tags {sorted(unknown)} not present in mesh")

    nv = mesh.num_vertices
    ne = mesh.num_triangles
    n_local = (p + 1) * (p + 2) // 2
    n_edge = p - 1
    n_int = (p - 1) * (p - 2) // 2

    edge_keys = sorted(
        {
            (min(int(tri[i]), int(tri[(i + 1) % 3])), max(int(tri[i]), int(tri[(i + 1) % 3])))
            for tri in mesh.triangles
            for i in range(3)
        }
    )
    edge_offset = {e: nv + k * n_edge for k, e in enumerate(edge_keys)}
    interior_base = nv + len(edge_keys) * n_edge
    num_dofs = interior_base + ne * n_int

    conn = np.empty((ne, n_local), dtype=np.int64)
    conn[:, 0:3] = mesh.triangles
    local_edges = ((0, 1), (1, 2), (2, 0))
    for t, tri in enumerate(mesh.triangles):
        col = 3
        for a, b in local_edges:
            ga, gb = int(tri[a]), int(tri[b])
            base = edge_offset[(min(ga, gb), max(ga, gb))]
            for k in range(n_edge):
                slot = k if ga < gb else n_edge - 1 - k
                conn[t, col] = base + slot
                col += 1
        for k in range(n_int):
            conn[t, col] = interior_base + t * n_int + k
            col += 1

    dof_coords = np.empty((num_dofs, 2))
    dof_coords[:nv] = mesh.vertices
    for (u, v), base in edge_offset.items():
        for k in range(n_edge):
            frac = (k + 1) / p
            dof_coords[base + k] = (1 - frac) * mesh.vertices[u] + frac * mesh.vertices[v]
    if n_int:
        ref_interior = _reference_nodes(p)[3 + 3 * n_edge :]
        pts = mesh.vertices[mesh.triangles]
        v0 = pts[:, 0]
        d1 = pts[:, 1] - v0
        d2 = pts[:, 2] - v0
        phys = (
            v0[:, None, :]
            + ref_interior[None, :, 0, None] * d1[:, None, :]
            + ref_interior[None, :, 1, None] * d2[:, None, :]
        )
        dof_coords[interior_base:] = phys.reshape(ne * n_int, 2)

    constrained = np.zeros(num_dofs, dtype=bool)
    for (u, v), tag in zip(mesh.boundary_edges, mesh.boundary_tag):
        if int(tag) in tags:
            constrained[int(u)] = True
            constrained[int(v)] = True
            base = edge_offset[(min(int(u), int(v)), max(int(u), int(v)))]
            constrained[base : base + n_edge] = True

    free_index = np.full(num_dofs, -1, dtype=np.int64)
    free_index[~constrained] = np.arange(int(np.sum(~constrained)))

    pts = mesh.vertices[mesh.triangles]
    B = np.stack([pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]], axis=2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    Binv = np.empty_like(B)
    Binv[:, 0, 0] = B[:, 1, 1] / det
    Binv[:, 0, 1] = -B[:, 0, 1] / det
    Binv[:, 1, 0] = -B[:, 1, 0] / det
    Binv[:, 1, 1] = B[:, 0, 0] / det

    for arr in (conn, dof_coords, constrained, free_index, B, Binv):
        arr.flags.writeable = False
    areas = 0.5 * det
    areas.flags.writeable = False
    return FESpace(
        mesh=mesh,
        degree=p,
        conn=conn,
        dof_coords=dof_coords,
        constrained=constrained,
        free_index=free_index,
        dirichlet_tags=tags,
        element_matrix=B,
        element_inverse=Binv,
        element_areas=areas,
        _curl_cache={},
    )


# -- evaluation --------------------------------------------------------------


def _physical_curls(space, ref_grads, elements=None):
    """Physical Curl of each shape function; (ne, nq, n_local, 2).

    ref_grads has shape (nq, n_local, 2); Curl a = (grad a rotated by -90deg)
    and grad transforms with the inverse transpose of the element matrix.
    """
    inv = space.element_inverse if elements is None else space.element_inverse[elements]
    grad = np.einsum("eji,qlj->eqli", inv, ref_grads)
    curl = np.empty_like(grad)
    curl[..., 0] = grad[..., 1]
    curl[..., 1] = -grad[..., 0]
    return curl


def tabulate_curl(space, rule):
    """Curl of all shape functions at the rule's points, per element."""
    cached = space._curl_cache.get(rule.degree)
    if cached is None:
        ref_grads = _shape_gradients(space.degree, rule.points)
        cached = _physical_curls(space, ref_grads)
        space._curl_cache[rule.degree] = cached
    return cached


def tabulate_values(space, rule):
    """Shape-function values at the rule's points (same on every element)."""
    return _shape_values(space.degree, rule.points)


def eval_basis(space, element, point):
    """Values and physical Curl vectors of all local shape functions.

    `point` is a reference-triangle coordinate pair; returns
    (values (n_local,), curls (n_local, 2)).
    """
    if not 0 <= element < space.mesh.num_triangles:
        raise IndexError(f"element {element} out of range")
    pt = np.asarray(point, dtype=float).reshape(1, 2)
    values = _shape_values(space.degree, pt)[0]
    curls = _physical_curls(space, _shape_gradients(space.degree, pt), np.array([element]))
    return values, curls[0, 0]


def eval_curl_field(space, coeffs, element, point):
    """Curl of the discrete field at one reference point of one element."""
    _, curls = eval_basis(space, element, point)
    full = coeffs.full()
    return curls.T @ full[space.conn[element]]


def eval_curl_batch(space, coeffs, elements, points):
    """Curl of the discrete field at per-element reference points.

    elements: (n,) element indices; points: (n, 2) reference coordinates.
    Used for cross-mesh error evaluation where every point has its own
    host element.
    """
    elements = np.asarray(elements)
    grads = _shape_gradients(space.degree, points)  # (n, n_local, 2)
    inv = space.element_inverse[elements]
    grad = np.einsum("nji,nlj->nli", inv, grads)
    curl = np.empty_like(grad)
    curl[..., 0] = grad[..., 1]
    curl[..., 1] = -grad[..., 0]
    local = coeffs.full()[space.conn[elements]]  # (n, n_local)
    return np.einsum("nl,nli->ni", local, curl)


def eval_value_batch(space, coeffs, elements, points):
    """Values of the discrete potential at per-element reference points."""
    elements = np.asarray(elements)
    vals = _shape_values(space.degree, points)  # (n, n_local)
    local = coeffs.full()[space.conn[elements]]
    return np.sum(vals * local, axis=1)


def interpolate(space, f):
    """Nodal interpolant of a point-function.

    f maps an (n, 2) coordinate array to (n,) values; it must vanish (to
    within 1e-10, scaled) at constrained dof nodes, otherwise a
    BoundaryCompatibilityError is raised instead of silently projecting.
    Polynomials of total degree <= p are reproduced exactly.
    """
    values = np.asarray(f(space.dof_coords), dtype=float)
    if values.shape != (space.num_dofs,):
        raise ValueError("interpolated function must return one value per dof node")
    scale = max(1.0, float(np.max(np.abs(values))) if values.size else 0.0)
    bad = space.constrained & (np.abs(values) > BOUNDARY_COMPATIBILITY_TOL * scale)
    if np.any(bad):
        worst = int(np.argmax(np.abs(values) * bad))
        raise BoundaryCompatibilityError(
            f"function does not vanish on the Dirichlet boundary: value "
            f"{values[worst]:.3e} at node {worst} {space.dof_coords[worst]}"
        )
    return CoefficientVector(space, values[~space.constrained])
