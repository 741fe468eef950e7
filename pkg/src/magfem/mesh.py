"""Conforming triangular meshes with region and boundary tags.

A mesh is immutable after construction. Vertices are 2D coordinates in
meters, triangles are counterclockwise vertex-index triples carrying an
integer region tag, and boundary edges are tagged vertex pairs. The file
format is a line-oriented ASCII format with 1-based indices (see
:func:`parse_mesh` / :func:`serialize_mesh`); internally everything is
0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Signed areas at or below this fraction of the bounding-box area are
# rejected: degenerate triangles break the affine quadrature map.
DEGENERATE_AREA_FRACTION = 1e-14


class MeshError(ValueError):
    """Invalid mesh data (non-conforming, degenerate, or out of range)."""


class MeshParseError(MeshError):
    """Malformed mesh file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, dtype):
    arr = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (ne, 3) int array
        Counterclockwise vertex indices per triangle.
    region_tag : (ne,) int array
        Material region id per triangle.
    boundary_edges : (nb, 2) int array
        Vertex pairs of boundary edges.
    boundary_tag : (nb,) int array
        Integer tag per boundary edge.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region_tag: np.ndarray
    boundary_edges: np.ndarray
    boundary_tag: np.ndarray

    def __init__(self, vertices, triangles, region_tag, boundary_edges, boundary_tag):
        object.__setattr__(self, "vertices", _frozen(vertices, float))
        object.__setattr__(self, "triangles", _frozen(triangles, np.int64))
        object.__setattr__(self, "region_tag", _frozen(region_tag, np.int64))
        object.__setattr__(self, "boundary_edges", _frozen(boundary_edges, np.int64))
        object.__setattr__(self, "boundary_tag", _frozen(boundary_tag, np.int64))
        self._validate()

    def __repr__(self):
        return (
            f"Mesh(nv={self.num_vertices}, ne={self.num_triangles}, "
            f"nb={len(self.boundary_edges)}, regions={sorted(self.region_tags_present())})"
        )

    # -- basic queries ----------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        """Signed area of every triangle (positive for CCW)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def total_area(self):
        return float(np.sum(self.signed_areas()))

    def max_edge_length(self):
        p = self.vertices[self.triangles]
        lengths = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return float(np.max(lengths))

    def shape_regularity(self):
        """Per-triangle circumradius/inradius ratio (recorded, not enforced)."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        area = np.abs(self.signed_areas())
        s = 0.5 * (a + b + c)
        inradius = area / s
        circumradius = a * b * c / (4.0 * area)
        return circumradius / inradius

    def region_tags_present(self):
        return set(int(t) for t in np.unique(self.region_tag))

    def boundary_tags_present(self):
        return set(int(t) for t in np.unique(self.boundary_tag)) if len(self.boundary_tag) else set()

    # -- validation --------------------------------------------------------

    def _validate(self):
        nv = self.num_vertices
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (ne, 3) array")
        if self.region_tag.shape != (self.num_triangles,):
            raise MeshError("region_tag must have one entry per triangle")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 2:
            raise MeshError("boundary_edges must be an (nb, 2) array")
        if self.boundary_tag.shape != (self.boundary_edges.shape[0],):
            raise MeshError("boundary_tag must have one entry per boundary edge")

        if self.num_triangles and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise MeshError("triangle vertex index out of range")
        if len(self.boundary_edges) and (
            self.boundary_edges.min() < 0 or self.boundary_edges.max() >= nv
        ):
            raise MeshError("boundary edge vertex index out of range")

        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        bbox_area = max(float((hi[0] - lo[0]) * (hi[1] - lo[1])), np.finfo(float).tiny)
        areas = self.signed_areas()
        if np.any(areas <= DEGENERATE_AREA_FRACTION * bbox_area):
            bad = int(np.argmin(areas))
            raise MeshError(
                f"triangle {bad} has nonpositive or degenerate signed area {areas[bad]:g}"
            )

        # Conformity: each undirected edge in at most two triangles, each
        # directed edge at most once (consistent CCW orientation).
        directed = set()
        count = {}
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                u, v = int(tri[i]), int(tri[(i + 1) % 3])
                if u == v:
                    raise MeshError(f"triangle {t} has a repeated vertex")
                if (u, v) in directed:
                    raise MeshError(f"directed edge ({u},{v}) occurs twice; orientation conflict")
                directed.add((u, v))
                key = (min(u, v), max(u, v))
                count[key] = count.get(key, 0) + 1
                if count[key] > 2:
                    raise MeshError(f"edge ({u},{v}) shared by more than two triangles")

        expected_boundary = {e for e, c in count.items() if c == 1}
        listed = [
            (min(int(u), int(v)), max(int(u), int(v))) for u, v in self.boundary_edges
        ]
        if len(set(listed)) != len(listed):
            raise MeshError("duplicate boundary edge listed")
        if set(listed) != expected_boundary:
            missing = expected_boundary - set(listed)
            extra = set(listed) - expected_boundary
            raise MeshError(
                f"boundary edge list inconsistent (missing {sorted(missing)[:3]}, "
                f"extra {sorted(extra)[:3]})"
            )


def with_region_tags(mesh, region_tag):
    """New mesh equal to `mesh` but with the given per-triangle region tags."""
    return Mesh(mesh.vertices, mesh.triangles, region_tag, mesh.boundary_edges, mesh.boundary_tag)


def generate_unit_square(n):
    """Structured triangulation of the unit square with n x n cells.

    Each cell is split along the lower-left to upper-right diagonal, so
    the element count and dof numbering are reproducible across runs.
    Vertices lie on the uniform (n+1) x (n+1) lattice; all outer edges get
    boundary tag 1 and all triangles region 1.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    vx, vy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([vx.ravel(), vy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    triangles = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            triangles.append((a, b, c))
            triangles.append((a, c, d))

    edges = []
    edges += [(vid(i, 0), vid(i + 1, 0)) for i in range(n)]
    edges += [(vid(n, j), vid(n, j + 1)) for j in range(n)]
    edges += [(vid(i + 1, n), vid(i, n)) for i in range(n)]
    edges += [(vid(0, j + 1), vid(0, j)) for j in range(n)]

    return Mesh(
        vertices,
        triangles,
        np.ones(len(triangles), dtype=int),
        edges,
        np.ones(len(edges), dtype=int),
    )


# Child c of a refined triangle covers a fixed sub-triangle of its parent's
# reference element; refine_uniform emits children of parent t at indices
# 4t..4t+3 in this order. child_reference_map relies on both facts.
_CHILD_OFFSET = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.0]])
_CHILD_MATRIX = np.array(
    [
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.0, -0.5], [0.5, 0.5]],
    ]
)


def refine_uniform(mesh):
    """Split every triangle into four via edge midpoints.

    Region and boundary tags are inherited; the result is conforming and
    the maximal edge length halves. Children of parent t occupy indices
    4t..4t+3 (three corner children then the medial triangle), which
    cross-level evaluation depends on.
    """
    nv = mesh.num_vertices
    edge_mid = {}
    new_vertices = [mesh.vertices]

    edge_set = set()
    for tri in mesh.triangles:
        for i in range(3):
            u, v = int(tri[i]), int(tri[(i + 1) % 3])
            edge_set.add((min(u, v), max(u, v)))
    for k, (u, v) in enumerate(sorted(edge_set)):
        edge_mid[(u, v)] = nv + k
    mids = np.array(sorted(edge_set), dtype=int)
    new_vertices.append(0.5 * (mesh.vertices[mids[:, 0]] + mesh.vertices[mids[:, 1]]))
    vertices = np.vstack(new_vertices)

    def mid(u, v):
        return edge_mid[(min(u, v), max(u, v))]

    triangles = np.empty((4 * mesh.num_triangles, 3), dtype=int)
    for t, tri in enumerate(mesh.triangles):
        v0, v1, v2 = (int(v) for v in tri)
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        triangles[4 * t + 0] = (v0, m01, m20)
        triangles[4 * t + 1] = (m01, v1, m12)
        triangles[4 * t + 2] = (m20, m12, v2)
        triangles[4 * t + 3] = (m01, m12, m20)
    region_tag = np.repeat(mesh.region_tag, 4)

    boundary_edges = []
    boundary_tag = []
    for (u, v), tag in zip(mesh.boundary_edges, mesh.boundary_tag):
        m = mid(int(u), int(v))
        boundary_edges.append((int(u), m))
        boundary_edges.append((m, int(v)))
        boundary_tag += [int(tag), int(tag)]

    return Mesh(vertices, triangles, region_tag, boundary_edges, boundary_tag)


def child_reference_map(child_index):
    """Affine map from a child's reference coords into its parent's.

    `child_index` is the position 0..3 within the parent (fine element
    4t+c has parent t and child index c).
    """
    return _CHILD_MATRIX[child_index], _CHILD_OFFSET[child_index]


# -- ASCII (de)serialization ----------------------------------------------


def serialize_mesh(mesh):
    """Mesh to the line-oriented ASCII format (1-based, round-trip exact)."""
    lines = []
    lines.append(f"$Nodes {mesh.num_vertices}")
    for k, (x, y) in enumerate(mesh.vertices, start=1):
        lines.append(f"{k} {x:.17g} {y:.17g}")
    lines.append(f"$Triangles {mesh.num_triangles}")
    for k, (tri, reg) in enumerate(zip(mesh.triangles, mesh.region_tag), start=1):
        lines.append(f"{k} {tri[0] + 1} {tri[1] + 1} {tri[2] + 1} {reg}")
    lines.append(f"$BoundaryEdges {len(mesh.boundary_edges)}")
    for k, ((u, v), tag) in enumerate(zip(mesh.boundary_edges, mesh.boundary_tag), start=1):
        lines.append(f"{k} {u + 1} {v + 1} {tag}")
    return "\n".join(lines) + "\n"


def parse_mesh(text):
    """Parse the ASCII mesh format; errors carry the offending line number."""
    raw = text.splitlines()
    entries = []  # (line_number, tokens)
    for lineno, line in enumerate(raw, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            entries.append((lineno, stripped.split()))

    pos = 0

    def next_entry():
        nonlocal pos
        if pos >= len(entries):
            last = entries[-1][0] if entries else 0
            raise MeshParseError("unexpected end of file", line=last + 1)
        e = entries[pos]
        pos += 1
        return e

    def read_header(name):
        lineno, tok = next_entry()
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(f"expected '{name} <count>' header", line=lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count in {name} header", line=lineno) from None
        if count < 0:
            raise MeshParseError(f"negative count in {name} header", line=lineno)
        return count

    def read_block(name, width, convert):
        count = read_header(name)
        rows = []
        for k in range(1, count + 1):
            lineno, tok = next_entry()
            if tok[0].startswith("$"):
                raise MeshParseError(
                    f"{name} block truncated: expected {count} rows, got {k - 1}", line=lineno
                )
            if len(tok) != width:
                raise MeshParseError(f"expected {width} fields in {name} row", line=lineno)
            try:
                ident = int(tok[0])
                values = convert(tok[1:])
            except ValueError:
                raise MeshParseError(f"malformed {name} row", line=lineno) from None
            if ident != k:
                raise MeshParseError(
                    f"ids must be consecutive starting at 1; expected {k}, got {ident}",
                    line=lineno,
                )
            rows.append((lineno, values))
        return rows

    nodes = read_block("$Nodes", 3, lambda s: (float(s[0]), float(s[1])))
    nv = len(nodes)

    def check_index(i, lineno):
        if not (1 <= i <= nv):
            raise MeshParseError(f"vertex index {i} out of range 1..{nv}", line=lineno)
        return i - 1

    tris = read_block("$Triangles", 5, lambda s: tuple(int(x) for x in s))
    edges = read_block("$BoundaryEdges", 4, lambda s: tuple(int(x) for x in s))
    if pos != len(entries):
        raise MeshParseError("trailing content after $BoundaryEdges block", line=entries[pos][0])

    vertices = np.array([v for _, v in nodes], dtype=float).reshape(nv, 2)
    triangles = [
        (check_index(a, ln), check_index(b, ln), check_index(c, ln))
        for ln, (a, b, c, _) in tris
    ]
    region = [r for _, (_, _, _, r) in tris]
    bedges = [(check_index(u, ln), check_index(v, ln)) for ln, (u, v, _) in edges]
    btags = [t for _, (_, _, t) in edges]

    try:
        return Mesh(vertices, np.array(triangles, dtype=int).reshape(len(triangles), 3),
                    region, np.array(bedges, dtype=int).reshape(len(bedges), 2), btags)
    except MeshError as exc:
        raise MeshParseError(str(exc)) from exc


def meshes_equal(a, b):
    """Exact equality of all mesh arrays (used for round-trip checks)."""
    return (
        np.array_equal(a.vertices, b.vertices)
        and np.array_equal(a.triangles, b.triangles)
        and np.array_equal(a.region_tag, b.region_tag)
        and np.array_equal(a.boundary_edges, b.boundary_edges)
        and np.array_equal(a.boundary_tag, b.boundary_tag)
    )
