"""Triangulation of truncation polygons with boundary-feature tagging.

The mesh generator places boundary points along the polygon at spacing <= h,
fills the interior with a hexagonal lattice kept clear of the boundary, and
Delaunay-triangulates the combined cloud (with a few rounds of Lloyd-style
smoothing on the interior points).  For non-convex polygons, triangles whose
centroid falls outside are discarded; the point spacing rules keep the
boundary edges conforming.

Boundary vertices are tagged ``true_boundary`` (they discretize the domain
boundary, possibly shifted inward by the truncation margin) or
``cut_boundary`` (the artificial spherical cap).  Ties resolve to
``true_boundary``.

Mesh + field ASCII dump format (one file, UTF-8):

    MESH <n_vertices> <n_triangles>
    <x> <y> <tag>          # one line per vertex, tag 0=interior
    ...                    #   1=true_boundary 2=cut_boundary
    <i> <j> <k>            # one line per triangle (0-based, CCW)
    ...
    FIELD <name>           # optional, repeatable
    <value>                # one line per vertex
    ...

Floats are written with 17 significant digits so dumps are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
import math

import numpy as np
from matplotlib.path import Path as MplPath
from matplotlib.tri import LinearTriInterpolator, Triangulation, TrapezoidMapTriFinder
from scipy.spatial import Delaunay, cKDTree

from .geometry import TruncationPolygon

__all__ = [
    "BoundaryTag",
    "TriMesh",
    "ScalarField",
    "MeshQualityError",
    "triangulate",
    "tag_boundary",
    "triangle_gradient",
    "mesh_from_points",
    "write_mesh",
    "read_mesh",
]


class MeshQualityError(RuntimeError):
    """Triangulation failed to meet its quality thresholds."""


class BoundaryTag(IntEnum):
    INTERIOR = 0
    TRUE_BOUNDARY = 1
    CUT_BOUNDARY = 2


class TriMesh:
    """Immutable triangle mesh with per-vertex boundary tags.

    vertices: (n,2) float; triangles: (m,3) int, CCW; boundary_tag: (n,) uint8;
    h: the target edge length the generator aimed for.
    """

    def __init__(self, vertices, triangles, boundary_tag, h):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.boundary_tag = np.ascontiguousarray(boundary_tag, dtype=np.uint8)
        self.h = float(h)
        if len(self.boundary_tag) != len(self.vertices):
            raise ValueError("boundary_tag length must match vertex count")
        for arr in (self.vertices, self.triangles, self.boundary_tag):
            arr.setflags(write=False)
        self._cache = {}

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def _corners(self):
        return self.vertices[self.triangles]  # (m,3,2)

    @property
    def areas(self):
        if "areas" not in self._cache:
            p = self._corners()
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def basis_gradients(self):
        """Gradients of the three P1 hat functions per triangle, (m,3,2)."""
        if "basis_gradients" not in self._cache:
            p = self._corners()
            # edge opposite local vertex k, rotated by +90deg, over twice the area
            e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
            perp = np.stack([-e[..., 1], e[..., 0]], axis=-1)
            self._cache["basis_gradients"] = perp / (2.0 * self.areas)[:, None, None]
        return self._cache["basis_gradients"]

    @property
    def boundary_vertices(self):
        if "boundary_vertices" not in self._cache:
            t = self.triangles
            edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            edges = np.sort(edges, axis=1)
            key = edges[:, 0].astype(np.int64) * self.num_vertices + edges[:, 1]
            uniq, counts = np.unique(key, return_counts=True)
            bkey = uniq[counts == 1]
            bverts = np.unique(
                np.concatenate([bkey // self.num_vertices, bkey % self.num_vertices])
            )
            self._cache["boundary_vertices"] = bverts.astype(np.int64)
        return self._cache["boundary_vertices"]

    @property
    def interior_vertices(self):
        if "interior_vertices" not in self._cache:
            self._cache["interior_vertices"] = np.flatnonzero(
                self.boundary_tag == BoundaryTag.INTERIOR
            )
        return self._cache["interior_vertices"]

    def gradients(self, values) -> np.ndarray:
        """Per-triangle gradient (m,2) of the P1 interpolant of nodal values."""
        vals = np.asarray(values, dtype=float)[self.triangles]  # (m,3)
        return np.einsum("tk,tkd->td", vals, self.basis_gradients)

    def edge_lengths(self):
        p = self._corners()
        return np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            ],
            axis=1,
        )

    def min_angle_deg(self) -> float:
        ln = self.edge_lengths()  # sides c, a, b opposite vertices 2, 0, 1
        c, a, b = ln[:, 0], ln[:, 1], ln[:, 2]
        angles = []
        for opp, s1, s2 in ((a, b, c), (b, c, a), (c, a, b)):
            cosv = (s1**2 + s2**2 - opp**2) / (2 * s1 * s2)
            angles.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
        return float(np.min(angles))

    def max_edge_length(self) -> float:
        return float(self.edge_lengths().max())

    def _trifinder(self):
        if "trifinder" not in self._cache:
            tri = Triangulation(self.vertices[:, 0], self.vertices[:, 1], self.triangles)
            self._cache["triangulation"] = tri
            self._cache["trifinder"] = TrapezoidMapTriFinder(tri)
        return self._cache["triangulation"], self._cache["trifinder"]

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate the P1 interpolant at points; NaN outside the mesh."""
        tri, finder = self._trifinder()
        interp = LinearTriInterpolator(tri, np.asarray(values, dtype=float), trifinder=finder)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = interp(pts[:, 0], pts[:, 1])
        return np.ma.filled(out, np.nan)

    def with_tags(self, tags) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles, tags, self.h)


@dataclass
class ScalarField:
    """Nodal values of a piecewise-linear function on a TriMesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.num_vertices,):
            raise ValueError(
                f"values shape {v.shape} does not match vertex count {self.mesh.num_vertices}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    def at(self, points) -> np.ndarray:
        return self.mesh.interpolate(self.values, points)


def triangle_gradient(mesh: TriMesh, field, t: int) -> np.ndarray:
    """Constant gradient of the P1 interpolant on triangle t."""
    values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
    tri = mesh.triangles[t]
    return mesh.basis_gradients[t].T @ values[tri]


# ---------------------------------------------------------------------------
# generation


def _boundary_chain(poly: TruncationPolygon, h: float):
    """Points along the polygon boundary, spacing <= h, corners included."""
    pts = []
    v = poly.vertices
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        m = max(1, math.ceil(np.linalg.norm(b - a) / h))
        for j in range(m):
            pts.append(a + (b - a) * (j / m))
    return np.array(pts)


def _polygon_path(poly: TruncationPolygon) -> MplPath:
    return MplPath(poly.vertices, closed=False)


def _hex_lattice(poly: TruncationPolygon, h: float):
    lo = poly.vertices.min(axis=0)
    hi = poly.vertices.max(axis=0)
    dy = h * math.sqrt(3.0) / 2.0
    ys = np.arange(lo[1] + 0.5 * dy, hi[1], dy)
    rows = []
    for irow, y in enumerate(ys):
        x0 = lo[0] + (0.25 if irow % 2 else 0.75) * h
        xs = np.arange(x0, hi[0], h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    if not rows:
        return np.empty((0, 2))
    return np.concatenate(rows)


def mesh_from_points(points, poly: TruncationPolygon, h: float, n_boundary: int) -> TriMesh:
    """Delaunay mesh of a point cloud whose first n_boundary points trace poly.

    Drops triangles with centroid outside the polygon (no-op for convex
    polygons) and enforces CCW orientation.  Tags: every vertex on a boundary
    edge becomes TRUE_BOUNDARY; call tag_boundary to split off the cut.
    """
    pts = np.asarray(points, dtype=float)
    dt = Delaunay(pts)
    tris = dt.simplices.astype(np.int64)
    cent = pts[tris].mean(axis=1)
    if poly.convex:
        keep = poly.contains_points(cent, tol=1e-9 * max(poly.diameter, 1.0))
    else:
        keep = _polygon_path(poly).contains_points(cent)
    tris = tris[keep]
    p = pts[tris]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    # drop exactly-degenerate slivers qhull's Qt option can emit along
    # collinear boundary runs (relative flatness test)
    el = p - np.roll(p, 1, axis=1)
    lmax2 = np.max(np.einsum("tkd,tkd->tk", el, el), axis=1)
    tris = tris[np.abs(area2) > 1e-13 * lmax2]
    used = np.unique(tris)
    if len(used) != len(pts):  # drop stranded points (possible after filtering)
        remap = np.full(len(pts), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        pts = pts[used]
        tris = remap[tris]
        n_boundary = int((used < n_boundary).sum())
    tags = np.zeros(len(pts), dtype=np.uint8)
    mesh = TriMesh(pts, tris, tags, h)
    tags = tags.copy()
    tags[mesh.boundary_vertices] = BoundaryTag.TRUE_BOUNDARY
    return mesh.with_tags(tags)


def triangulate(
    poly: TruncationPolygon,
    h: float,
    smooth_rounds: int = 3,
    min_angle_deg: float = 20.0,
) -> TriMesh:
    """Quality triangulation of a truncation polygon at target edge length h.

    Guarantees (checked, MeshQualityError on failure): max edge <= 2h and
    minimum angle >= min_angle_deg.  Extra smoothing rounds are attempted
    before giving up.
    """
    if not h < poly.diameter / 2:
        raise MeshQualityError(f"h={h} too coarse for polygon diameter {poly.diameter}")
    boundary = _boundary_chain(poly, h)
    dense = _boundary_chain(poly, h / 4.0)
    kd = cKDTree(dense)
    lattice = _hex_lattice(poly, h)
    if len(lattice):
        if poly.convex:
            inside = poly.contains_points(lattice)
        else:
            inside = _polygon_path(poly).contains_points(lattice)
        clear = kd.query(lattice, k=1)[0] >= 0.62 * h
        lattice = lattice[inside & clear]
    pts = np.concatenate([boundary, lattice]) if len(lattice) else boundary
    nb = len(boundary)

    best = None
    rounds = 0
    max_rounds = max(smooth_rounds, 8)
    while True:
        mesh = mesh_from_points(pts, poly, h, nb)
        ang = mesh.min_angle_deg()
        if best is None or ang > best[1]:
            best = (mesh, ang)
        if rounds >= smooth_rounds and ang >= min_angle_deg:
            break  # keep the final (most-smoothed) mesh, not the best-angle one
        if rounds >= max_rounds:
            mesh, ang = best
            break
        pts = _lloyd_step(pts, nb, poly, kd, h)
        rounds += 1

    if ang < min_angle_deg:
        raise MeshQualityError(f"min angle {ang:.2f} deg below {min_angle_deg} after smoothing")
    if mesh.max_edge_length() > 2.0 * h:
        raise MeshQualityError(
            f"max edge {mesh.max_edge_length():.3g} exceeds 2h={2 * h:.3g}"
        )
    return mesh


def _lloyd_step(pts, nb, poly, kd, h):
    dt = Delaunay(pts)
    indptr, indices = dt.vertex_neighbor_vertices
    new = pts.copy()
    moved = []
    for i in range(nb, len(pts)):
        nbrs = indices[indptr[i] : indptr[i + 1]]
        if len(nbrs):
            new[i] = pts[nbrs].mean(axis=0)
            moved.append(i)
    if moved:
        moved = np.array(moved)
        cand = new[moved]
        if poly.convex:
            ok = poly.contains_points(cand)
        else:
            ok = _polygon_path(poly).contains_points(cand)
        ok &= kd.query(cand, k=1)[0] >= 0.5 * h
        revert = moved[~ok]
        new[revert] = pts[revert]
    return new


# ---------------------------------------------------------------------------
# tagging


def tag_boundary(mesh: TriMesh, poly: TruncationPolygon, tie_tol: float = 1e-7) -> TriMesh:
    """Retag boundary vertices by nearest parent feature: domain wall vs cut arc.

    Distances are measured to the parent domain's half-plane lines and to the
    circle of radius radius_k (the truncation construction keeps both at
    least `margin` away, with equality on the generating feature).  Vertices
    equidistant within tie_tol are tagged true_boundary.
    """
    tags = np.asarray(mesh.boundary_tag).copy()
    bidx = mesh.boundary_vertices
    if poly.parent is None:
        tags[bidx] = BoundaryTag.TRUE_BOUNDARY
        return mesh.with_tags(tags)
    pts = mesh.vertices[bidx]
    d_wall = np.min(
        np.stack([np.abs(hp.signed_margin(pts)) for hp in poly.parent.essential]), axis=0
    )
    d_arc = np.abs(poly.radius_k - np.linalg.norm(pts, axis=1))
    cut = d_arc < d_wall - tie_tol
    tags[bidx] = np.where(cut, BoundaryTag.CUT_BOUNDARY, BoundaryTag.TRUE_BOUNDARY)
    return mesh.with_tags(tags)


# ---------------------------------------------------------------------------
# ASCII dump


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_mesh(path, mesh: TriMesh, fields: dict | None = None) -> None:
    """Write the mesh (and optional named nodal fields) in the ASCII format."""
    lines = [f"MESH {mesh.num_vertices} {mesh.num_triangles}"]
    for (x, y), tag in zip(mesh.vertices, mesh.boundary_tag):
        lines.append(f"{_fmt(x)} {_fmt(y)} {int(tag)}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for name, values in (fields or {}).items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"field name must not contain whitespace: {name!r}")
        vals = values.values if isinstance(values, ScalarField) else values
        lines.append(f"FIELD {name}")
        lines.extend(_fmt(v) for v in np.asarray(vals, dtype=float))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read a mesh dump; returns (TriMesh, {name: values}).

    The target edge length is not part of the format; it is reconstructed as
    the median mesh edge length.
    """
    with open(path, encoding="utf-8") as f:
        tokens = f.read().split("\n")
    head = tokens[0].split()
    if len(head) != 3 or head[0] != "MESH":
        raise ValueError("not a mesh file: missing MESH header")
    nv, nt = int(head[1]), int(head[2])
    verts = np.empty((nv, 2))
    tags = np.empty(nv, dtype=np.uint8)
    for i in range(nv):
        x, y, tag = tokens[1 + i].split()
        verts[i] = (float(x), float(y))
        tags[i] = int(tag)
    tris = np.empty((nt, 3), dtype=np.int32)
    for i in range(nt):
        tris[i] = [int(s) for s in tokens[1 + nv + i].split()]
    pos = 1 + nv + nt
    fields = {}
    while pos < len(tokens) and tokens[pos].strip():
        tag_line = tokens[pos].split()
        if tag_line[0] != "FIELD" or len(tag_line) != 2:
            raise ValueError(f"expected FIELD line at row {pos}, got {tokens[pos]!r}")
        name = tag_line[1]
        vals = np.array([float(s) for s in tokens[pos + 1 : pos + 1 + nv]])
        fields[name] = vals
        pos += 1 + nv
    mesh = TriMesh(verts, tris, tags, h=1.0)
    ln = mesh.edge_lengths()
    mesh = TriMesh(verts, tris, tags, h=float(np.median(ln)))
    return mesh, fields
