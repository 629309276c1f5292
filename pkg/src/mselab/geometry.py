"""Unbounded convex planar domains and their polygonal truncations.

A domain is an intersection of open half-planes ``{x : n.x < o}`` with unit
normals ``n``.  Domains must be nonempty and unbounded (the recession cone
contains a nonzero direction).  Bounded computations happen on convex
polygonal truncations: the part of ``B_k`` (ball of radius ``k`` about the
origin) intersected with the domain that keeps a safety margin from the
boundary of ``B_k ∩ Ω``.  Truncations with margin ``1/k`` are nested in
``k``, which is what the exhaustion experiments rely on.

Circular arcs are polygonalized with inscribed chords, so truncations are
contained in ``B_k`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import math
import re

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "DomainKind",
    "HalfPlane",
    "ConvexDomain",
    "TruncationPolygon",
    "ExteriorCone",
    "EmptyTruncationError",
    "GeometryError",
    "halfplane",
    "half_space",
    "wedge",
    "slab",
    "contains",
    "inner_distance",
    "classify",
    "truncate",
    "exterior_cone",
    "polygon_region",
    "domain_from_spec",
]

_FEAS_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid domain or polygon construction."""


class EmptyTruncationError(GeometryError):
    """Truncation parameters produced an empty region."""


class DomainKind(str, Enum):
    HALF_SPACE = "half_space"
    SLAB = "slab"
    CONE = "cone"
    GENERAL_CONVEX = "general_convex"


@dataclass(frozen=True, eq=False)
class HalfPlane:
    """Open half-plane {x in R^2 : normal.x < offset} with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (2,):
            raise GeometryError(f"normal must be a 2-vector, got shape {n.shape}")
        if abs(np.hypot(n[0], n[1]) - 1.0) > 1e-12:
            raise GeometryError(f"normal must be unit length, got |n|={np.linalg.norm(n)!r}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_margin(self, points):
        """offset - normal.x, positive inside, for one point or an (N,2) array."""
        pts = np.asarray(points, dtype=float)
        return self.offset - pts @ self.normal


def halfplane(normal, offset) -> HalfPlane:
    """Build a HalfPlane from a not-necessarily-unit normal (offset rescaled)."""
    n = np.asarray(normal, dtype=float)
    s = np.hypot(n[0], n[1])
    if s == 0.0:
        raise GeometryError("normal must be nonzero")
    return HalfPlane(n / s, float(offset) / s)


def _linprog_max(c_max, A_ub, b_ub):
    """Maximize c_max.x over {A_ub x <= b_ub}; returns (status, value, x)."""
    if len(A_ub) == 0:
        return 3, math.inf, None
    res = linprog(
        -np.asarray(c_max, dtype=float),
        A_ub=np.asarray(A_ub, dtype=float),
        b_ub=np.asarray(b_ub, dtype=float),
        bounds=[(None, None)] * len(c_max),
        method="highs",
    )
    if res.status == 3:
        return 3, math.inf, None
    if res.status != 0:
        return res.status, math.nan, None
    return 0, -res.fun, res.x


def _nonredundant(halfplanes) -> list[HalfPlane]:
    """Drop half-planes whose removal does not change the intersection."""
    kept = list(halfplanes)
    i = 0
    while i < len(kept):
        others = kept[:i] + kept[i + 1 :]
        A = [hp.normal for hp in others]
        b = [hp.offset for hp in others]
        status, value, _ = _linprog_max(kept[i].normal, A, b)
        if status == 0 and value <= kept[i].offset + _FEAS_TOL:
            kept.pop(i)
        else:
            i += 1
    return kept


def _interior_point(halfplanes):
    """A point with positive clearance from every half-plane line, or None."""
    A = [list(hp.normal) + [1.0] for hp in halfplanes]
    b = [hp.offset for hp in halfplanes]
    A.append([0.0, 0.0, 1.0])
    b.append(1.0)
    status, value, x = _linprog_max([0.0, 0.0, 1.0], A, b)
    if status == 0 and value > _FEAS_TOL:
        return np.array(x[:2])
    if status == 3:  # cannot happen with the s<=1 cap
        return np.zeros(2)
    return None


def _recession_direction(halfplanes):
    """A nonzero direction d with normal.d <= 0 for every half-plane, or None."""
    A = [list(hp.normal) for hp in halfplanes]
    b = [0.0] * len(halfplanes)
    for obj in ([1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]):
        Abox = A + [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
        bbox = b + [1.0, 1.0, 1.0, 1.0]
        status, value, x = _linprog_max(obj, Abox, bbox)
        if status == 0 and value > _FEAS_TOL:
            d = np.array(x)
            return d / np.linalg.norm(d)
    return None


def classify(halfplanes) -> DomainKind:
    """Classify an intersection of half-planes after redundancy removal.

    half_space: one essential half-plane; slab: two with opposite normals;
    cone: all boundary lines meet in one apex; otherwise general_convex.
    """
    hps = _nonredundant(halfplanes)
    if len(hps) == 0:
        raise GeometryError("no essential half-planes (domain is the whole plane)")
    if len(hps) == 1:
        return DomainKind.HALF_SPACE
    if len(hps) == 2 and hps[0].normal @ hps[1].normal < -1.0 + 1e-9:
        return DomainKind.SLAB
    apex, residual = _common_apex(hps)
    if residual <= 1e-9:
        return DomainKind.CONE
    return DomainKind.GENERAL_CONVEX


def _common_apex(hps):
    N = np.array([hp.normal for hp in hps])
    o = np.array([hp.offset for hp in hps])
    apex, *_ = np.linalg.lstsq(N, o, rcond=None)
    residual = float(np.max(np.abs(N @ apex - o)))
    return apex, residual


class ConvexDomain:
    """Unbounded convex domain: intersection of open half-planes.

    Validates on construction that the interior is nonempty and that the
    recession cone is nontrivial; computes the kind tag.  Immutable after
    construction.
    """

    def __init__(self, halfplanes):
        hps = tuple(halfplanes)
        if not hps:
            raise GeometryError("need at least one half-plane")
        point = _interior_point(hps)
        if point is None:
            raise GeometryError("domain has empty interior")
        direction = _recession_direction(hps)
        if direction is None:
            raise GeometryError("domain is bounded; only unbounded domains are supported")
        self.halfplanes = hps
        self.essential = tuple(_nonredundant(hps))
        self.kind = classify(hps)
        self.interior_point = point
        self.recession_direction = direction

    def __repr__(self):
        return f"ConvexDomain(kind={self.kind.value}, n_halfplanes={len(self.halfplanes)})"


def contains(domain: ConvexDomain, x) -> bool | np.ndarray:
    """True iff normal_i.x < offset_i for every half-plane (strict).

    Accepts a single point (returns bool) or an (N,2) array (bool array).
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ok = np.ones(len(pts), dtype=bool)
    for hp in domain.halfplanes:
        ok &= hp.signed_margin(pts) > 0.0
    return bool(ok[0]) if single else ok


def inner_distance(domain: ConvexDomain, x) -> float | np.ndarray:
    """min_i (offset_i - normal_i.x): distance to the domain boundary.

    Equals the Euclidean distance to the boundary for points inside;
    zero or negative for points on or outside the boundary.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    margins = np.stack([hp.signed_margin(pts) for hp in domain.halfplanes])
    d = margins.min(axis=0)
    return float(d[0]) if single else d


# ---------------------------------------------------------------------------
# polygon clipping


def _cross2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _clip_halfplane(loop, normal, offset):
    """Sutherland-Hodgman clip of a closed CCW loop by {normal.x <= offset}."""
    if len(loop) == 0:
        return loop
    margins = offset - loop @ normal
    out = []
    n = len(loop)
    for i in range(n):
        j = (i + 1) % n
        a, b = loop[i], loop[j]
        ma, mb = margins[i], margins[j]
        if ma >= 0.0:
            out.append(a)
        if (ma > 0.0) != (mb > 0.0) and ma != mb:
            t = ma / (ma - mb)
            if 0.0 < t < 1.0:
                out.append(a + t * (b - a))
    return np.array(out) if out else np.empty((0, 2))


def _segment_circle_params(a, b, R):
    """Sorted parameters t in (0,1) where a+t(b-a) crosses the circle |x|=R."""
    d = b - a
    A = d @ d
    if A == 0.0:
        return []
    B = 2.0 * (a @ d)
    C = a @ a - R * R
    disc = B * B - 4.0 * A * C
    if disc <= 0.0:
        return []
    s = math.sqrt(disc)
    ts = sorted(((-B - s) / (2 * A), (-B + s) / (2 * A)))
    return [t for t in ts if 1e-12 < t < 1.0 - 1e-12]


def _arc_radius(R, ang):
    # stagger generated arc vertices a hair inward: exact cocircularity makes
    # qhull's degenerate-facet triangulation emit sliver simplices downstream
    return R * (1.0 - 2e-10 * (1.0 + math.sin(9631.0 * ang)))


def _clip_circle(loop, R, arc_resolution, fallback_center=None):
    """Clip a convex CCW loop by the disk |x| <= R, sampling arcs inscribed.

    arc_resolution is the chord count for a full circle; partial arcs get a
    proportional number of chords.
    """
    if len(loop) == 0:
        return loop
    r2 = np.einsum("ij,ij->i", loop, loop)
    inside = r2 <= R * R * (1.0 + 1e-14)
    pts = []
    exit_flag = []
    n = len(loop)
    crossed = False
    for i in range(n):
        j = (i + 1) % n
        a, b = loop[i], loop[j]
        cur = bool(inside[i])
        for t in _segment_circle_params(a, b, R):
            p = a + t * (b - a)
            p = p * (R / np.hypot(p[0], p[1]))  # snap exactly onto the circle
            pts.append(p)
            exit_flag.append(cur)  # leaving the disk iff we were inside
            cur = not cur
            crossed = True
        if cur:
            pts.append(b)
            exit_flag.append(False)
    if not crossed:
        if inside.all():
            return loop
        # no crossings and loop fully outside: disk inside loop, or disjoint
        center = np.zeros(2) if fallback_center is None else fallback_center
        if _point_in_convex_loop(center, loop) and np.hypot(*center) < R:
            ang = np.linspace(0.0, 2 * math.pi, arc_resolution, endpoint=False)
            rr = np.array([_arc_radius(R, a) for a in ang])
            return rr[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        return np.empty((0, 2))
    out = []
    m = len(pts)
    for i in range(m):
        out.append(pts[i])
        if exit_flag[i]:
            p, q = pts[i], pts[(i + 1) % m]
            a0 = math.atan2(p[1], p[0])
            a1 = math.atan2(q[1], q[0])
            sweep = (a1 - a0) % (2 * math.pi)
            chords = max(1, math.ceil(sweep / (2 * math.pi / arc_resolution)))
            for jj in range(1, chords):
                ang = a0 + sweep * jj / chords
                out.append(_arc_radius(R, ang) * np.array([math.cos(ang), math.sin(ang)]))
    return np.array(out)


def _point_in_convex_loop(p, loop):
    n = len(loop)
    for i in range(n):
        a, b = loop[i], loop[(i + 1) % n]
        if _cross2(b - a, p - a) < 0:
            return False
    return True


def _dedupe_loop(loop, tol):
    if len(loop) == 0:
        return loop
    keep = [0]
    for i in range(1, len(loop)):
        if np.hypot(*(loop[i] - loop[keep[-1]])) > tol:
            keep.append(i)
    if len(keep) > 1 and np.hypot(*(loop[keep[-1]] - loop[keep[0]])) <= tol:
        keep.pop()
    return loop[keep]


@dataclass
class TruncationPolygon:
    """Convex polygon cut out of B_k ∩ Ω with an inner safety margin.

    ``vertices`` is an open CCW loop.  ``parent`` is the originating domain
    (None for standalone polygons, e.g. benchmark squares).
    """

    vertices: np.ndarray
    radius_k: float
    margin: float
    parent: ConvexDomain | None = None
    convex: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 planar vertices")
        if _loop_area(v) < 0:
            v = v[::-1].copy()
        self.vertices = v
        if self.convex:
            e = np.roll(v, -1, axis=0) - v
            cross = _cross2(e, np.roll(e, -1, axis=0))
            scale = np.max(np.abs(v))
            if np.any(cross < -1e-9 * max(scale, 1.0) ** 2):
                raise GeometryError("truncation polygon is not convex")

    @property
    def area(self) -> float:
        return _loop_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = _cross2(v, w)
        a = cr.sum() / 2.0
        return ((v + w) * cr[:, None]).sum(axis=0) / (6.0 * a)

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)))

    def contains_points(self, points, tol=0.0):
        """Inside test (boundary counts as inside up to tol); convex only."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        ok = np.ones(len(pts), dtype=bool)
        for i in range(len(v)):
            rel = pts - v[i]
            ok &= e[i, 0] * rel[:, 1] - e[i, 1] * rel[:, 0] >= -tol
        return ok

    def scaled(self, factor: float) -> "TruncationPolygon":
        """Polygon scaled about its centroid (used for compact subsets)."""
        c = self.centroid
        return TruncationPolygon(
            c + factor * (self.vertices - c), self.radius_k, self.margin, self.parent
        )


def _loop_area(v):
    return float(_cross2(v, np.roll(v, -1, axis=0)).sum() / 2.0)


def truncate(
    domain: ConvexDomain, radius_k: float, margin: float = 0.0, arc_resolution: int = 96
) -> TruncationPolygon:
    """Convex polygonal truncation {x in B_k ∩ Ω : dist(x, ∂(B_k ∩ Ω)) >= margin}.

    The margin superlevel set of the inner distance of ``B_k ∩ Ω`` is the
    intersection of the shrunk ball ``B_{k-margin}`` with the margin-shifted
    half-planes; the arc is polygonalized with inscribed chords
    (``arc_resolution`` chords for a full circle).  With the schedule
    ``margin = 1/k`` successive truncations are nested.

    Raises EmptyTruncationError when the region has no interior.
    """
    if not (radius_k > 2 * margin >= 0):
        raise GeometryError(f"need radius_k > 2*margin >= 0, got k={radius_k}, margin={margin}")
    R = radius_k - margin
    half = 2.5 * radius_k
    loop = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    for hp in domain.essential:
        loop = _clip_halfplane(loop, hp.normal, hp.offset - margin)
        if len(loop) < 3:
            raise EmptyTruncationError("margin-shifted half-planes have empty intersection")
    loop = _clip_circle(loop, R, arc_resolution, fallback_center=domain.interior_point)
    loop = _dedupe_loop(loop, 1e-12 * radius_k)
    if len(loop) < 3 or _loop_area(loop) <= (1e-12 * radius_k) ** 2:
        raise EmptyTruncationError(f"truncation empty for k={radius_k}, margin={margin}")
    return TruncationPolygon(loop, float(radius_k), float(margin), domain)


def polygon_region(vertices, convex: bool = True) -> TruncationPolygon:
    """Standalone polygon (no parent domain); all boundary is 'true'."""
    v = np.asarray(vertices, dtype=float)
    return TruncationPolygon(
        v, float(np.max(np.linalg.norm(v, axis=1))), 0.0, None, convex=convex
    )


@dataclass(frozen=True)
class ExteriorCone:
    """Infinite wedge {x : angle(x - apex, axis) < half_angle} outside a domain."""

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float

    def contains_points(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.apex)
        r = np.linalg.norm(rel, axis=1)
        proj = rel @ np.asarray(self.axis)
        with np.errstate(invalid="ignore"):
            ok = proj > r * math.cos(self.half_angle)
        ok[r == 0] = False
        return ok


def exterior_cone(domain: ConvexDomain) -> ExteriorCone | None:
    """A wedge disjoint from the domain; None for half-spaces.

    Built on the outside of any essential half-plane: apex on its boundary
    line, axis along the outward normal, opening strictly below pi/2.
    """
    if domain.kind == DomainKind.HALF_SPACE:
        return None
    hp = domain.essential[0]
    apex = hp.offset * hp.normal
    return ExteriorCone(apex=apex, axis=hp.normal.copy(), half_angle=math.pi / 4)


# ---------------------------------------------------------------------------
# named constructors and config parsing


def half_space() -> ConvexDomain:
    """Upper half-plane {x2 > 0}."""
    return ConvexDomain([HalfPlane(np.array([0.0, -1.0]), 0.0)])


def wedge(angle: float) -> ConvexDomain:
    """Wedge of the given opening angle, apex at the origin, bisector +x2.

    angle must lie in (0, pi); the boundary rays sit at pi/2 ± angle/2.
    """
    if not 0.0 < angle < math.pi:
        raise GeometryError(f"wedge angle must be in (0, pi), got {angle}")
    a1 = math.pi / 2 - angle / 2
    a2 = math.pi / 2 + angle / 2
    d1 = np.array([math.cos(a1), math.sin(a1)])
    d2 = np.array([math.cos(a2), math.sin(a2)])
    n1 = np.array([d1[1], -d1[0]])
    n2 = np.array([-d2[1], d2[0]])
    return ConvexDomain([HalfPlane(n1, 0.0), HalfPlane(n2, 0.0)])


def slab(width: float) -> ConvexDomain:
    """Horizontal slab {0 < x2 < width}."""
    if width <= 0:
        raise GeometryError("slab width must be positive")
    return ConvexDomain(
        [HalfPlane(np.array([0.0, -1.0]), 0.0), HalfPlane(np.array([0.0, 1.0]), float(width))]
    )


_SHORTCUT_RE = re.compile(r"^\s*(half_space|wedge|slab)\s*(?:\(\s*([-0-9.eE]+)\s*\))?\s*$")


def domain_from_spec(spec) -> ConvexDomain:
    """Parse a domain from config: a shortcut string or a half-plane list.

    Accepted: "half_space", "wedge(angle)", "slab(width)", or
    {"halfplanes": [{"normal": [a, b], "offset": c}, ...]}.
    """
    if isinstance(spec, str):
        m = _SHORTCUT_RE.match(spec)
        if not m:
            raise GeometryError(f"unrecognized domain shortcut {spec!r}")
        name, arg = m.group(1), m.group(2)
        if name == "half_space":
            if arg is not None:
                raise GeometryError("half_space takes no argument")
            return half_space()
        if arg is None:
            raise GeometryError(f"{name} requires a numeric argument")
        return wedge(float(arg)) if name == "wedge" else slab(float(arg))
    if isinstance(spec, dict) and "halfplanes" in spec:
        hps = [halfplane(e["normal"], e["offset"]) for e in spec["halfplanes"]]
        return ConvexDomain(hps)
    raise GeometryError(f"cannot parse domain spec {spec!r}")
