"""Uniformly elliptic divergence-form solves and oscillation measurements.

Assembles P1 stiffness matrices for div(A(x) grad u) = 0 with one-point
(barycenter) coefficient evaluation, which is exact for piecewise-constant
coefficients and matches the per-triangle linearization of the minimal
surface operator,

    A(g) = I / s - g g^T / s^3,   s = sqrt(1 + |g|^2),

whose eigenvalues are 1/s^3 (along g) and 1/s.

Positive solutions on truncated cones vanish on the lateral boundary and are
driven by data on the spherical cap; their radial profile osc(r) = max of u
over the arc of radius r inside the domain either grows or decays at a power
rate.  In a plane sector of opening theta the Laplace exponent is pi/theta
(first Dirichlet eigenvalue of the arc is (pi/theta)^2).  Profiles are fit
by least squares on log osc vs log r; by default the fit uses the outer half
of the radii, drops the outermost 10% (cap contamination), and ignores
r < 2h (apex resolution).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ConvexDomain, DomainKind, TruncationPolygon, _common_apex, contains
from .meshing import BoundaryTag, ScalarField, TriMesh, mesh_from_points
from .solver import SingularLinearSolveError

__all__ = [
    "CoefficientField",
    "OscillationProfile",
    "EllipticityError",
    "assemble",
    "linearized_coefficients",
    "solve_linear_dirichlet",
    "sector_frame",
    "graded_sector_mesh",
    "cone_positive_solution",
    "cone_lateral_bump_solution",
    "oscillation_profile",
    "fit_power_exponent",
    "default_fit_range",
    "measure_oscillation_drop",
    "write_profile",
]


class EllipticityError(ValueError):
    """Coefficient matrix violates the ellipticity bounds at a sample point."""


@dataclass
class CoefficientField:
    """Symmetric 2x2 coefficient A(x) with ellipticity constant lam in (0,1].

    Either an evaluator (points -> (n,2,2) matrices) or a fixed per-triangle
    matrix array tied to a mesh.
    """

    lam: float
    evaluator: object = None
    matrices: np.ndarray | None = None

    @staticmethod
    def identity() -> "CoefficientField":
        def ev(pts):
            return np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()

        return CoefficientField(lam=1.0, evaluator=ev)

    @staticmethod
    def from_callable(func, lam: float) -> "CoefficientField":
        return CoefficientField(lam=float(lam), evaluator=func)

    def on_triangles(self, mesh: TriMesh) -> np.ndarray:
        if self.matrices is not None:
            if len(self.matrices) != mesh.num_triangles:
                raise ValueError("per-triangle coefficient array does not match mesh")
            return self.matrices
        bary = mesh.vertices[mesh.triangles].mean(axis=1)
        return np.asarray(self.evaluator(bary), dtype=float)


def _check_ellipticity(mats, lam, tol=1e-9):
    a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 1]
    asym = np.max(np.abs(mats[:, 0, 1] - mats[:, 1, 0]))
    if asym > 1e-12:
        raise EllipticityError(f"coefficient not symmetric (max asymmetry {asym:g})")
    half_tr = (a + c) / 2.0
    rad = np.sqrt(np.maximum(((a - c) / 2.0) ** 2 + b**2, 0.0))
    lo, hi = half_tr - rad, half_tr + rad
    if np.any(lo < lam - tol) or np.any(hi > 1.0 / lam + tol):
        raise EllipticityError(
            f"eigenvalues [{lo.min():.3g}, {hi.max():.3g}] escape [{lam:.3g}, {1/lam:.3g}]"
        )


def assemble(mesh: TriMesh, A: CoefficientField) -> sp.csr_matrix:
    """P1 stiffness matrix for div(A grad u), coefficients at barycenters.

    Full (all-node) matrix: symmetric, positive semidefinite with constants
    in the kernel before boundary conditions are applied.
    """
    mats = A.on_triangles(mesh)
    _check_ellipticity(mats, A.lam)
    L = mesh.basis_gradients
    local = np.einsum("t,tia,tab,tjb->tij", mesh.areas, L, mats, L)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.num_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def linearized_coefficients(mesh: TriMesh, fld) -> CoefficientField:
    """Per-triangle linearization of the minimal surface operator at a field."""
    values = fld.values if isinstance(fld, ScalarField) else np.asarray(fld, dtype=float)
    g = mesh.gradients(values)
    s2 = 1.0 + np.einsum("td,td->t", g, g)
    s = np.sqrt(s2)
    mats = np.eye(2)[None] / s[:, None, None] - g[:, :, None] * g[:, None, :] / (
        s2 * s
    )[:, None, None]
    lam = float((1.0 + np.max(s2 - 1.0)) ** -1.5)
    return CoefficientField(lam=lam, matrices=mats)


def _dirichlet_values(mesh: TriMesh, bc) -> np.ndarray:
    """Boundary values from a callable, nodal array, or per-tag dict."""
    bidx = mesh.boundary_vertices
    if isinstance(bc, dict):
        vals = np.zeros(len(bidx))
        tags = mesh.boundary_tag[bidx]
        for tag, spec in bc.items():
            sel = tags == int(tag)
            if callable(spec):
                vals[sel] = spec(mesh.vertices[bidx[sel]])
            else:
                vals[sel] = float(spec)
        return vals
    if callable(bc):
        return np.asarray(bc(mesh.vertices[bidx]), dtype=float)
    arr = np.asarray(bc, dtype=float)
    if arr.shape == (mesh.num_vertices,):
        return arr[bidx]
    if arr.shape == (len(bidx),):
        return arr
    raise ValueError("boundary values must be dict, callable, or nodal array")


def solve_linear_dirichlet(
    mesh: TriMesh, A: CoefficientField, bc, tol: float = 1e-10, solver: str = "cg"
) -> ScalarField:
    """Solve div(A grad u)=0 with Dirichlet data bc; returns the nodal field."""
    K = assemble(mesh, A)
    bidx = mesh.boundary_vertices
    iidx = mesh.interior_vertices
    gb = _dirichlet_values(mesh, bc)
    u = np.zeros(mesh.num_vertices)
    u[bidx] = gb
    rhs = -K[iidx][:, bidx] @ gb
    Kii = K[np.ix_(iidx, iidx)].tocsr()
    if solver == "direct":
        try:
            u[iidx] = spla.splu(Kii.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SingularLinearSolveError(str(exc)) from exc
    else:
        diag = Kii.diagonal()
        if np.any(diag <= 0):
            raise SingularLinearSolveError("nonpositive diagonal")
        x, info = spla.cg(
            Kii, rhs, rtol=tol, atol=0.0, M=sp.diags(1.0 / diag), maxiter=40 * len(iidx)
        )
        if info != 0:
            raise SingularLinearSolveError(f"CG failed (info={info})")
        u[iidx] = x
    return ScalarField(mesh, u)


# ---------------------------------------------------------------------------
# cones


def sector_frame(domain: ConvexDomain):
    """(apex, start_angle, opening) of a cone domain's sector.

    A half-space counts as the degenerate sector of opening pi, with the
    apex at the boundary point closest to the origin.
    """
    if domain.kind == DomainKind.HALF_SPACE:
        hp = domain.essential[0]
        apex = hp.offset * hp.normal
        inward = math.atan2(-hp.normal[1], -hp.normal[0])
        return apex, inward - math.pi / 2, math.pi
    if domain.kind != DomainKind.CONE:
        raise ValueError(f"domain kind {domain.kind.value} is not a cone")
    hps = domain.essential
    if len(hps) != 2:
        raise ValueError("cone domain must reduce to two essential half-planes")
    apex, _ = _common_apex(hps)
    rays = []
    for i, hp in enumerate(hps):
        other = hps[1 - i]
        d = np.array([-hp.normal[1], hp.normal[0]])
        if other.signed_margin(apex + d) < other.signed_margin(apex - d):
            d = -d
        rays.append(math.atan2(d[1], d[0]))
    a0, a1 = rays
    theta = (a1 - a0) % (2 * math.pi)
    if theta > math.pi:
        a0, a1 = a1, a0
        theta = (a1 - a0) % (2 * math.pi)
    return apex, a0, theta


def graded_sector_mesh(
    domain: ConvexDomain,
    radius_k: float,
    h_min: float = 0.02,
    grade: float = 0.06,
    h_max: float = math.inf,
) -> TriMesh:
    """Ring-graded mesh of the sector out to radius_k around the apex.

    Local target size h(r) = clip(grade*r, h_min, h_max); rings of points at
    matching angular spacing keep the triangles near-isotropic at every
    scale.  Lateral vertices are tagged true_boundary, the outer arc
    cut_boundary (corners and the apex resolve to true_boundary).
    """
    apex, a0, theta = sector_frame(domain)

    def hr(r):
        return min(max(grade * r, h_min), h_max)

    radii = []
    r = hr(0.0)
    while r < radius_k:
        radii.append(r)
        r += hr(r)
    if radii and radius_k - radii[-1] < 0.5 * hr(radii[-1]):
        radii[-1] = radius_k
    else:
        radii.append(radius_k)

    pts = [apex]
    for r in radii:
        nseg = max(2, math.ceil(theta * r / hr(r)))
        ang = a0 + theta * np.arange(nseg + 1) / nseg
        ring = apex + r * np.column_stack([np.cos(ang), np.sin(ang)])
        pts.append(ring)
    pts = np.vstack([np.atleast_2d(p) for p in pts])

    nseg_out = max(2, math.ceil(theta * radius_k / hr(radius_k)))
    ang_out = a0 + theta * np.arange(nseg_out + 1) / nseg_out
    outline = np.vstack(
        [apex[None, :], apex + radius_k * np.column_stack([np.cos(ang_out), np.sin(ang_out)])]
    )
    poly = TruncationPolygon(outline, radius_k, 0.0, domain)
    mesh = mesh_from_points(pts, poly, h_min, n_boundary=0)

    tags = np.zeros(mesh.num_vertices, dtype=np.uint8)
    b = mesh.boundary_vertices
    bp = mesh.vertices[b]
    d_wall = np.min(np.stack([np.abs(hp.signed_margin(bp)) for hp in domain.essential]), axis=0)
    d_arc = np.abs(radius_k - np.linalg.norm(bp - apex, axis=1))
    tags[b] = np.where(d_arc < d_wall - 1e-9 * radius_k, BoundaryTag.CUT_BOUNDARY,
                       BoundaryTag.TRUE_BOUNDARY)
    return mesh.with_tags(tags)


def _default_cap(domain):
    apex, a0, theta = sector_frame(domain)

    def cap(pts):
        rel = np.atleast_2d(pts) - apex
        ang = (np.arctan2(rel[:, 1], rel[:, 0]) - a0) % (2 * math.pi)
        return np.sin(np.pi * np.clip(ang, 0.0, theta) / theta)

    return cap


def cone_positive_solution(
    domain: ConvexDomain,
    radius_k: float,
    cap_data=None,
    P=None,
    coeff: CoefficientField | None = None,
    h_min: float = 0.02,
    grade: float = 0.06,
    h_max: float = math.inf,
    solver: str = "direct",
    mesh: TriMesh | None = None,
) -> ScalarField:
    """Positive solution on the truncated cone, normalized to 1 at P.

    Zero Dirichlet data on the lateral boundary, cap_data (default: first
    eigenfunction shape of the arc) on the spherical cap.  P defaults to the
    point at unit distance from the apex on the bisector.
    """
    apex, a0, theta = sector_frame(domain)
    if mesh is None:
        mesh = graded_sector_mesh(domain, radius_k, h_min=h_min, grade=grade, h_max=h_max)
    cap = cap_data or _default_cap(domain)
    cut = mesh.boundary_vertices[
        mesh.boundary_tag[mesh.boundary_vertices] == BoundaryTag.CUT_BOUNDARY
    ]
    cap_vals = np.asarray(cap(mesh.vertices[cut]), dtype=float)
    if np.any(cap_vals < -1e-12) or not np.any(cap_vals > 0):
        raise ValueError("cap data must be nonnegative and positive somewhere")
    u = solve_linear_dirichlet(
        mesh,
        coeff or CoefficientField.identity(),
        {BoundaryTag.TRUE_BOUNDARY: 0.0, BoundaryTag.CUT_BOUNDARY: cap},
        solver=solver,
    )
    if P is None:
        bis = a0 + theta / 2.0
        P = apex + np.array([math.cos(bis), math.sin(bis)])
    P = np.asarray(P, dtype=float)
    if not contains(domain, P):
        raise ValueError("normalization point P must lie inside the cone")
    uP = float(mesh.interpolate(u.values, P[None, :])[0])
    if not np.isfinite(uP) or uP <= 0:
        raise ValueError(f"normalization point P outside mesh or u(P)={uP:g} not positive")
    return ScalarField(mesh, u.values / uP)


def cone_lateral_bump_solution(
    domain: ConvexDomain,
    radius_k: float,
    bump,
    coeff: CoefficientField | None = None,
    h_min: float = 0.02,
    grade: float = 0.06,
    h_max: float = math.inf,
    solver: str = "direct",
    mesh: TriMesh | None = None,
) -> ScalarField:
    """Decaying-branch solve: bump data on the lateral walls, zero far cap."""
    if mesh is None:
        mesh = graded_sector_mesh(domain, radius_k, h_min=h_min, grade=grade, h_max=h_max)
    return solve_linear_dirichlet(
        mesh,
        coeff or CoefficientField.identity(),
        {BoundaryTag.TRUE_BOUNDARY: bump, BoundaryTag.CUT_BOUNDARY: 0.0},
        solver=solver,
    )


# ---------------------------------------------------------------------------
# oscillation


@dataclass
class OscillationProfile:
    """Samples of r -> max of u over the arc of radius r inside the domain."""

    radii: np.ndarray
    osc_values: np.ndarray
    fitted_beta: float = math.nan
    fit_range: tuple | None = None
    fit_residual: float = math.nan
    meta: dict = dfield(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.osc_values = np.asarray(self.osc_values, dtype=float)
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if len(self.radii) != len(self.osc_values):
            raise ValueError("radii and osc_values length mismatch")


def oscillation_profile(
    fld: ScalarField,
    domain: ConvexDomain | None,
    radii,
    center=(0.0, 0.0),
    min_samples: int = 128,
) -> OscillationProfile:
    """Sample osc(r) along circles about center, masked to the domain/mesh.

    Angular resolution follows the mesh target size: at least 2*pi*r/h
    samples per circle.  Raises if some circle misses the mesh entirely.
    """
    mesh = fld.mesh
    center = np.asarray(center, dtype=float)
    osc = []
    for r in radii:
        n = max(min_samples, int(math.ceil(2 * math.pi * r / mesh.h)))
        ang = 2 * math.pi * np.arange(n) / n
        pts = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
        ok = np.ones(n, dtype=bool)
        if domain is not None:
            ok &= contains(domain, pts)
        vals = np.full(n, np.nan)
        if ok.any():
            vals[ok] = fld.at(pts[ok])
        valid = np.isfinite(vals)
        if not valid.any():
            raise ValueError(f"circle r={r} does not intersect the mesh")
        osc.append(float(np.max(vals[valid])))
    return OscillationProfile(np.asarray(radii, dtype=float), np.array(osc))


def default_fit_range(profile: OscillationProfile, h: float) -> tuple:
    """Outer half of the radii, dropping the outermost 10% and r < 2h."""
    r = profile.radii
    admissible = np.flatnonzero(r >= 2 * h)
    if len(admissible) < 4:
        raise ValueError("not enough radii beyond the apex exclusion 2h")
    n = len(admissible)
    lo = int(admissible[n // 2])
    hi = int(admissible[n - 1 - max(1, n // 10) + 1])
    if hi - lo + 1 < 4:
        lo = max(int(admissible[0]), hi - 3)
    return lo, hi + 1


def fit_power_exponent(profile: OscillationProfile, fit_range: tuple | None = None) -> float:
    """Least-squares slope of log osc vs log r on [i, j); records the fit."""
    if fit_range is None:
        n = len(profile.radii)
        fit_range = (n // 2, n - max(1, n // 10))
    i, j = fit_range
    r = profile.radii[i:j]
    osc = profile.osc_values[i:j]
    if len(r) < 4:
        raise ValueError(f"need at least 4 samples in fit range, got {len(r)}")
    if np.any(osc <= 0):
        raise ValueError("nonpositive oscillation value in fit range")
    lr, lo = np.log(r), np.log(osc)
    beta, intercept = np.polyfit(lr, lo, 1)
    resid = float(np.sqrt(np.mean((lo - (beta * lr + intercept)) ** 2)))
    profile.fitted_beta = float(beta)
    profile.fit_range = (int(i), int(j))
    profile.fit_residual = resid
    return float(beta)


@dataclass(frozen=True)
class DropMeasurement:
    r: float
    osc_r: float
    osc_2r: float
    osc_4r: float
    delta: float


def measure_oscillation_drop(
    fld: ScalarField, domain: ConvexDomain | None, r: float, center=(0.0, 0.0)
) -> DropMeasurement:
    """One-step drop of the positive part across the annulus r..4r.

    delta = 1 - osc(2r) / max(osc(r), osc(4r)); positive delta is the
    contraction the maximum principle forces on solutions that vanish on the
    lateral boundary of the annulus.
    """
    prof = oscillation_profile(fld, domain, [r, 2 * r, 4 * r], center=center)
    o1, o2, o4 = (max(v, 0.0) for v in prof.osc_values)
    denom = max(o1, o4)
    if denom <= 0:
        raise ValueError("positive part vanishes on the annulus boundary arcs")
    return DropMeasurement(r, o1, o2, o4, 1.0 - o2 / denom)


def write_profile(path, profile: OscillationProfile) -> None:
    """CSV dump: r,osc rows plus a trailing fit comment."""
    lines = ["r,osc"]
    for r, o in zip(profile.radii, profile.osc_values):
        lines.append(f"{r:.17g},{o:.17g}")
    i, j = profile.fit_range if profile.fit_range else (0, 0)
    lines.append(
        f"# beta={profile.fitted_beta:.17g} residual={profile.fit_residual:.17g} range={i},{j}"
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
