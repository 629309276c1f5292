"""Dirichlet solver for the minimal surface equation on a triangle mesh.

The discrete problem minimizes the graph area of the P1 interpolant,

    E(u) = sum_T |T| * sqrt(1 + |grad u|_T^2),

whose stationarity condition is the finite element form of
Div(grad u / sqrt(1 + |grad u|^2)) = 0.  E is smooth and strictly convex in
the nodal values, so a damped Newton iteration (Armijo backtracking on E)
converges globally to the unique discrete solution; the per-triangle Hessian
of F(p) = sqrt(1+|p|^2) is

    D2F(p) = I / s - p p^T / s^3,   s = sqrt(1 + |p|^2),

symmetric positive definite for every gradient value.

Boundary data is the sum of a linear function, an optional tilt ``c * x2``
(the half-space family parameter), and a bounded uniformly continuous
perturbation from a small registry.  Boundary nodal values are imposed
exactly; the Newton system is solved on interior nodes only, by
Jacobi-preconditioned conjugate gradients (default) or a sparse direct
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshing import BoundaryTag, ScalarField, TriMesh

__all__ = [
    "PhiFunction",
    "BoundaryData",
    "SolveOptions",
    "SolveReport",
    "NonConvergenceError",
    "SingularLinearSolveError",
    "PHI_REGISTRY",
    "make_phi",
    "energy",
    "residual",
    "hessian",
    "solve_dirichlet",
]


class NonConvergenceError(RuntimeError):
    """Newton failed to reach the residual tolerance; carries the report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class SingularLinearSolveError(RuntimeError):
    """The inner linear solve broke down (should not happen: SPD system)."""


# ---------------------------------------------------------------------------
# boundary data


@dataclass(frozen=True)
class PhiFunction:
    """Bounded uniformly continuous perturbation with known sup norm."""

    name: str
    params: dict
    func: callable
    sup: float
    smooth: bool  # continuously differentiable with bounded derivative

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.func(pts)


def _phi_zero():
    return PhiFunction("zero", {}, lambda p: np.zeros(len(p)), 0.0, True)


def _phi_gaussian_bump(amp=1.0, center=(0.0, 0.0), width=1.0):
    c = np.asarray(center, dtype=float)
    w = float(width)
    if w <= 0:
        raise ValueError("gaussian_bump width must be positive")

    def f(p):
        d2 = np.sum((p - c) ** 2, axis=1)
        return amp * np.exp(-d2 / (2 * w * w))

    return PhiFunction(
        "gaussian_bump", {"amp": amp, "center": tuple(c), "width": w}, f, abs(amp), True
    )


def _phi_bounded_sine(amp=1.0, freq=1.0):
    def f(p):
        return amp * np.sin(freq * p[:, 0])

    return PhiFunction("bounded_sine", {"amp": amp, "freq": freq}, f, abs(amp), True)


def _phi_compact_hat(amp=1.0, center=(0.0, 0.0), radius=1.0):
    c = np.asarray(center, dtype=float)
    r = float(radius)
    if r <= 0:
        raise ValueError("compact_hat radius must be positive")

    def f(p):
        d = np.linalg.norm(p - c, axis=1)
        return amp * np.clip(1.0 - d / r, 0.0, None)

    return PhiFunction(
        "compact_hat", {"amp": amp, "center": tuple(c), "radius": r}, f, abs(amp), False
    )


PHI_REGISTRY = {
    "zero": _phi_zero,
    "gaussian_bump": _phi_gaussian_bump,
    "bounded_sine": _phi_bounded_sine,
    "compact_hat": _phi_compact_hat,
}


def make_phi(name: str, **params) -> PhiFunction:
    """Instantiate a registered perturbation by name."""
    if name not in PHI_REGISTRY:
        raise KeyError(f"unknown phi {name!r}; valid: {sorted(PHI_REGISTRY)}")
    return PHI_REGISTRY[name](**params)


@dataclass(frozen=True)
class BoundaryData:
    """Boundary value g(x) = p.x + q + c*x2 + phi(x)."""

    p: tuple = (0.0, 0.0)
    q: float = 0.0
    c: float = 0.0
    phi: PhiFunction = field(default_factory=_phi_zero)

    @property
    def phi_sup(self) -> float:
        return self.phi.sup

    def linear(self, points) -> np.ndarray:
        """The linear part l(x) = p.x + q."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ np.asarray(self.p, dtype=float) + self.q

    def plane(self, points) -> np.ndarray:
        """l(x) + c*x2, the approximate hyperplane of the solution."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.linear(pts) + self.c * pts[:, 1]

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.plane(pts) + self.phi(pts)

    def with_c(self, c: float) -> "BoundaryData":
        return replace(self, c=float(c))


# ---------------------------------------------------------------------------
# energy, gradient, Hessian


def _values_of(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def energy(mesh: TriMesh, fld) -> float:
    """Graph area of the P1 interpolant."""
    g = mesh.gradients(_values_of(fld))
    return float(np.sum(mesh.areas * np.sqrt(1.0 + np.einsum("td,td->t", g, g))))


def residual(mesh: TriMesh, fld) -> np.ndarray:
    """Nodal gradient of the area: dE/du_i for every node (boundary included).

    The solve only drives interior entries to zero; boundary entries are the
    boundary flux of the discrete solution.
    """
    values = _values_of(fld)
    g = mesh.gradients(values)
    s = np.sqrt(1.0 + np.einsum("td,td->t", g, g))
    w = (mesh.areas / s)[:, None] * g  # (m,2)
    contrib = np.einsum("tkd,td->tk", mesh.basis_gradients, w)
    out = np.zeros(mesh.num_vertices)
    np.add.at(out, mesh.triangles, contrib)
    return out


def _coefficients(g):
    """Per-triangle D2F(grad u): (m,2,2) SPD matrices."""
    s2 = 1.0 + np.einsum("td,td->t", g, g)
    s = np.sqrt(s2)
    eye = np.eye(2)[None, :, :]
    return eye / s[:, None, None] - g[:, :, None] * g[:, None, :] / (s2 * s)[:, None, None]


def _assemble(mesh: TriMesh, coeff_tri) -> sp.csr_matrix:
    """Stiffness matrix sum_T |T| grad(l_i).A_T.grad(l_j) on all nodes."""
    L = mesh.basis_gradients
    local = np.einsum("t,tia,tab,tjb->tij", mesh.areas, L, coeff_tri, L)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.num_vertices, mesh.num_vertices)
    )
    return K.tocsr()


def hessian(mesh: TriMesh, fld, interior_only: bool = True):
    """Second derivative of the area w.r.t. nodal values (sparse symmetric).

    By default restricted to interior nodes, which is the SPD system the
    Newton step solves.
    """
    K = _assemble(mesh, _coefficients(mesh.gradients(_values_of(fld))))
    if not interior_only:
        return K
    idx = mesh.interior_vertices
    return K[np.ix_(idx, idx)].tocsr()


# ---------------------------------------------------------------------------
# Newton solve


@dataclass
class SolveOptions:
    tol: float | None = None  # default 1e-9 * mean triangle area
    max_iters: int = 60
    linear_solver: str = "cg"  # or "direct"
    cg_tol: float = 1e-10
    armijo_c1: float = 1e-4
    init: object = "linear"  # "linear", "zero", or nodal array


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    energy_trace: list
    line_search_steps: list
    converged: bool

    def csv_row(self, scenario_id: str) -> str:
        return (
            f"{scenario_id},{self.iterations},{self.final_residual:.17g},"
            f"{self.energy_trace[-1]:.17g}"
        )


def _boundary_values(mesh, data):
    """Nodal Dirichlet values on boundary vertices from the various forms."""
    bidx = mesh.boundary_vertices
    if isinstance(data, BoundaryData):
        return data(mesh.vertices[bidx])
    if callable(data):
        return np.asarray(data(mesh.vertices[bidx]), dtype=float)
    arr = np.asarray(data, dtype=float)
    if arr.shape == (mesh.num_vertices,):
        return arr[bidx]
    if arr.shape == (len(bidx),):
        return arr
    raise ValueError("boundary data must be BoundaryData, callable, or nodal array")


def _solve_spd(K, rhs, opts: SolveOptions):
    if K.shape[0] == 0:
        return np.zeros(0)
    if opts.linear_solver == "direct":
        try:
            lu = spla.splu(K.tocsc())
            x = lu.solve(rhs)
            x += lu.solve(rhs - K @ x)  # one refinement step: kills kappa*eps error
            return x
        except RuntimeError as exc:
            raise SingularLinearSolveError(str(exc)) from exc
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise SingularLinearSolveError("nonpositive diagonal in SPD system")
    M = sp.diags(1.0 / diag)
    x, info = spla.cg(K, rhs, rtol=opts.cg_tol, atol=0.0, M=M, maxiter=40 * K.shape[0])
    if info != 0:
        raise SingularLinearSolveError(f"CG failed to converge (info={info})")
    return x


def solve_dirichlet(mesh: TriMesh, data, opts: SolveOptions | None = None):
    """Solve the discrete minimal surface equation with Dirichlet data.

    data: BoundaryData, a callable g(points), or a nodal array.  Returns
    (ScalarField, SolveReport).  Boundary values are imposed exactly;
    convergence means the interior residual max-norm is at or below tol.

    Raises NonConvergenceError (with the report attached) if max_iters is
    exhausted.
    """
    opts = opts or SolveOptions()
    tol = opts.tol if opts.tol is not None else 1e-9 * float(mesh.areas.mean())
    bidx = mesh.boundary_vertices
    iidx = mesh.interior_vertices
    gb = _boundary_values(mesh, data)

    u = _initial_values(mesh, data, opts, gb)
    u[bidx] = gb

    if len(gb) and np.ptp(gb) == 0.0:
        # constant data: the flat graph is the exact minimizer
        u[:] = gb[0]
        report = SolveReport(0, 0.0, [energy(mesh, u)], [], True)
        return ScalarField(mesh, u), report

    energy_trace = [energy(mesh, u)]
    steps = []
    converged = False
    res_inf = math.inf
    it = 0
    stalls = 0
    for it in range(opts.max_iters + 1):
        r = residual(mesh, u)
        res_inf = float(np.max(np.abs(r[iidx]))) if len(iidx) else 0.0
        if res_inf <= tol:
            converged = True
            break
        if it == opts.max_iters:
            break
        K = hessian(mesh, u)
        d = _solve_spd(K, -r[iidx], opts)
        slope = float(r[iidx] @ d)  # negative for a descent direction
        e0 = energy_trace[-1]
        noise_floor = 30.0 * np.finfo(float).eps * (abs(e0) + 1.0)
        n_back = 0
        if -opts.armijo_c1 * slope <= noise_floor:
            # expected decrease is below the fp resolution of the energy:
            # quadratic basin, take the pure Newton step (guarded below)
            trial = u.copy()
            trial[iidx] += d
            e1 = energy(mesh, trial)
            stalls += 1
            if stalls > 8:
                raise NonConvergenceError(
                    "residual stagnated at the floating-point floor",
                    SolveReport(it, res_inf, energy_trace, steps, False),
                )
        else:
            stalls = 0
            t = 1.0
            while True:
                trial = u.copy()
                trial[iidx] += t * d
                e1 = energy(mesh, trial)
                if e1 <= e0 + opts.armijo_c1 * t * slope:
                    break
                t *= 0.5
                n_back += 1
                if n_back > 60:
                    raise NonConvergenceError(
                        "line search failed to descend",
                        SolveReport(it, res_inf, energy_trace, steps, False),
                    )
        u = trial
        energy_trace.append(e1)
        steps.append(n_back)

    report = SolveReport(it, res_inf, energy_trace, steps, converged)
    if not converged:
        raise NonConvergenceError(
            f"Newton did not reach tol={tol:g} in {opts.max_iters} iterations "
            f"(residual {res_inf:g})",
            report,
        )
    return ScalarField(mesh, u), report


def _initial_values(mesh, data, opts, gb):
    if isinstance(opts.init, str):
        if opts.init == "linear":
            if isinstance(data, BoundaryData):
                return np.asarray(data.plane(mesh.vertices), dtype=float)
            u = np.zeros(mesh.num_vertices)
            u[mesh.boundary_vertices] = gb
            return u
        if opts.init == "zero":
            return np.zeros(mesh.num_vertices)
        if opts.init == "harmonic":
            # boundary-harmonic extension: one Laplace solve, avoids the
            # O(phi) kink of the plane interpolant along the wall
            K = _assemble(mesh, _coefficients(np.zeros((mesh.num_triangles, 2))))
            iidx, bidx = mesh.interior_vertices, mesh.boundary_vertices
            u = np.zeros(mesh.num_vertices)
            u[bidx] = gb
            rhs = -K[iidx][:, bidx] @ gb
            u[iidx] = _solve_spd(K[np.ix_(iidx, iidx)].tocsr(), rhs, opts)
            return u
        raise ValueError(f"unknown init {opts.init!r}")
    arr = np.asarray(opts.init, dtype=float)
    if arr.shape != (mesh.num_vertices,):
        raise ValueError("init array must have one value per vertex")
    return arr.copy()
