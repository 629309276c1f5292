"""Theorem-level experiments: exhaustion, comparison, foliation, linearization.

Each driver discretizes a truncated domain, runs minimal-surface solves, and
measures the quantity the corresponding statement is about:

* run_exhaustion: solves on a growing truncation schedule and tracks
  sup-norm increments on a fixed compact subset, plus the final deviation
  from the linear part (bounded by the perturbation sup norm).
* comparison_test: two solves with ordered boundary data; reports the
  largest interior violation of the ordering.
* foliation_sweep: the half-space family u_c with boundary l + c*x2 + phi;
  leaves stay within sup|phi| of their plane and never cross.
* recover_slope: reads the slope parameter c back off a solved leaf from
  far-field samples, with a certificate interval.
* linearization_check: compares the leaf difference quotient in c against
  the solution of the linearized (divergence-form) equation, which is the
  exact derivative of the discrete solution map.
* uniqueness_stress: one minimizer from many Newton starting points.

Every driver optionally dumps artifacts as
out_dir/<scenario>/<stage>/{mesh.txt, field.txt, report.csv}.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dfield
from pathlib import Path

import numpy as np

from .geometry import ConvexDomain, DomainKind, TruncationPolygon, truncate
from .linear import linearized_coefficients, solve_linear_dirichlet
from .meshing import BoundaryTag, ScalarField, TriMesh, tag_boundary, triangulate, write_mesh
from .solver import BoundaryData, SolveOptions, SolveReport, solve_dirichlet

__all__ = [
    "BoundaryOrderError",
    "CertificateError",
    "ExhaustionRun",
    "ComparisonResult",
    "FoliationRun",
    "SlopeEstimate",
    "LinearizationCheck",
    "UniquenessResult",
    "run_exhaustion",
    "comparison_test",
    "foliation_sweep",
    "recover_slope",
    "linearization_check",
    "uniqueness_stress",
]


class BoundaryOrderError(ValueError):
    """comparison_test precondition g1 <= g2 fails at some boundary node."""


class CertificateError(RuntimeError):
    """No admissible slope constant passes the far-field certificate."""


def _emit_stage(out_dir, scenario, stage, mesh, fields, report_rows):
    base = Path(out_dir) / scenario / str(stage)
    base.mkdir(parents=True, exist_ok=True)
    write_mesh(base / "mesh.txt", mesh)
    write_mesh(base / "field.txt", mesh, fields)
    with open(base / "report.csv", "w", encoding="utf-8") as f:
        f.write("scenario,iterations,final_residual,energy\n")
        for row in report_rows:
            f.write(row + "\n")


def _build_stage(domain, k, margin, h):
    poly = truncate(domain, k, margin)
    mesh = tag_boundary(triangulate(poly, h), poly)
    return poly, mesh


# ---------------------------------------------------------------------------
# exhaustion


@dataclass
class ExhaustionRun:
    domain: ConvexDomain
    data: BoundaryData
    schedule: list
    compact_set: TruncationPolygon
    sample_points: np.ndarray
    fields: list = dfield(default_factory=list)
    reports: list = dfield(default_factory=list)
    deltas: list = dfield(default_factory=list)
    final_deviation: float = float("nan")
    converged: bool = False


def run_exhaustion(
    domain: ConvexDomain,
    data: BoundaryData,
    schedule,
    K: TruncationPolygon | None = None,
    tol_exh: float = 1e-3,
    opts: SolveOptions | None = None,
    out_dir=None,
) -> ExhaustionRun:
    """Solve along a truncation schedule [(k, margin, h), ...].

    Each stage imposes g = l + c*x2 + phi on the entire stage boundary (true
    and cut).  Stage n+1 reuses stage n's field, prolongated, as the Newton
    start.  deltas[i] = sup over the compact set K of |u_{i+1} - u_i|.
    """
    schedule = [tuple(s) for s in schedule]
    if any(b[0] <= a[0] for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing in k")
    opts = opts or SolveOptions()

    poly0 = truncate(domain, schedule[0][0], schedule[0][1])
    if K is None:
        K = poly0.scaled(0.5)
    if not poly0.contains_points(K.vertices, tol=1e-9).all():
        raise ValueError("compact set K is not contained in the first truncation")

    run = ExhaustionRun(domain, data, schedule, K, np.empty((0, 2)))
    prev_field = None
    prev_samples = None
    for stage, (k, margin, h) in enumerate(schedule):
        if stage == 0:
            mesh = tag_boundary(triangulate(poly0, h), poly0)
        else:
            _, mesh = _build_stage(domain, k, margin, h)
        if stage == 0:
            inside = K.contains_points(mesh.vertices, tol=1e-12)
            run.sample_points = mesh.vertices[inside]
            if len(run.sample_points) == 0:
                raise ValueError("compact set K contains no sample points at stage 0")
        stage_opts = opts
        if prev_field is not None:
            init = prev_field.at(mesh.vertices)
            fallback = data.plane(mesh.vertices)
            init = np.where(np.isfinite(init), init, fallback)
            stage_opts = SolveOptions(**{**opts.__dict__, "init": init})
        u, report = solve_dirichlet(mesh, data, stage_opts)
        run.fields.append(u)
        run.reports.append(report)
        samples = u.at(run.sample_points)
        if prev_samples is not None:
            run.deltas.append(float(np.max(np.abs(samples - prev_samples))))
        if out_dir is not None:
            _emit_stage(out_dir, "exhaustion", f"k{k:g}", mesh, {"u": u},
                        [report.csv_row(f"exhaustion_k{k:g}")])
        prev_field, prev_samples = u, samples
    run.final_deviation = float(
        np.max(np.abs(prev_samples - data.linear(run.sample_points)))
    )
    run.converged = bool(run.deltas and run.deltas[-1] <= tol_exh)
    return run


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonResult:
    violation: float
    mesh: TriMesh
    u1: ScalarField
    u2: ScalarField


def comparison_test(
    domain: ConvexDomain,
    data1: BoundaryData,
    data2: BoundaryData,
    k: float,
    h: float,
    margin: float | None = None,
    opts: SolveOptions | None = None,
    out_dir=None,
) -> ComparisonResult:
    """Solve with ordered boundary data and report max interior (u1-u2)+.

    Raises BoundaryOrderError when g1 <= g2 fails at a boundary node.
    """
    margin = 1.0 / k if margin is None else margin
    _, mesh = _build_stage(domain, k, margin, h)
    b = mesh.boundary_vertices
    g1, g2 = data1(mesh.vertices[b]), data2(mesh.vertices[b])
    bad = g1 > g2 + 1e-12
    if np.any(bad):
        worst = np.argmax(g1 - g2)
        raise BoundaryOrderError(
            f"boundary ordering violated at {bad.sum()} nodes, e.g. "
            f"x={mesh.vertices[b[worst]]}, g1={g1[worst]:.6g} > g2={g2[worst]:.6g}"
        )
    opts = opts or SolveOptions()
    u1, r1 = solve_dirichlet(mesh, data1, opts)
    u2, r2 = solve_dirichlet(mesh, data2, opts)
    ii = mesh.interior_vertices
    violation = max(0.0, float((u1.values - u2.values)[ii].max()))
    if out_dir is not None:
        _emit_stage(out_dir, "comparison", f"h{h:g}", mesh, {"u1": u1, "u2": u2},
                    [r1.csv_row("comparison_u1"), r2.csv_row("comparison_u2")])
    return ComparisonResult(violation, mesh, u1, u2)


# ---------------------------------------------------------------------------
# foliation


@dataclass
class FoliationRun:
    domain: ConvexDomain
    data: BoundaryData
    c_values: list
    poly: TruncationPolygon
    mesh: TriMesh
    leaves: dict
    estimates: dict
    reports: dict

    @property
    def phi_sup(self) -> float:
        return self.data.phi_sup

    def leaf(self, c: float) -> ScalarField:
        for cv, fld in self.leaves.items():
            if abs(cv - c) <= 1e-12:
                return fld
        raise KeyError(f"no leaf at c={c}; have {sorted(self.leaves)}")

    def min_leaf_gaps(self) -> list:
        """Min interior gap u_{c'} - u_c for consecutive c < c'."""
        ii = self.mesh.interior_vertices
        cs = sorted(self.leaves)
        return [
            float((self.leaves[b].values - self.leaves[a].values)[ii].min())
            for a, b in zip(cs, cs[1:])
        ]


def foliation_sweep(
    domain: ConvexDomain,
    data: BoundaryData,
    c_values,
    k: float,
    h: float,
    margin: float = 0.0,
    opts: SolveOptions | None = None,
    threads: int = 1,
    out_dir=None,
) -> FoliationRun:
    """Solve the half-space family u_c on one shared mesh, c in c_values.

    Boundary data for the leaf at c is l + c*x2 + phi on the whole stage
    boundary, which restricts to l + phi on the wall {x2=0}.  Estimates
    record max |u_c - l - c*x2| over all nodes.
    """
    if domain.kind != DomainKind.HALF_SPACE:
        raise ValueError(f"foliation needs a half-space domain, got {domain.kind.value}")
    c_values = sorted(float(c) for c in c_values)
    if any(b - a <= 1e-12 for a, b in zip(c_values, c_values[1:])):
        raise ValueError("c_values must be strictly increasing")
    opts = opts or SolveOptions()
    poly = truncate(domain, k, margin)
    mesh = tag_boundary(triangulate(poly, h), poly)

    def solve_leaf(c):
        return solve_dirichlet(mesh, data.with_c(c), opts)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_leaf, c_values))
    else:
        results = [solve_leaf(c) for c in c_values]

    leaves, estimates, reports = {}, {}, {}
    for c, (u, rep) in zip(c_values, results):
        leaves[c] = u
        reports[c] = rep
        plane = data.with_c(c).plane(mesh.vertices)
        estimates[c] = float(np.max(np.abs(u.values - plane)))
        if out_dir is not None:
            _emit_stage(out_dir, "foliation", f"c{c:g}", mesh, {"u": u},
                        [rep.csv_row(f"foliation_c{c:g}")])
    return FoliationRun(domain, data, c_values, poly, mesh, leaves, estimates, reports)


@dataclass(frozen=True)
class SlopeEstimate:
    c_hat: float
    lo: float
    hi: float
    n_samples: int

    def overlaps(self, other: "SlopeEstimate") -> bool:
        return not (self.hi < other.lo or other.hi < self.lo)


def recover_slope(
    fld: ScalarField,
    data: BoundaryData,
    phi_sup: float | None = None,
    height_fraction: float = 0.5,
    cert_tol: float = 0.05,
) -> SlopeEstimate:
    """Estimate the far-field slope c of a half-space leaf.

    c_hat is the median of (u - l)/x2 over nodes in the upper part of the
    truncation (x2 at least height_fraction of the max).  The certificate
    interval is the set of c consistent with |u - l - c*x2| <= phi_sup +
    cert_tol at every sample; CertificateError if it is empty or excludes
    c_hat.
    """
    mesh = fld.mesh
    phi_sup = data.phi_sup if phi_sup is None else float(phi_sup)
    x2 = mesh.vertices[:, 1]
    cutoff = height_fraction * float(x2.max())
    sel = x2 >= cutoff
    if not np.any(sel):
        raise CertificateError("no far-field sample points above the height cutoff")
    dev = fld.values[sel] - data.linear(mesh.vertices[sel])
    heights = x2[sel]
    c_hat = float(np.median(dev / heights))
    band = phi_sup + cert_tol
    lo = float(np.max((dev - band) / heights))
    hi = float(np.min((dev + band) / heights))
    if lo > hi or not (lo <= c_hat <= hi):
        raise CertificateError(
            f"no admissible slope: interval [{lo:.6g}, {hi:.6g}], median {c_hat:.6g}"
        )
    return SlopeEstimate(c_hat, lo, hi, int(sel.sum()))


@dataclass
class LinearizationCheck:
    delta: float
    error: float
    v: ScalarField
    quotient: ScalarField
    v_positive_interior: bool


def linearization_check(
    run: FoliationRun,
    c: float,
    delta: float,
    K: TruncationPolygon | None = None,
    solver: str = "direct",
) -> LinearizationCheck:
    """Difference quotient of leaves vs the linearized-equation solution.

    Solves div(A grad v) = 0 with A the minimal-surface linearization at the
    leaf u_c, v = 0 on the true boundary and v = x2 on the cut; in the
    discrete setting v is the exact c-derivative of the solution map, so the
    reported sup error over K is first order in delta.
    """
    u_c = run.leaf(c)
    u_cd = run.leaf(c + delta)
    mesh = run.mesh
    A = linearized_coefficients(mesh, u_c)
    v = solve_linear_dirichlet(
        mesh,
        A,
        {BoundaryTag.TRUE_BOUNDARY: 0.0, BoundaryTag.CUT_BOUNDARY: lambda p: p[:, 1]},
        solver=solver,
    )
    quotient = ScalarField(mesh, (u_cd.values - u_c.values) / delta)
    K = K or run.poly.scaled(0.5)
    mask = K.contains_points(mesh.vertices, tol=1e-12)
    if not np.any(mask):
        raise ValueError("compact set K contains no mesh vertices")
    vmax = float(np.max(np.abs(v.values[mask])))
    err = float(np.max(np.abs(quotient.values[mask] - v.values[mask]))) / vmax
    ii = mesh.interior_vertices
    return LinearizationCheck(delta, err, v, quotient, bool(v.values[ii].min() > 0))


# ---------------------------------------------------------------------------
# uniqueness


@dataclass
class UniquenessResult:
    max_distance: float
    tol: float
    fields: list


def uniqueness_stress(
    domain: ConvexDomain,
    data: BoundaryData,
    k: float,
    h: float,
    initializations=("linear", "zero", "random"),
    margin: float | None = None,
    seed: int = 0,
    opts: SolveOptions | None = None,
) -> UniquenessResult:
    """Solve from several Newton starts; report the max pairwise sup distance.

    "random" perturbs the plane initialization by +-1 per node (seeded).
    """
    if len(initializations) < 2:
        raise ValueError("need at least two initializations")
    margin = 1.0 / k if margin is None else margin
    _, mesh = _build_stage(domain, k, margin, h)
    opts = opts or SolveOptions()
    tol = opts.tol if opts.tol is not None else 1e-9 * float(mesh.areas.mean())
    rng = np.random.default_rng(seed)
    fields = []
    for init in initializations:
        if isinstance(init, str) and init == "random":
            init = data.plane(mesh.vertices) + rng.choice([-1.0, 1.0], mesh.num_vertices)
        leaf_opts = SolveOptions(**{**opts.__dict__, "init": init})
        u, _ = solve_dirichlet(mesh, data, leaf_opts)
        fields.append(u)
    dist = 0.0
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            dist = max(dist, float(np.max(np.abs(fields[i].values - fields[j].values))))
    return UniquenessResult(dist, tol, fields)
