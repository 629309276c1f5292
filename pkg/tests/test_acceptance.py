"""Acceptance suite: one test per shipped criterion, at stated tolerances.

Each test prints one `criterion-NN <name>: PASS/FAIL (detail)` line; run
with `pytest -s tests/test_acceptance.py` to see them live.  The heavy
scenarios (exhaustion to k=14, comparison at h=0.025, the k=12 foliation)
take a few minutes combined.
"""

import math
import time

import numpy as np
import pytest

from mselab.experiments import (
    comparison_test,
    foliation_sweep,
    linearization_check,
    recover_slope,
    run_exhaustion,
)
from mselab.geometry import half_space, polygon_region, truncate, wedge
from mselab.linear import (
    cone_lateral_bump_solution,
    cone_positive_solution,
    fit_power_exponent,
    measure_oscillation_drop,
    oscillation_profile,
)
from mselab.meshing import tag_boundary, triangulate
from mselab.solver import (
    BoundaryData,
    SolveOptions,
    energy,
    hessian,
    make_phi,
    residual,
    solve_dirichlet,
)

WEDGE = wedge(2 * math.pi / 3)
RIGHT_SECTOR = wedge(math.pi / 2)
FAST = SolveOptions(linear_solver="direct", init="harmonic")


def conclude(num, name, ok, detail):
    print(f"\ncriterion-{num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion-{num:02d} {name}: {detail}"


def scherk(p):
    p = np.atleast_2d(p)
    return np.log(np.cos(p[:, 1]) / np.cos(p[:, 0]))


# -- shared heavy runs -------------------------------------------------------


@pytest.fixture(scope="module")
def foliation_run():
    data = BoundaryData(p=(1.0, 0.0), phi=make_phi("bounded_sine", amp=0.4))
    return foliation_sweep(half_space(), data, [-1, -0.5, 0, 0.5, 1], k=12, h=0.05, opts=FAST)


@pytest.fixture(scope="module")
def sector_fields():
    u = cone_positive_solution(RIGHT_SECTOR, 20.0, h_min=0.02, grade=0.06)

    def bump(p):
        r = np.linalg.norm(p, axis=1)
        return np.clip(1.0 - np.abs(r - 1.0), 0.0, None)

    ud = cone_lateral_bump_solution(RIGHT_SECTOR, 20.0, bump, mesh=u.mesh)
    return u, ud


def test_criterion_01_affine_exactness():
    t0 = time.perf_counter()
    poly = truncate(WEDGE, 8.0, 1.0 / 8.0)
    mesh = tag_boundary(triangulate(poly, 0.1), poly)
    data = BoundaryData(p=(1.0, 0.0))
    u, rep = solve_dirichlet(mesh, data)
    dt = time.perf_counter() - t0
    dev = float(np.abs(u.values - data.linear(mesh.vertices)).max())
    ok = dev <= 1e-9 and dt < 5.0
    conclude(1, "affine-exactness", ok, f"dev={dev:.2e}, {dt:.2f}s, iters={rep.iterations}")


def test_criterion_02_scherk_oracle():
    import sympy as sym

    # residual-verify the analytic oracle before using it
    x, y = sym.symbols("x y")
    u_sym = sym.log(sym.cos(y) / sym.cos(x))
    ux, uy = sym.diff(u_sym, x), sym.diff(u_sym, y)
    mse = (
        (1 + uy**2) * sym.diff(u_sym, x, 2)
        - 2 * ux * uy * sym.diff(sym.diff(u_sym, x), y)
        + (1 + ux**2) * sym.diff(u_sym, y, 2)
    )
    assert sym.simplify(mse) == 0

    square = polygon_region([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    t0 = time.perf_counter()
    hs = [0.1, 0.05, 0.025]
    errs = []
    for h in hs:
        mesh = tag_boundary(triangulate(square, h), square)
        u, _ = solve_dirichlet(mesh, scherk)
        ii = mesh.interior_vertices
        errs.append(float(np.abs(u.values[ii] - scherk(mesh.vertices[ii])).max()))
    dt = time.perf_counter() - t0
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    decreasing = errs[0] > errs[1] > errs[2]
    ok = decreasing and order >= 1.8 and dt < 60.0
    conclude(
        2, "scherk-oracle", ok,
        f"errors={['%.2e' % e for e in errs]}, order={order:.3f}, {dt:.1f}s",
    )


def test_criterion_03_c0_bound_exhaustion():
    data = BoundaryData(p=(1.0, 0.0), phi=make_phi("compact_hat", amp=0.5, radius=2.0))
    schedule = [(6, 1 / 6, 0.05), (10, 1 / 10, 0.05), (14, 1 / 14, 0.05)]
    run = run_exhaustion(WEDGE, data, schedule, opts=FAST)
    dev = run.final_deviation
    strictly_decreasing = all(b < a for a, b in zip(run.deltas, run.deltas[1:]))
    ok = dev <= 0.5 + 0.02 and strictly_decreasing
    conclude(
        3, "c0-bound", ok,
        f"final |u-l| on K = {dev:.4f} (<=0.52), deltas={['%.3e' % d for d in run.deltas]}",
    )


def test_criterion_04_comparison():
    d_base = BoundaryData(p=(1.0, 0.0))
    d_bump = BoundaryData(
        p=(1.0, 0.0), phi=make_phi("gaussian_bump", amp=0.3, center=(0.0, 1.0), width=1.0)
    )
    d_tilt = BoundaryData(p=(1.0, 0.2))
    limits = {0.05: 1e-3, 0.025: 2.5e-4}
    viols = {}
    for h, limit in limits.items():
        v1 = comparison_test(WEDGE, d_base, d_bump, k=10, h=h, opts=FAST).violation
        v2 = comparison_test(WEDGE, d_base, d_tilt, k=10, h=h, opts=FAST).violation
        viols[h] = (v1, v2)
    ok = all(max(v) <= limits[h] for h, v in viols.items())
    detail = ", ".join(f"h={h}: ({v[0]:.2e}, {v[1]:.2e}) <= {limits[h]:g}" for h, v in viols.items())
    conclude(4, "comparison", ok, detail)


def test_criterion_05_foliation(foliation_run):
    run = foliation_run
    data = run.data
    est_ok = all(est <= 0.42 for est in run.estimates.values())
    gaps = run.min_leaf_gaps()
    mono_ok = all(g > 0 for g in gaps)
    slope_errs = []
    for c in run.c_values:
        est = recover_slope(run.leaf(c), data)
        slope_errs.append(abs(est.c_hat - c))
    slope_ok = all(e <= 0.05 for e in slope_errs)
    ok = est_ok and mono_ok and slope_ok
    conclude(
        5, "foliation", ok,
        f"max estimate={max(run.estimates.values()):.4f} (<=0.42), "
        f"min gap={min(gaps):.2e} (>0), max |c_hat-c|={max(slope_errs):.4f} (<=0.05)",
    )


def test_criterion_06_c1_linearization():
    data = BoundaryData(p=(1.0, 0.0), phi=make_phi("bounded_sine", amp=0.4))
    run = foliation_sweep(half_space(), data, [0.0, 0.05, 0.1], k=8, h=0.05, opts=FAST)
    chk1 = linearization_check(run, 0.0, 0.1)
    chk2 = linearization_check(run, 0.0, 0.05)
    ratio = chk1.error / chk2.error
    ok = 1.5 <= ratio <= 3.0 and chk1.v_positive_interior and chk2.v_positive_interior
    conclude(
        6, "c1-linearization", ok,
        f"err(0.1)={chk1.error:.3e}, err(0.05)={chk2.error:.3e}, "
        f"ratio={ratio:.2f} in [1.5,3], v>0: {chk1.v_positive_interior}",
    )


def test_criterion_07_cone_exponent(sector_fields):
    t0 = time.perf_counter()
    u, ud = sector_fields
    radii = np.geomspace(0.5, 16.0, 48)
    prof = oscillation_profile(u, RIGHT_SECTOR, radii)
    sel = np.flatnonzero((radii >= 1.0) & (radii <= 8.0))
    beta = fit_power_exponent(prof, (int(sel[0]), int(sel[-1]) + 1))
    prof_d = oscillation_profile(ud, RIGHT_SECTOR, np.geomspace(2.0, 16.0, 32))
    beta_d = fit_power_exponent(prof_d, (0, 32))
    dt = time.perf_counter() - t0
    ok = abs(beta - 2.0) <= 0.2 and beta_d <= -0.5 and dt < 120.0
    conclude(
        7, "cone-exponent", ok,
        f"growth beta={beta:.4f} (2 +- 10%), decay beta={beta_d:.3f} (<= -0.5), {dt:.1f}s",
    )


def test_criterion_08_uniqueness_up_to_scaling(sector_fields):
    u, _ = sector_fields

    def cap2(p):
        ang = np.arctan2(p[:, 1], p[:, 0]) - math.pi / 4
        return np.sin(2 * ang) ** 2

    u2 = cone_positive_solution(RIGHT_SECTOR, 20.0, cap_data=cap2, mesh=u.mesh)
    inner = np.linalg.norm(u.mesh.vertices, axis=1) <= 5.0  # quarter of k=20
    rel = float(np.abs(u.values - u2.values)[inner].max() / np.abs(u.values[inner]).max())
    ok = rel <= 0.05
    conclude(8, "uniqueness-up-to-scaling", ok, f"relative sup difference on B_5 = {rel:.4f} (<=0.05)")


def test_criterion_09_oscillation_drop(sector_fields):
    _, ud = sector_fields
    deltas = {}
    for r in (2.0, 4.0):
        deltas[r] = measure_oscillation_drop(ud, RIGHT_SECTOR, r).delta
    ok = all(d >= 0.01 for d in deltas.values())
    conclude(
        9, "oscillation-drop", ok,
        ", ".join(f"delta(r={r:g})={d:.3f} (>=0.01)" for r, d in deltas.items()),
    )


def test_criterion_10_kernel_checks():
    square = polygon_region([[0, 0], [1, 0], [1, 1], [0, 1]])
    mesh = tag_boundary(triangulate(square, 0.2), square)
    rng = np.random.default_rng(42)
    iidx = mesh.interior_vertices

    worst_fd = 0.0
    for _ in range(10):
        vals = rng.normal(scale=0.8, size=mesh.num_vertices)
        r = residual(mesh, vals)
        eps = 1e-5
        for i in rng.integers(0, mesh.num_vertices, size=10):
            up, dn = vals.copy(), vals.copy()
            up[i] += eps
            dn[i] -= eps
            fd = (energy(mesh, up) - energy(mesh, dn)) / (2 * eps)
            worst_fd = max(worst_fd, abs(r[i] - fd) / max(1.0, abs(fd)))

    worst_hv = 0.0
    for _ in range(10):
        vals = rng.normal(scale=0.8, size=mesh.num_vertices)
        d = rng.normal(size=mesh.num_vertices)
        d[mesh.boundary_vertices] = 0.0
        eps = 1e-6
        H = hessian(mesh, vals)
        fd = (residual(mesh, vals + eps * d) - residual(mesh, vals))[iidx] / eps
        hv = H @ d[iidx]
        worst_hv = max(worst_hv, float(np.max(np.abs(fd - hv))) / max(1.0, float(np.max(np.abs(d)))))

    spd_ok = True
    for _ in range(100):
        H = hessian(mesh, rng.normal(scale=1.5, size=mesh.num_vertices)).toarray()
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            spd_ok = False
            break

    ok = worst_fd <= 1e-6 and worst_hv <= 1e-5 and spd_ok
    conclude(
        10, "kernel-checks", ok,
        f"residual-vs-FD={worst_fd:.2e} (<=1e-6), Hv-vs-FD={worst_hv:.2e} (<=1e-5), "
        f"SPD on 100 random fields: {spd_ok}",
    )
