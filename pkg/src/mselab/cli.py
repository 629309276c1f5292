"""Configuration-driven scenario runner.

Reads a JSON config, builds the scenario, runs it, and writes artifacts
under out_dir/<scenario>/: a manifest, per-stage mesh+field dumps,
report.csv rows, and checks.csv with one row per scenario assertion
(value, bounds, pass).  Failing checks are repeated in failures.csv.

Exit codes: 0 all checks pass; 2 some check failed (failures.csv written);
1 operational error (bad config, precondition violation, solver failure).

Flags: --config <path> --out-dir <path> --threads <n> --seed <n>
--scenario <name>.  Config values win over built-in defaults; command-line
flags win over the config.  Reruns with a fixed config and --threads 1 are
byte-identical; with more threads the numbers are identical and only
scheduling changes.

All floating-point output is printed with 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field as dfield, asdict
from pathlib import Path

import numpy as np

from .experiments import (
    BoundaryOrderError,
    CertificateError,
    _emit_stage,
    comparison_test,
    foliation_sweep,
    linearization_check,
    recover_slope,
    run_exhaustion,
    uniqueness_stress,
)
from .geometry import (
    ConvexDomain,
    EmptyTruncationError,
    GeometryError,
    domain_from_spec,
    truncate,
)
from .linear import (
    cone_lateral_bump_solution,
    cone_positive_solution,
    fit_power_exponent,
    measure_oscillation_drop,
    oscillation_profile,
    sector_frame,
    write_profile,
)
from .meshing import MeshQualityError, tag_boundary, triangulate
from .solver import (
    PHI_REGISTRY,
    BoundaryData,
    NonConvergenceError,
    SingularLinearSolveError,
    SolveOptions,
    make_phi,
    solve_dirichlet,
)

SCENARIOS = (
    "solve",
    "exhaustion",
    "comparison",
    "foliation",
    "cone_linear",
    "linearization",
    "uniqueness",
)

__all__ = ["ScenarioConfig", "ConfigError", "parse_config", "run", "main"]


class ConfigError(ValueError):
    """Invalid configuration; carries the full list of errors."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ScenarioConfig:
    scenario: str
    domain: object = "half_space"
    boundary: dict = dfield(default_factory=dict)
    boundary2: dict | None = None
    k: float = 8.0
    margin: float | None = None
    h: float = 0.1
    schedule: list | None = None
    c_values: list = dfield(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    c: float = 0.0
    deltas: list = dfield(default_factory=lambda: [0.1, 0.05])
    radius_k: float = 20.0
    h_min: float = 0.02
    grade: float = 0.06
    fit_r_min: float = 1.0
    fit_r_max: float = 8.0
    tol: float | None = None
    tol_exh: float = 1e-3
    max_iters: int = 60
    linear_solver: str = "cg"
    init: str = "linear"
    violation_limit: float = 1e-3
    out_dir: str = "out"
    threads: int = 1
    seed: int = 0

    def solve_options(self, init_array=None) -> SolveOptions:
        return SolveOptions(
            tol=self.tol,
            max_iters=self.max_iters,
            linear_solver=self.linear_solver,
            init=self.init if init_array is None else init_array,
        )


_KNOWN_KEYS = set(ScenarioConfig.__dataclass_fields__)


def _check_boundary(spec, errors, path):
    if not isinstance(spec, dict):
        errors.append(f"{path}: must be an object")
        return
    for key in spec:
        if key not in {"p", "q", "c", "phi"}:
            errors.append(f"{path}.{key}: unknown key (valid: p, q, c, phi)")
    p = spec.get("p", [0.0, 0.0])
    if not (isinstance(p, (list, tuple)) and len(p) == 2):
        errors.append(f"{path}.p: must be a 2-vector")
    phi = spec.get("phi", {"name": "zero"})
    if not isinstance(phi, dict) or "name" not in phi:
        errors.append(f"{path}.phi: must be an object with a 'name'")
    elif phi["name"] not in PHI_REGISTRY:
        errors.append(
            f"{path}.phi.name: unknown phi {phi['name']!r} (valid: {sorted(PHI_REGISTRY)})"
        )
    else:
        try:
            _build_boundary(spec)
        except (TypeError, ValueError) as exc:
            errors.append(f"{path}.phi: {exc}")


def _build_boundary(spec) -> BoundaryData:
    phi_spec = dict(spec.get("phi", {"name": "zero"}))
    name = phi_spec.pop("name")
    return BoundaryData(
        p=tuple(spec.get("p", (0.0, 0.0))),
        q=float(spec.get("q", 0.0)),
        c=float(spec.get("c", 0.0)),
        phi=make_phi(name, **phi_spec),
    )


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON config; raises ConfigError listing every problem."""
    errors = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: not valid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be an object"])

    for key in raw:
        if key not in _KNOWN_KEYS:
            errors.append(f"{key}: unknown key")

    scenario = raw.get("scenario")
    if scenario is None:
        errors.append(f"scenario: required (valid: {list(SCENARIOS)})")
    elif scenario not in SCENARIOS:
        errors.append(f"scenario: unknown {scenario!r} (valid: {list(SCENARIOS)})")

    if "domain" in raw:
        try:
            domain_from_spec(raw["domain"])
        except (GeometryError, KeyError, TypeError) as exc:
            errors.append(f"domain: {exc}")

    for name in ("boundary", "boundary2"):
        if raw.get(name) is not None:
            _check_boundary(raw[name], errors, name)

    for key, positive in (
        ("k", True), ("h", True), ("radius_k", True), ("h_min", True),
        ("grade", True), ("tol_exh", True), ("violation_limit", True),
    ):
        if key in raw:
            try:
                v = float(raw[key])
                if positive and not v > 0:
                    errors.append(f"{key}: must be positive")
            except (TypeError, ValueError):
                errors.append(f"{key}: must be a number")
    if raw.get("margin") is not None:
        try:
            if float(raw["margin"]) < 0:
                errors.append("margin: must be nonnegative")
        except (TypeError, ValueError):
            errors.append("margin: must be a number")
    if raw.get("tol") is not None:
        try:
            if float(raw["tol"]) <= 0:
                errors.append("tol: must be positive")
        except (TypeError, ValueError):
            errors.append("tol: must be a number")
    if "max_iters" in raw and (not isinstance(raw["max_iters"], int) or raw["max_iters"] < 1):
        errors.append("max_iters: must be a positive integer")
    if "threads" in raw and (not isinstance(raw["threads"], int) or raw["threads"] < 1):
        errors.append("threads: must be a positive integer")
    if "linear_solver" in raw and raw["linear_solver"] not in ("cg", "direct"):
        errors.append("linear_solver: must be 'cg' or 'direct'")
    if "init" in raw and raw["init"] not in ("linear", "zero", "harmonic"):
        errors.append("init: must be 'linear', 'zero', or 'harmonic'")
    if "schedule" in raw and raw["schedule"] is not None:
        sched = raw["schedule"]
        if not (isinstance(sched, list) and all(len(s) == 3 for s in sched)):
            errors.append("schedule: must be a list of [k, margin, h] triples")
        else:
            ks = [s[0] for s in sched]
            if sorted(ks) != ks or len(set(ks)) != len(ks):
                errors.append("schedule: k values must be strictly increasing")
    if "c_values" in raw:
        cv = raw["c_values"]
        if not (isinstance(cv, list) and len(cv) >= 1):
            errors.append("c_values: must be a nonempty list of numbers")
        elif sorted(cv) != cv or len(set(cv)) != len(cv):
            errors.append("c_values: must be strictly increasing")

    if scenario == "exhaustion" and not raw.get("schedule"):
        errors.append("schedule: required for the exhaustion scenario")
    if scenario == "comparison" and not raw.get("boundary2"):
        errors.append("boundary2: required for the comparison scenario")

    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(**raw)


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    lo: float | None = None
    hi: float | None = None

    @property
    def ok(self) -> bool:
        good = np.isfinite(self.value)
        if self.lo is not None:
            good = good and self.value >= self.lo
        if self.hi is not None:
            good = good and self.value <= self.hi
        return bool(good)

    def csv(self) -> str:
        lo = "" if self.lo is None else f"{self.lo:.17g}"
        hi = "" if self.hi is None else f"{self.hi:.17g}"
        return f"{self.name},{self.value:.17g},{lo},{hi},{int(self.ok)}"


def _write_checks(base: Path, checks) -> bool:
    base.mkdir(parents=True, exist_ok=True)
    header = "check,value,lo,hi,pass"
    with open(base / "checks.csv", "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for c in checks:
            f.write(c.csv() + "\n")
    failures = [c for c in checks if not c.ok]
    if failures:
        with open(base / "failures.csv", "w", encoding="utf-8") as f:
            f.write(header + "\n")
            for c in failures:
                f.write(c.csv() + "\n")
    return not failures


# ---------------------------------------------------------------------------
# scenarios


def _scn_solve(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    data = _build_boundary(cfg.boundary)
    margin = 1.0 / cfg.k if cfg.margin is None else cfg.margin
    poly = truncate(domain, cfg.k, margin)
    mesh = tag_boundary(triangulate(poly, cfg.h), poly)
    u, rep = solve_dirichlet(mesh, data, cfg.solve_options())
    _emit_stage(out, "solve", f"k{cfg.k:g}", mesh, {"u": u}, [rep.csv_row("solve")])
    g = data(mesh.vertices[mesh.boundary_vertices])
    slack = 1e-6 * (1.0 + float(np.ptp(g)))
    checks = [
        Check("converged", float(rep.converged), lo=1.0),
        Check("max_principle_upper", float(u.values.max()), hi=float(g.max()) + slack),
        Check("max_principle_lower", float(u.values.min()), lo=float(g.min()) - slack),
    ]
    if data.phi.name == "zero" and data.c == 0.0:
        dev = float(np.abs(u.values - data.linear(mesh.vertices)).max())
        checks.append(Check("affine_exactness", dev, hi=1e-9))
    return checks


def _scn_exhaustion(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    data = _build_boundary(cfg.boundary)
    run = run_exhaustion(
        domain, data, cfg.schedule, tol_exh=cfg.tol_exh,
        opts=cfg.solve_options(), out_dir=out,
    )
    checks = [
        Check("final_deviation", run.final_deviation, hi=data.phi_sup + 0.02),
    ]
    for i, (a, b) in enumerate(zip(run.deltas, run.deltas[1:])):
        checks.append(Check(f"delta_decrease_{i}", b - a, hi=0.0))
    with open(out / "exhaustion" / "metrics.csv", "w", encoding="utf-8") as f:
        f.write("stage,k,delta\n")
        for i, (k, _, _) in enumerate(run.schedule):
            d = "" if i == 0 else f"{run.deltas[i - 1]:.17g}"
            f.write(f"{i},{k:.17g},{d}\n")
    return checks


def _scn_comparison(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    res = comparison_test(
        domain,
        _build_boundary(cfg.boundary),
        _build_boundary(cfg.boundary2),
        cfg.k,
        cfg.h,
        margin=cfg.margin,
        opts=cfg.solve_options(),
        out_dir=out,
    )
    return [Check("violation", res.violation, hi=cfg.violation_limit)]


def _scn_foliation(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    data = _build_boundary(cfg.boundary)
    run = foliation_sweep(
        domain, data, cfg.c_values, cfg.k, cfg.h,
        margin=0.0 if cfg.margin is None else cfg.margin,
        opts=cfg.solve_options(), threads=cfg.threads, out_dir=out,
    )
    checks = []
    for c in run.c_values:
        checks.append(Check(f"estimate_c{c:g}", run.estimates[c], hi=data.phi_sup + 0.02))
    for (a, b), gap in zip(zip(run.c_values, run.c_values[1:]), run.min_leaf_gaps()):
        checks.append(Check(f"gap_{a:g}_{b:g}", gap, lo=np.nextafter(0.0, 1.0)))
    with open(out / "foliation" / "metrics.csv", "w", encoding="utf-8") as f:
        f.write("c,estimate,c_hat,cert_lo,cert_hi\n")
        for c in run.c_values:
            est = recover_slope(run.leaf(c), data)
            checks.append(Check(f"slope_err_c{c:g}", abs(est.c_hat - c), hi=0.05))
            f.write(
                f"{c:.17g},{run.estimates[c]:.17g},{est.c_hat:.17g},"
                f"{est.lo:.17g},{est.hi:.17g}\n"
            )
    return checks


def _scn_cone_linear(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    apex, _, theta = sector_frame(domain)
    beta_target = math.pi / theta
    base = out / "cone_linear"
    base.mkdir(parents=True, exist_ok=True)

    u = cone_positive_solution(
        domain, cfg.radius_k, h_min=cfg.h_min, grade=cfg.grade,
        solver="direct" if cfg.linear_solver == "direct" else "cg",
    )
    radii = np.geomspace(max(cfg.fit_r_min / 2, 4 * cfg.h_min), cfg.radius_k * 0.8, 48)
    prof = oscillation_profile(u, domain, radii, center=apex)
    sel = np.flatnonzero((radii >= cfg.fit_r_min) & (radii <= cfg.fit_r_max))
    beta = fit_power_exponent(prof, (int(sel[0]), int(sel[-1]) + 1))
    write_profile(base / "growth_profile.csv", prof)

    def bump(p):
        r = np.linalg.norm(p - apex, axis=1)
        return np.clip(1.0 - np.abs(r - 1.0), 0.0, None)

    ud = cone_lateral_bump_solution(
        domain, cfg.radius_k, bump, mesh=u.mesh,
        solver="direct" if cfg.linear_solver == "direct" else "cg",
    )
    radii_d = np.geomspace(2.0, cfg.radius_k * 0.8, 32)
    prof_d = oscillation_profile(ud, domain, radii_d, center=apex)
    beta_d = fit_power_exponent(prof_d, (0, len(radii_d)))
    write_profile(base / "decay_profile.csv", prof_d)

    def cap2(p):
        rel = np.atleast_2d(p) - apex
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        a0 = sector_frame(domain)[1]
        s = np.sin(np.pi * ((ang - a0) % (2 * math.pi)) / theta)
        return s * s

    u2 = cone_positive_solution(domain, cfg.radius_k, cap_data=cap2, mesh=u.mesh)
    inner = np.linalg.norm(u.mesh.vertices - apex, axis=1) <= cfg.radius_k / 4
    cap_rel = float(
        np.abs(u.values - u2.values)[inner].max() / np.abs(u.values[inner]).max()
    )

    checks = [
        Check("growth_beta", beta, lo=0.9 * beta_target, hi=1.1 * beta_target),
        Check("decay_beta", beta_d, hi=-0.5),
        Check("decay_tail_monotone", float(np.all(np.diff(prof_d.osc_values) < 0)), lo=1.0),
        Check("cap_pair_agreement", cap_rel, hi=0.05),
    ]
    for r in (cfg.radius_k / 10.0, cfg.radius_k / 5.0):
        drop = measure_oscillation_drop(ud, domain, r, center=apex)
        checks.append(Check(f"osc_drop_r{r:g}", drop.delta, lo=0.01))
    return checks


def _scn_linearization(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    data = _build_boundary(cfg.boundary)
    d1, d2 = sorted(cfg.deltas, reverse=True)[:2]
    cs = sorted({cfg.c, cfg.c + d1, cfg.c + d2})
    run = foliation_sweep(
        domain, data, cs, cfg.k, cfg.h,
        margin=0.0 if cfg.margin is None else cfg.margin,
        opts=cfg.solve_options(), threads=cfg.threads, out_dir=out,
    )
    chk1 = linearization_check(run, cfg.c, d1)
    chk2 = linearization_check(run, cfg.c, d2)
    ratio = chk1.error / chk2.error if chk2.error > 0 else math.inf
    return [
        Check("richardson_ratio", ratio, lo=1.5, hi=3.0),
        Check("v_positive", float(chk1.v_positive_interior), lo=1.0),
        Check(f"error_delta{d1:g}", chk1.error),
        Check(f"error_delta{d2:g}", chk2.error),
    ]


def _scn_uniqueness(cfg: ScenarioConfig, out: Path):
    domain = domain_from_spec(cfg.domain)
    data = _build_boundary(cfg.boundary)
    res = uniqueness_stress(
        domain, data, cfg.k, cfg.h, margin=cfg.margin,
        seed=cfg.seed, opts=cfg.solve_options(),
    )
    (out / "uniqueness").mkdir(parents=True, exist_ok=True)
    return [Check("max_pairwise_distance", res.max_distance, hi=10 * res.tol)]


_RUNNERS = {
    "solve": _scn_solve,
    "exhaustion": _scn_exhaustion,
    "comparison": _scn_comparison,
    "foliation": _scn_foliation,
    "cone_linear": _scn_cone_linear,
    "linearization": _scn_linearization,
    "uniqueness": _scn_uniqueness,
}

_OPERATIONAL_ERRORS = (
    BoundaryOrderError,
    CertificateError,
    ConfigError,
    EmptyTruncationError,
    GeometryError,
    MeshQualityError,
    NonConvergenceError,
    SingularLinearSolveError,
    OSError,
    ValueError,
)


def run(config: ScenarioConfig) -> int:
    """Run one scenario; returns the process exit status (0/1/2)."""
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        base = out / config.scenario
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(asdict(config), f, indent=2, sort_keys=True)
            f.write("\n")
        checks = _RUNNERS[config.scenario](config, out)
    except _OPERATIONAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    passed = _write_checks(out / config.scenario, checks)
    for c in checks:
        print(("PASS" if c.ok else "FAIL"), c.name, f"{c.value:.17g}")
    return 0 if passed else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mselab",
        description="minimal surface equation experiments on unbounded convex domains",
    )
    parser.add_argument("--config", type=Path, help="JSON scenario config")
    parser.add_argument("--out-dir", type=Path, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--scenario", choices=SCENARIOS, default=None)
    args = parser.parse_args(argv)

    text = "{}"
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 1
    try:
        raw = json.loads(text)
        if args.scenario is not None:
            raw["scenario"] = args.scenario
        if args.out_dir is not None:
            raw["out_dir"] = str(args.out_dir)
        if args.threads is not None:
            raw["threads"] = args.threads
        if args.seed is not None:
            raw["seed"] = args.seed
        config = parse_config(json.dumps(raw))
    except (ConfigError, json.JSONDecodeError) as exc:
        errors = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
