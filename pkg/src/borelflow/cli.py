"""Command-line driver: configuration loading, pipelines and deterministic exports.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 evaluation outside the validity region.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from borelflow import _backend
from borelflow.bessel_kernels import (
    KernelDomainError, build_kernel_table, kernel_ode_residual, laplace_identity_error,
    two_j1_over_z,
)
from borelflow.borel_march import BorelGrid, BorelSolution, MarchError, build_grid, march, residual_integral_eq
from borelflow.estimates import (
    EstimateError, apriori_growth, improved_existence_scan, series_bound_constants,
)
from borelflow.norms import (
    C7, NormError, NormParams, c0_constant, field_norm, lemma24_constants, weighted_convolution_integral,
    weighted_convolution_bound, m0_constant, stack_norm,
)
from borelflow.reconstruct import (
    BlowUpError, ValidityError, galerkin_rk4, laplace_trajectory,
)
from borelflow.spectral_core import (
    FlowState, FlowSystem, ModeLattice, PhysicalParams, SpectralError, SpectralField, convolve,
    project_field,
)
from borelflow.taylor_engine import (
    ABOVE_CUTOFF, SeriesOverflowError, borel_series, radius_from_norms,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDITY = 0, 2, 3, 4
CHECK_TRIALS = 100


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# --- configuration ----------------------------------------------------------
@dataclass
class RunConfig:
    problem: str
    params: PhysicalParams
    lattice: ModeLattice
    primary: SpectralField
    companion: SpectralField
    forcing: SpectralField | None
    norm: NormParams
    series_order: int = 20
    p_max: float = 1.0
    grid_n: int = 128
    grading: float = 1.0
    seed_order: int = 12
    tolerances: dict = field(default_factory=dict)
    times: list | None = None
    rk4_dt: float = 1e-4
    improved: dict | None = None
    seed: int = 0

    @property
    def state(self) -> FlowState:
        return FlowState(self.problem, self.primary, self.companion)

    def grid(self) -> BorelGrid:
        return build_grid(self.p_max, self.grid_n, self.grading)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return d[key]


def _complex(v, where: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(f"{where}: complex amplitudes are [re, im] pairs, got {v!r}")


def _modes(entries, lattice: ModeLattice, kind: str, where: str) -> SpectralField:
    if not isinstance(entries, list):
        raise ConfigError(f"{where}: expected a list of modes")
    modes = []
    for i, e in enumerate(entries):
        at = f"{where}[{i}]"
        if not isinstance(e, dict):
            raise ConfigError(f"{at}: each mode is an object with 'k' and 'amp'")
        n = _require(e, "k", at)
        if not (isinstance(n, list) and len(n) == lattice.dim and all(isinstance(v, int) for v in n)):
            raise ConfigError(f"{at}.k: expected {lattice.dim} integers, got {n!r}")
        if any(abs(v) > lattice.cutoff for v in n):
            raise ConfigError(f"{at}.k: {n} lies outside the lattice cutoff {lattice.cutoff}")
        amp = _require(e, "amp", at)
        if kind == "vector":
            if not (isinstance(amp, list) and len(amp) == lattice.dim):
                raise ConfigError(f"{at}.amp: expected {lattice.dim} complex components")
            a = np.array([_complex(v, f"{at}.amp[{j}]") for j, v in enumerate(amp)])
            k = np.asarray(n, float) * lattice.base
            if abs(np.dot(k, a)) > 1e-12 * max(np.linalg.norm(a) * np.linalg.norm(k), 1e-300):
                raise ConfigError(f"{at}: vector amplitude is not orthogonal to its wavevector")
            if not any(n) and np.any(a != 0):
                raise ConfigError(f"{at}: vector fields carry no zero mode")
        else:
            a = _complex(amp, f"{at}.amp")
        modes.append((tuple(n), a))
    try:
        fld = SpectralField.from_modes(lattice, kind, modes)
    except SpectralError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if not fld.is_conjugate_symmetric(1e-14):
        raise ConfigError(f"{where}: listed +k and -k amplitudes are not complex conjugates")
    return fld


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    problem = _require(raw, "problem", "config")
    if problem not in ("boussinesq", "mhd"):
        raise ConfigError(f"problem: must be 'boussinesq' or 'mhd', got {problem!r}")
    lat_raw = _require(raw, "lattice", "config")
    try:
        lattice = ModeLattice(float(_require(lat_raw, "base", "lattice")),
                              _require(lat_raw, "cutoff", "lattice"), int(lat_raw.get("dim", 2)))
    except (SpectralError, TypeError) as exc:
        raise ConfigError(f"lattice: {exc}") from exc
    prm = dict(raw.get("params", {}))
    unknown = set(prm) - {"nu", "mu_thermal", "buoyancy_a", "mu_mag", "sigma", "rho"}
    if unknown:
        raise ConfigError(f"params: unknown fields {sorted(unknown)}")
    try:
        params = PhysicalParams(dim=lattice.dim, **{k: float(v) for k, v in prm.items()})
    except (SpectralError, TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from exc
    init = _require(raw, "initial", "config")
    primary = _modes(init.get("primary", []), lattice, "vector", "initial.primary")
    ckind = "scalar" if problem == "boussinesq" else "vector"
    companion = _modes(init.get("companion", []), lattice, ckind, "initial.companion")
    forcing = _modes(raw["forcing"], lattice, "vector", "forcing") if raw.get("forcing") else None
    nr = raw.get("norm", {})
    try:
        norm = NormParams(kind=nr.get("kind", "gamma_beta"), gamma=float(nr.get("gamma", 3.0)),
                          beta=float(nr.get("beta", 0.0)), dim=lattice.dim)
    except (NormError, TypeError, ValueError) as exc:
        raise ConfigError(f"norm: {exc}") from exc
    grid = raw.get("grid", {})
    cfg = RunConfig(problem=problem, params=params, lattice=lattice, primary=primary,
                    companion=companion, forcing=forcing, norm=norm,
                    series_order=int(raw.get("series_order", 20)),
                    p_max=float(grid.get("p_max", 1.0)), grid_n=int(grid.get("n", 128)),
                    grading=float(grid.get("grading", 1.0)),
                    seed_order=int(grid.get("seed_order", 12)),
                    tolerances=dict(raw.get("tolerances", {})),
                    times=raw.get("times"), rk4_dt=float(raw.get("rk4_dt", 1e-4)),
                    improved=raw.get("improved"), seed=int(raw.get("seed", 0)))
    if cfg.series_order < 0:
        raise ConfigError("series_order: must be nonnegative")
    if not (cfg.p_max > 0 and cfg.grid_n >= 1 and cfg.grading >= 1):
        raise ConfigError("grid: need p_max > 0, n >= 1 and grading >= 1")
    if cfg.times is not None:
        if not (isinstance(cfg.times, list) and cfg.times and all(
                isinstance(t, (int, float)) and t > 0 for t in cfg.times)):
            raise ConfigError("times: expected a nonempty list of positive numbers")
        if any(b <= a for a, b in zip(cfg.times, cfg.times[1:])):
            raise ConfigError("times: must be increasing")
    if not cfg.rk4_dt > 0:
        raise ConfigError("rk4_dt: must be positive")
    for name, f in (("initial.primary", primary), ("forcing", forcing),
                    ("initial.companion", companion if ckind == "vector" else None)):
        if f is not None and not f.is_divergence_free(1e-12):
            raise ConfigError(f"{name}: field is not divergence-free")
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_config(raw)


# --- exports ----------------------------------------------------------------
def component_names(problem: str, dim: int) -> list[str]:
    axes = ["x", "y", "z"][:dim]
    if problem == "boussinesq":
        return [f"u{a}" for a in axes] + ["theta"]
    return [f"v{a}" for a in axes] + [f"b{a}" for a in axes]


def write_table(path: Path, index_name: str, index_values, stacks: np.ndarray, lattice: ModeLattice,
                names: list[str]) -> None:
    """Rows (index, n, k, re/im per component) for modes that are nonzero anywhere."""
    d = lattice.dim
    n = lattice.integer_vectors.reshape(d, -1).T
    k = lattice.k.reshape(d, -1).T
    support = np.nonzero(np.any(stacks != 0, axis=(0, 1)))[0]
    head = [index_name] + [f"n{i + 1}" for i in range(d)] + [f"k{i + 1}" for i in range(d)]
    for c in names:
        head += [f"{c}_re", f"{c}_im"]
    lines = [",".join(head)]
    for idx, arr in zip(index_values, stacks):
        for m in support:
            row = [str(idx) if isinstance(idx, (int, np.integer)) else fmt(idx)]
            row += [str(int(v)) for v in n[m]] + [fmt(v) for v in k[m]]
            for c in range(arr.shape[0]):
                row += [fmt(arr[c, m].real), fmt(arr[c, m].imag)]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_table(path: Path, lattice: ModeLattice, ncomp: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_table: (index values, stacks (N, C, M))."""
    d = lattice.dim
    rows = Path(path).read_text().strip().splitlines()[1:]
    data = [r.split(",") for r in rows]
    index = []
    pos = {}
    for r in data:
        if r[0] not in pos:
            pos[r[0]] = len(index)
            index.append(float(r[0]))
    out = np.zeros((len(index), ncomp, lattice.size), complex)
    for r in data:
        nvec = tuple(int(v) for v in r[1:1 + d])
        m = int(np.ravel_multi_index(lattice.index(nvec), lattice.shape))
        vals = [float(v) for v in r[1 + 2 * d:]]
        out[pos[r[0]], :, m] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return np.array(index), out


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        # round-trip through the 17-digit representation for stable output
        return float(fmt(v))
    return x


# --- pipelines --------------------------------------------------------------
def _system(cfg: RunConfig, workers):
    return FlowSystem(cfg.problem, cfg.lattice, cfg.params, workers)


def run_series(cfg: RunConfig, workers=None):
    series = borel_series(_system(cfg, workers), cfg.state, cfg.forcing, cfg.series_order)
    norms = series.norms(cfg.norm)
    radius = radius_from_norms(norms) if cfg.series_order >= 8 else None
    return series, {"order": cfg.series_order, "coefficient_norms": norms,
                    "radius_estimate": radius, "superexponential": radius == ABOVE_CUTOFF}


def run_march(cfg: RunConfig, workers=None) -> BorelSolution:
    return march(_system(cfg, workers), cfg.state, cfg.forcing, cfg.grid(),
                 seed_order=cfg.seed_order)


def run_apriori(cfg: RunConfig, workers=None):
    system = _system(cfg, workers)
    U0 = system.flat(cfg.state)
    U1 = system.rhs(U0, system.forcing_flat(cfg.forcing))
    n0 = float(stack_norm(U0, cfg.lattice, cfg.norm))
    n1 = float(stack_norm(U1, cfg.lattice, cfg.norm))
    constants = lemma24_constants(cfg.params, cfg.norm, build_kernel_table())
    return apriori_growth(cfg.problem, n0, n1, constants), n0, n1


def default_times(omega: float) -> list[float]:
    """Five times spread over (0, 0.5 / omega]."""
    return [float(v) for v in np.linspace(0.1, 1.0, 5) * 0.5 / omega]


def run_estimate(cfg: RunConfig, workers=None, sol: BorelSolution | None = None) -> dict:
    growth, n0, n1 = run_apriori(cfg, workers)
    c = growth.constants
    report: dict = {
        "problem": cfg.problem,
        "norm": {"kind": cfg.norm.kind, "gamma": cfg.norm.gamma, "beta": cfg.norm.beta},
        "data_norm": n0, "first_coefficient_norm": n1,
        "constants": dict(c.__dict__),
        "apriori": {"omega": growth.omega, "L_ball": growth.L_ball,
                    "lhs_at_omega": growth.lhs_at_omega, "existence_time": 1.0 / growth.omega},
    }
    if cfg.norm.kind == "gamma_beta" and cfg.norm.beta > 0:
        A0, D0 = series_bound_constants(cfg.problem, n0, n1, c, cfg.params, cfg.norm)
        report["series_bound"] = {"A0": A0, "D0": D0, "radius_lower_bound": 1.0 / (4.0 * D0)}
    if cfg.improved:
        if sol is None:
            sol = run_march(cfg, workers)
        p0_req = float(cfg.improved.get("p0", 0.25 * cfg.p_max))
        nodes = sol.nodes
        half = nodes[nodes <= 0.5 * nodes[-1] * (1 + 1e-12)]
        if len(half) < 2:
            raise ConfigError("improved.p0: the grid is too coarse to place p0 below p_max / 2")
        p0 = float(half[np.argmin(np.abs(half - p0_req))])
        fracs = cfg.improved.get("omega0_fraction", [0.125, 0.25, 0.5])
        fracs = [fracs] if isinstance(fracs, (int, float)) else list(fracs)
        imp = improved_existence_scan(sol, p0, growth.omega, c, build_kernel_table(), cfg.norm,
                                      fractions=tuple(float(f) for f in fracs), workers=workers)
        report["improved"] = {k: v for k, v in imp.__dict__.items()}
        report["improved"]["discriminant_holds"] = imp.discriminant_holds()
    return report


def _random_scalar(lattice: ModeLattice, rng, decay: float = 0.5) -> SpectralField:
    a = (rng.standard_normal(lattice.shape) + 1j * rng.standard_normal(lattice.shape))
    a *= np.exp(-decay * lattice.kabs)
    a = 0.5 * (a + np.conj(a[::-1, ::-1] if lattice.dim == 2 else a[::-1, ::-1, ::-1]))
    return SpectralField(lattice, "scalar", a)


def _random_vector(lattice: ModeLattice, rng, decay: float = 0.5) -> SpectralField:
    comps = np.array([_random_scalar(lattice, rng, decay).amplitudes for _ in range(lattice.dim)])
    return SpectralField(lattice, "vector", comps)


def run_verify(cfg: RunConfig, workers=None) -> dict:
    tol = cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    checks = {}

    def add(name, value, ok, **extra):
        checks[name] = {"value": value, "passed": bool(ok), **extra}

    table = build_kernel_table()
    add("sup_G", table.sup_G, 0.55 <= table.sup_G <= 0.65, band=[0.55, 0.65])
    add("sup_G_over_z", table.sup_G_over_z, abs(table.sup_G_over_z - 1 / math.pi) < 1e-12)
    m0 = m0_constant()
    add("M0", m0, 3.7 <= m0 <= 3.8, band=[3.7, 3.8])
    z = np.concatenate([np.geomspace(1e-8, 1.0, 200), np.linspace(1.0, 60.0, 6000)])
    sj = float(np.max(two_j1_over_z(z))) / 2.0
    add("sup_J1_over_z", sj, abs(sj - 0.5) <= 1e-10)
    ode = []
    for _ in range(50):
        p = rng.uniform(0.01, 20.0)
        pp = rng.uniform(0.0, p)
        lam = rng.uniform(0.01, 20.0)
        ode.append(kernel_ode_residual(p, pp, lam))
    t_ode = float(tol.get("kernel_ode", 1e-5))
    add("kernel_ode_residual", max(ode), max(ode) <= t_ode, tolerance=t_ode)
    lap = [laplace_identity_error(lam, t) for lam, t in ((1.0, 0.1), (4.0, 0.05))]
    add("laplace_identity", max(lap), max(lap) <= 1e-8, tolerance=1e-8)

    lat, nrm = cfg.lattice, cfg.norm
    c0 = c0_constant(nrm)
    sub = proj = hom = 0
    for _ in range(CHECK_TRIALS):
        f, g = _random_scalar(lat, rng), _random_scalar(lat, rng)
        if field_norm(convolve(f, g), nrm) > c0 * field_norm(f, nrm) * field_norm(g, nrm) * (1 + 1e-12):
            sub += 1
        v = _random_vector(lat, rng)
        pv = SpectralField(lat, "vector", project_field(lat, v.amplitudes))
        if field_norm(pv, nrm) > field_norm(v, nrm) * (1 + 1e-12):
            proj += 1
        alpha = complex(rng.standard_normal(), rng.standard_normal())
        lhs, rhs = field_norm(f.scaled(alpha), nrm), abs(alpha) * field_norm(f, nrm)
        if abs(lhs - rhs) > 1e-12 * max(rhs, 1e-300):
            hom += 1
    add("subalgebra_violations", sub, sub == 0, trials=CHECK_TRIALS, c0=c0)
    add("projection_violations", proj, proj == 0, trials=CHECK_TRIALS)
    add("homogeneity_violations", hom, hom == 0, trials=CHECK_TRIALS)
    bad = 0
    samples = 0
    for q in (0.1, 0.5, 1.0, 2.0, 5.0):
        for m, n in ((0, 0), (1, 0), (1, 1), (2, 1)):
            samples += 1
            if weighted_convolution_integral(q, m, n) > weighted_convolution_bound(q, m, n):
                bad += 1
    add("convolution_bound_violations", bad, bad == 0, samples=samples, c7=C7[2])
    return {"checks": checks, "all_passed": all(c["passed"] for c in checks.values()),
            "backend": _backend.BACKEND}


def _trajectory_stacks(traj) -> np.ndarray:
    return np.array([s.stack().reshape(s.stack().shape[0], -1) for s in traj.states])


# --- entry point ------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="borel-flow", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["series", "march", "reconstruct", "estimate", "verify", "oracle"])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--order", type=int, help="override the series order")
    ap.add_argument("--p-max", type=float, help="override the Borel grid extent")
    ap.add_argument("--compare-oracle", action="store_true", help="also run RK4 and report deviation")
    ap.add_argument("--workers", type=int, help="worker threads for the convolution core")
    ap.add_argument("--out", default=".", help="output directory")
    return ap


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    workers = args.workers
    if workers is None and os.environ.get("BOREL_FLOW_WORKERS"):
        workers = _backend.default_workers()
    try:
        cfg = load_config(args.config)
        if args.order is not None:
            if args.order < 0:
                raise ConfigError("--order: must be nonnegative")
            cfg.series_order = args.order
        if args.p_max is not None:
            if not args.p_max > 0:
                raise ConfigError("--p-max: must be positive")
            cfg.p_max = args.p_max
        out.mkdir(parents=True, exist_ok=True)
        names = component_names(cfg.problem, cfg.lattice.dim)
        summary: dict

        if args.command == "series":
            series, info = run_series(cfg, workers)
            write_table(out / "coefficients.csv", "l", range(series.order + 1),
                        series.coefficients, cfg.lattice, names)
            write_json(out / "series.json", info)
            summary = {"radius_estimate": info["radius_estimate"]}
        elif args.command == "march":
            sol = run_march(cfg, workers)
            res = residual_integral_eq(sol)
            write_table(out / "borel_solution.csv", "p", sol.nodes, sol.samples, cfg.lattice, names)
            info = {"nodes": sol.grid.size, "p_max": float(sol.nodes[-1]), "grading": sol.grid.grading,
                    "seeded_nodes": sol.seeded_nodes, "residual": res}
            write_json(out / "march.json", info)
            summary = {"residual": res}
        elif args.command == "estimate":
            report = run_estimate(cfg, workers)
            write_json(out / "estimate.json", report)
            summary = {"omega": report["apriori"]["omega"]}
            if "improved" in report:
                summary["omega_final"] = report["improved"]["omega_final"]
        elif args.command == "verify":
            report = run_verify(cfg, workers)
            write_json(out / "verify.json", report)
            for name, c in report["checks"].items():
                print(f"{'PASS' if c['passed'] else 'FAIL'} {name} = {c['value']}")
            if not report["all_passed"]:
                return EXIT_NUMERIC
            summary = {"all_passed": True}
        else:
            growth, _, _ = run_apriori(cfg, workers)
            times = cfg.times or default_times(growth.omega)
            rk4 = None
            if args.command == "oracle" or args.compare_oracle:
                rk4 = galerkin_rk4(cfg.primary, cfg.companion, cfg.forcing, cfg.params, times[-1],
                                   cfg.rk4_dt, problem=cfg.problem, record_times=times,
                                   workers=workers)
            if args.command == "oracle":
                write_table(out / "trajectory.csv", "t", times, _trajectory_stacks(rk4), cfg.lattice, names)
                summary = {"times": len(times)}
            else:
                sol = run_march(cfg, workers)
                traj = laplace_trajectory(sol, cfg.primary, cfg.companion, times, growth.omega)
                stacks = _trajectory_stacks(traj)
                write_table(out / "trajectory.csv", "t", times, stacks, cfg.lattice, names)
                info = {"times": times, "omega": growth.omega}
                if rk4 is not None:
                    ref = _trajectory_stacks(rk4)
                    dev = stack_norm(stacks - ref, cfg.lattice, cfg.norm) / np.maximum(
                        stack_norm(ref, cfg.lattice, cfg.norm), 1e-300)
                    info["oracle_deviation"] = dev
                    info["max_oracle_deviation"] = float(dev.max())
                write_json(out / "reconstruct.json", info)
                summary = {k: v for k, v in info.items() if k != "times"}
        print(json.dumps(_jsonable(summary), sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidityError as exc:
        print(f"validity error: {exc}", file=sys.stderr)
        return EXIT_VALIDITY
    except (MarchError, SeriesOverflowError, EstimateError, BlowUpError, KernelDomainError,
            NormError, SpectralError, ArithmeticError) as exc:
        print(f"numerical failure ({type(exc).__module__}.{type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
