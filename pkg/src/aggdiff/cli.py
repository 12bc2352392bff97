"""Experiment runner: condition checking, simulation in both frames, rate
fitting, and the oracle validation gate, driven by a JSON config file.

Every constant the theory leaves unspecified surfaces in the config and is
echoed into every output, so no run hides a tuning knob.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__, bounds, diagnostics, oracles, potentials, selfsim, solver
from .spectral import Field, make_grid


# ---------------------------------------------------------------------------
# config schema


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dimension: int
    grid: dict
    potential: dict
    initial_data: dict
    solver: dict
    picard: dict | None = None
    diagnostics: dict = dc_field(default_factory=dict)
    constants: dict = dc_field(default_factory=dict)
    output_prefix: str = "run"


_SCHEMA = {
    "dimension": True,
    "grid": {"n": True, "half_width": True},
    "potential": {
        "kind": True, "amplitude": False, "width": False,
        "exponent": False, "path": False,
    },
    "initial_data": {
        "kind": True, "mass": False, "center": False, "sigma2": False,
        "masses": False, "centers": False, "sigma2s": False,
        "inner": False, "ramp": False,
    },
    "solver": {
        "dt": True, "t_end": True, "scheme": False, "dealias": False,
        "diagnostics_every": False, "negative_clip_policy": False,
        "neg_threshold_rel": False,
    },
    "picard": {
        "horizon": True, "max_iter": False, "tol": False,
        "quad_nodes": False, "time_samples": False,
    },
    "diagnostics": {
        "m_list": False, "fit_window": False, "lowfreq_k": False,
    },
    "constants": {
        "c_env": False, "c_m": False, "c_cond4": False,
        "c_infinity": False, "c_two": False,
    },
    "output_prefix": False,
}


def _check_keys(section: str, data: dict, schema: dict):
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    missing = {k for k, required in schema.items() if required is True} - set(data)
    if missing:
        raise ConfigError(f"missing keys in {section}: {sorted(missing)}")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate the raw mapping against the schema; unknown keys are fatal."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", raw, _SCHEMA)
    for key in ("grid", "potential", "initial_data", "solver"):
        if key not in raw:
            raise ConfigError(f"missing section {key!r}")
        if not isinstance(raw[key], dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        _check_keys(key, raw[key], _SCHEMA[key])
    for key in ("picard", "diagnostics", "constants"):
        if raw.get(key) is not None:
            if not isinstance(raw[key], dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            _check_keys(key, raw[key], _SCHEMA[key])
    dim = int(raw["dimension"])
    if dim not in (1, 2, 3):
        raise ConfigError(f"dimension must be 1, 2 or 3, got {dim}")
    return ExperimentConfig(
        dimension=dim,
        grid=dict(raw["grid"]),
        potential=dict(raw["potential"]),
        initial_data=dict(raw["initial_data"]),
        solver=dict(raw["solver"]),
        picard=dict(raw["picard"]) if raw.get("picard") else None,
        diagnostics=dict(raw.get("diagnostics") or {}),
        constants=dict(raw.get("constants") or {}),
        output_prefix=str(raw.get("output_prefix", "run")),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# builders


def build_grid(cfg: ExperimentConfig):
    return make_grid(cfg.dimension, int(cfg.grid["n"]), float(cfg.grid["half_width"]))


def build_potential(cfg: ExperimentConfig):
    spec = cfg.potential
    kind = str(spec["kind"]).lower()
    if kind == "zero":
        return potentials.ZeroPotential()
    if kind == "gaussian":
        return potentials.GaussianPotential(
            amplitude=float(spec["amplitude"]), width=float(spec.get("width", 1.0))
        )
    if kind == "morse":
        return potentials.MorsePotential(
            amplitude=float(spec.get("amplitude", 1.0)),
            exponent=float(spec.get("exponent", 2.0)),
        )
    if kind == "tabulated":
        if "path" not in spec:
            raise ConfigError("tabulated potential needs a 'path'")
        return potentials.load_tabulated(spec["path"])
    raise ConfigError(f"unknown potential kind {kind!r}")


def build_initial(cfg: ExperimentConfig, grid) -> Field:
    spec = cfg.initial_data
    kind = str(spec["kind"]).lower()
    if kind == "gaussian":
        return solver.gaussian_initial(
            grid,
            mass=float(spec.get("mass", 1.0)),
            center=spec.get("center"),
            sigma2=float(spec.get("sigma2", 1.0)),
        )
    if kind == "two_gaussians":
        return solver.double_gaussian_initial(
            grid,
            masses=spec.get("masses", (0.5, 0.5)),
            centers=spec.get("centers", ((-2.0,) * grid.dim, (2.0,) * grid.dim)),
            sigma2s=spec.get("sigma2s", (1.0, 1.0)),
        )
    if kind == "smoothed_indicator":
        return solver.smoothed_indicator_initial(
            grid,
            mass=float(spec.get("mass", 1.0)),
            inner=float(spec.get("inner", 2.0)),
            width=float(spec.get("ramp", 0.5)),
        )
    raise ConfigError(f"unknown initial data kind {kind!r}")


def build_solver_config(cfg: ExperimentConfig) -> solver.SolverConfig:
    s = cfg.solver
    return solver.SolverConfig(
        dt=float(s["dt"]),
        t_end=float(s["t_end"]),
        scheme=str(s.get("scheme", "etdrk2")),
        dealias=bool(s.get("dealias", True)),
        diagnostics_every=int(s.get("diagnostics_every", 1)),
        negative_clip_policy=str(s.get("negative_clip_policy", "clip_and_count")),
        neg_threshold_rel=float(s.get("neg_threshold_rel", 1e-8)),
        lowfreq_k=cfg.diagnostics.get("lowfreq_k"),
    )


def build_picard_config(cfg: ExperimentConfig) -> solver.PicardConfig:
    if cfg.picard is None:
        raise ConfigError("config has no picard section")
    p = cfg.picard
    return solver.PicardConfig(
        horizon=float(p["horizon"]),
        max_iter=int(p.get("max_iter", 60)),
        tol=float(p.get("tol", 1e-9)),
        quad_nodes=int(p.get("quad_nodes", 16)),
        time_samples=int(p.get("time_samples", 65)),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(cfg: ExperimentConfig, out_prefix: str | None = None) -> int:
    """Evaluate the smallness conditions; exit 0 iff one holds, 2 if none."""
    pot = build_potential(cfg)
    qs = tuple(q for q in (1.0, 2.0) )
    norms = potentials.potential_norms(pot, cfg.dimension, q_list=qs)
    consts = cfg.constants
    report = bounds.check_smallness(
        norms,
        mass=float(cfg.initial_data.get("mass", 1.0)),
        c_infinity=consts.get("c_infinity"),
        c_two=consts.get("c_two"),
        c_cond4=float(consts.get("c_cond4", 1.0)),
    )
    text = report.to_text()
    if isinstance(pot, potentials.MorsePotential) and pot.exponent == 2.0:
        alt = potentials.morse_lap_plus_alt(cfg.dimension)
        text += (
            f"  note: alternative positive-part Laplacian value "
            f"{alt:.12g} (direct quadrature gives "
            f"{norms.lap_plus_lhalf_n / abs(pot.amplitude):.12g} per unit amplitude); "
            "the two candidate formulas disagree and both are reported\n"
        )
    prefix = out_prefix or cfg.output_prefix
    with open(f"{prefix}_check.txt", "w") as fh:
        fh.write(text)
    with open(f"{prefix}_check.kv", "w") as fh:
        fh.write(report.to_keyvalues())
    sys.stdout.write(text)
    return 0 if report.any_holds else 2


def cmd_simulate(cfg: ExperimentConfig, out_prefix: str | None = None) -> int:
    prefix = out_prefix or cfg.output_prefix
    grid = build_grid(cfg)
    pot = build_potential(cfg)
    rho0 = build_initial(cfg, grid)
    scfg = build_solver_config(cfg)
    norms = potentials.potential_norms(pot, cfg.dimension)
    report = bounds.check_smallness(
        norms, mass=rho0.mass(), c_cond4=float(cfg.constants.get("c_cond4", 1.0))
    )
    try:
        result = solver.simulate(rho0, pot, scfg, condition_report=report)
    except solver.BlowupError as exc:
        sys.stderr.write(f"simulation aborted: {exc}\n")
        return 1
    result.time_series.metadata.update(_constants_metadata(cfg))
    result.time_series.to_csv(f"{prefix}.csv")
    solver.save_checkpoint(result.final, scfg.t_end, f"{prefix}_final.field")
    sys.stdout.write(
        f"wrote {prefix}.csv ({len(result.time_series)} rows), "
        f"{prefix}_final.field\n"
    )
    return 0


def cmd_rescaled(cfg: ExperimentConfig, out_prefix: str | None = None) -> int:
    prefix = out_prefix or cfg.output_prefix
    grid = build_grid(cfg)
    pot = build_potential(cfg)
    f0 = build_initial(cfg, grid)
    scfg = build_solver_config(cfg)
    try:
        result = selfsim.simulate_rescaled(f0, pot, scfg)
    except solver.BlowupError as exc:
        sys.stderr.write(f"rescaled simulation aborted: {exc}\n")
        return 1
    result.time_series.metadata.update(_constants_metadata(cfg))
    result.time_series.to_csv(f"{prefix}.csv")
    solver.save_checkpoint(result.final.f, result.final.s, f"{prefix}_final.field")
    sys.stdout.write(
        f"wrote {prefix}.csv ({len(result.time_series)} rows), "
        f"{prefix}_final.field\n"
    )
    return 0


def _constants_metadata(cfg: ExperimentConfig) -> dict:
    out = {}
    for k in ("c_env", "c_m", "c_cond4", "c_infinity", "c_two"):
        if k in cfg.constants and cfg.constants[k] is not None:
            out[f"constant_{k}"] = cfg.constants[k]
    return out


def cmd_fit(
    csv_path: str,
    quantity: str,
    window,
    model: str = "power",
    out_path: str | None = None,
) -> int:
    ts = diagnostics.TimeSeries.from_csv(csv_path)
    time_column = "t"
    if model == "exp" and "s" in ts.columns:
        time_column = "s"
    if model == "power":
        report = diagnostics.fit_power_law(ts, quantity, window, time_column=time_column)
    elif model == "exp":
        report = diagnostics.fit_exponential(ts, quantity, window, time_column=time_column)
    elif model == "power-log":
        report = diagnostics.fit_power_log(ts, quantity, window, time_column=time_column)
    else:
        raise ConfigError(f"unknown model {model!r}")
    text = report.to_text()
    if quantity == "l2":
        dim = int(float(ts.metadata.get("dim", 0))) or None
        if dim:
            text += (
                f"  note: norm-decay exponent is -{dim}/4; the squared norm "
                f"decays with exponent -{dim}/2\n"
            )
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(report.to_keyvalues())
    return 0


# ---------------------------------------------------------------------------
# oracle gate


def run_oracle_gate():
    """Cheap independent cross-checks of every load-bearing numerical path.

    Returns a list of (name, passed, detail) triples; cmd_validate turns
    any failure into a nonzero exit.
    """
    from .spectral import convolve, forward, inverse

    checks = []

    def record(name, err, tol):
        checks.append((name, bool(err <= tol), f"err={err:.3e} tol={tol:g}"))

    rng = np.random.default_rng(2024)

    # transform roundtrip and Plancherel
    g1 = make_grid(1, 64, 10.0)
    u = Field(g1, rng.standard_normal(g1.shape))
    back = inverse(forward(u))
    record(
        "transform roundtrip",
        float(np.abs(back.values - u.values).max() / np.abs(u.values).max()),
        1e-12,
    )
    l2_phys = diagnostics.lp_norm(u, 2)
    l2_spec = diagnostics.hm_seminorm(u, 0)
    record("plancherel", abs(l2_phys - l2_spec) / l2_phys, 1e-12)

    # spectral vs direct convolution, n = 32
    g32 = make_grid(1, 32, 8.0)
    a = oracles.GaussianState(1.0, (0.5,), 0.8).sample(g32)
    b = oracles.GaussianState(0.7, (-0.3,), 0.5).sample(g32)
    fast = convolve(a, b, check_decay=False)
    slow = oracles.direct_convolution(a, b)
    record(
        "convolution vs direct sum",
        float(np.abs(fast.values - slow.values).max() / np.abs(slow.values).max()),
        1e-10,
    )

    # series value against the classical closed form
    phi = bounds.mittag_leffler_phi(1.0, 0.5)
    target = math.e * math.erfc(-1.0)
    record("series growth factor", abs(phi - target) / target, 1e-10)

    # heat step against the exact Gaussian
    gs = oracles.GaussianState(1.0, (0.0,), 1.0)
    g_heat = make_grid(1, 128, 20.0)
    cfg = solver.SolverConfig(dt=0.25, t_end=1.0, scheme="etdrk2")
    res = solver.simulate(gs.sample(g_heat), potentials.ZeroPotential(), cfg)
    exact = oracles.exact_heat(gs, 1.0).sample(g_heat)
    record(
        "exact heat evolution",
        float(
            np.abs(res.final.values - exact.values).max()
            / np.abs(exact.values).max()
        ),
        1e-10,
    )

    # confined-flow equilibrium: the Maxwellian is stationary
    g_ou = make_grid(1, 128, 12.0)
    maxwellian = oracles.GaussianState(1.0, (0.0,), 1.0).sample(g_ou)
    stepped = selfsim.step_rescaled(
        maxwellian, 0.0, 1e-3, potentials.ZeroPotential(),
        solver.SolverConfig(dt=1e-3, t_end=1e-3),
    )
    record(
        "confined equilibrium stationarity",
        float(np.abs(stepped.values - maxwellian.values).max()
              / np.abs(maxwellian.values).max()),
        1e-10,
    )

    # entropy closed form against grid quadrature
    gsE = oracles.GaussianState(1.0, (0.0,), 2.0)
    h_ref, d_ref = oracles.gaussian_entropy(gsE)
    row = selfsim.entropy_ledger(
        gsE.sample(g_ou), 0.0, potentials.ZeroPotential(), mass=1.0
    )
    record("gaussian entropy closed form", abs(row.H_rel - h_ref) / h_ref, 1e-6)
    record("gaussian dissipation closed form", abs(row.D - d_ref) / d_ref, 1e-6)

    return checks


def cmd_validate() -> int:
    checks = run_oracle_gate()
    width = max(len(name) for name, _, _ in checks)
    ok = True
    for name, passed, detail in checks:
        status = "pass" if passed else "FAIL"
        sys.stdout.write(f"{name:<{width}}  {status}  {detail}\n")
        ok &= passed
    sys.stdout.write("oracle gate: " + ("all checks passed\n" if ok else "FAILURES\n"))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aggdiff",
        description="simulate diffusion-dominated aggregation and verify decay rates",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("check", "simulate", "rescaled"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)

    p_fit = sub.add_parser("fit")
    p_fit.add_argument("--csv", required=True)
    p_fit.add_argument("--quantity", required=True)
    p_fit.add_argument("--window", nargs=2, type=float, required=True)
    p_fit.add_argument(
        "--model", choices=("power", "exp", "power-log"), default="power"
    )
    p_fit.add_argument("--out", default=None)

    sub.add_parser("validate")

    args = parser.parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(load_config(args.config), args.out)
        if args.command == "simulate":
            return cmd_simulate(load_config(args.config), args.out)
        if args.command == "rescaled":
            return cmd_rescaled(load_config(args.config), args.out)
        if args.command == "fit":
            return cmd_fit(
                args.csv, args.quantity, tuple(args.window), args.model, args.out
            )
        if args.command == "validate":
            return cmd_validate()
    except (ConfigError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
