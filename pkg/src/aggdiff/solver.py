"""Time evolution of the aggregation-diffusion equation by two independent
routes: an exponential-integrator pseudo-spectral stepper, and a Picard
iteration on the mild (integral) formulation with runtime contraction
checking.

The diffusion is applied exactly through the spectral heat multiplier, so
with a zero potential the stepper has no time-discretization error at all;
that exactness anchors the whole acceptance suite.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .diagnostics import TimeSeries, PHYS_COLUMNS, measure_state
from .potentials import sample_on_grid
from .spectral import (
    BOUNDARY_MASS_TOL,
    Field,
    Grid,
    boundary_mass_fraction,
    conv_norm,
    derivative_multiplier,
    forward_values,
    inverse_values,
)

# Relative scale of negative undershoot tolerated in a physical density.
NEG_CLIP_REL = 1e-12


class BlowupError(RuntimeError):
    """Raised when the evolved state loses finiteness."""


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    scheme: str = "etdrk2"
    dealias: bool = True
    diagnostics_every: int = 1
    negative_clip_policy: str = "clip_and_count"
    neg_threshold_rel: float = 1e-8
    lowfreq_k: float | None = None

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.scheme not in ("etdrk2", "etdrk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.diagnostics_every < 1:
            raise ValueError("diagnostics_every must be >= 1")
        if self.negative_clip_policy not in ("clip_and_count", "error_above_threshold"):
            raise ValueError(f"unknown clip policy {self.negative_clip_policy!r}")


@dataclass
class PicardConfig:
    horizon: float
    max_iter: int = 60
    tol: float = 1e-9
    quad_nodes: int = 16
    time_samples: int = 65

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.quad_nodes < 8:
            raise ValueError("at least 8 quadrature nodes are required")
        if self.time_samples < 4:
            raise ValueError("need at least 4 trajectory samples")


# ---------------------------------------------------------------------------
# exponential-integrator machinery


def _phi_contour(z: np.ndarray, formula, n_points: int = 32) -> np.ndarray:
    """Evaluate an ETD phi-coefficient formula on real z via a unit contour
    average, which removes the removable singularity at z = 0."""
    theta = np.pi * (np.arange(n_points) + 0.5) / n_points
    roots = np.exp(1j * theta)  # upper half circle; real z makes means real
    zr = z.reshape(z.shape + (1,)) + roots
    return formula(zr).mean(axis=-1).real


class EtdStepper:
    """One-step exponential integrator for d/dt u = Lap u + N(u, t).

    `nonlinear(v_hat, t, phys=None)` must return the transform of N at the
    given stage; `None` means the equation is pure diffusion and stepping
    reduces to the exact heat multiplier.
    """

    def __init__(self, grid: Grid, dt: float, scheme: str, nonlinear=None):
        self.grid = grid
        self.dt = dt
        self.scheme = scheme
        self.nonlinear = nonlinear
        z = -grid.k_squared * dt
        self.heat_full = np.exp(z)
        if nonlinear is None:
            return
        if scheme == "etdrk2":
            self.phi1 = _phi_contour(z, lambda w: (np.exp(w) - 1.0) / w)
            self.phi2 = _phi_contour(z, lambda w: (np.exp(w) - w - 1.0) / w ** 2)
        else:
            self.heat_half = np.exp(z / 2.0)
            self.q = dt * 0.5 * _phi_contour(
                z / 2.0, lambda w: (np.exp(w) - 1.0) / w
            )
            self.f1 = dt * _phi_contour(
                z, lambda w: (-4.0 - w + np.exp(w) * (4.0 - 3.0 * w + w ** 2)) / w ** 3
            )
            self.f2 = dt * _phi_contour(
                z, lambda w: (2.0 + w + np.exp(w) * (w - 2.0)) / w ** 3
            )
            self.f3 = dt * _phi_contour(
                z, lambda w: (-4.0 - 3.0 * w - w ** 2 + np.exp(w) * (4.0 - w)) / w ** 3
            )

    def step_hat(self, v_hat: np.ndarray, t: float, phys=None) -> np.ndarray:
        if self.nonlinear is None:
            return self.heat_full * v_hat
        dt = self.dt
        if self.scheme == "etdrk2":
            n_v = self.nonlinear(v_hat, t, phys)
            a = self.heat_full * v_hat + dt * self.phi1 * n_v
            n_a = self.nonlinear(a, t + dt)
            return a + dt * self.phi2 * (n_a - n_v)
        n_v = self.nonlinear(v_hat, t, phys)
        a = self.heat_half * v_hat + self.q * n_v
        n_a = self.nonlinear(a, t + dt / 2.0)
        b = self.heat_half * v_hat + self.q * n_a
        n_b = self.nonlinear(b, t + dt / 2.0)
        c = self.heat_half * a + self.q * (2.0 * n_b - n_v)
        n_c = self.nonlinear(c, t + dt)
        return (
            self.heat_full * v_hat
            + self.f1 * n_v
            + 2.0 * self.f2 * (n_a + n_b)
            + self.f3 * n_c
        )


def make_interaction_rhs(grid: Grid, grad_w_fields, dealias: bool = True):
    """Closure computing the transform of div(rho (grad W * rho)).

    Returns None when the sampled gradient vanishes identically (zero
    potential), which lets the stepper fall back to exact diffusion.
    """
    grad_w_hats = [forward_values(grid, f.values) for f in grad_w_fields]
    if all(np.abs(f.values).max() == 0.0 for f in grad_w_fields):
        return None
    conv = conv_norm(grid.dim)
    keep = grid.dealias_keep
    derivs = [derivative_multiplier(grid, d) for d in range(grid.dim)]

    def nonlinear(v_hat, t, phys=None):
        rho = inverse_values(grid, v_hat) if phys is None else phys
        out = np.zeros(grid.shape, dtype=complex)
        for d in range(grid.dim):
            vel = inverse_values(grid, conv * grad_w_hats[d] * v_hat)
            flux_hat = forward_values(grid, rho * vel)
            if dealias:
                flux_hat = np.where(keep, flux_hat, 0.0)
            out += derivs[d] * flux_hat
        return out

    return nonlinear


def rhs_nonlinear(rho: Field, grad_w_fields, dealias: bool = True) -> Field:
    """div(rho (grad W * rho)) as a Field (zero integral by construction)."""
    for f in grad_w_fields:
        if not rho.grid.compatible(f.grid):
            raise ValueError("grid mismatch between density and potential sample")
    closure = make_interaction_rhs(rho.grid, grad_w_fields, dealias)
    if closure is None:
        return Field(rho.grid, np.zeros(rho.grid.shape))
    out_hat = closure(forward_values(rho.grid, rho.values), 0.0, rho.values)
    vals = inverse_values(rho.grid, out_hat)
    if not np.isfinite(vals).all():
        raise BlowupError("nonlinear term lost finiteness")
    return Field(rho.grid, vals)


# ---------------------------------------------------------------------------
# stepping with the negativity policy


def _apply_negativity_policy(rho: np.ndarray, config: SolverConfig, stats: dict):
    """Inspect a physical-space state; clip or abort per policy.

    Returns (possibly clipped) values and whether clipping modified them.
    """
    peak = float(np.abs(rho).max())
    if not math.isfinite(peak):
        raise BlowupError("state lost finiteness")
    if peak == 0.0:
        return rho, False
    low = float(rho.min())
    if low >= 0.0:
        return rho, False
    if config.negative_clip_policy == "error_above_threshold":
        if low < -config.neg_threshold_rel * peak:
            raise BlowupError(
                f"negative density {low:.3e} beyond policy threshold "
                f"{config.neg_threshold_rel:g} * {peak:.3e}"
            )
        return rho, False
    clip_level = -NEG_CLIP_REL * peak
    mask = rho < clip_level
    if not mask.any():
        return rho, False
    stats["clip_events"] += int(mask.sum())
    stats["clipped_mass"] += float(-rho[mask].sum())
    out = rho.copy()
    out[mask] = 0.0
    return out, True


def step(rho: Field, dt: float, config: SolverConfig, grad_w_fields) -> Field:
    """Advance one step of size dt (dt = 0 returns the state unchanged)."""
    if dt == 0.0:
        return rho.copy()
    cfg = SolverConfig(
        dt=dt,
        t_end=dt,
        scheme=config.scheme,
        dealias=config.dealias,
        negative_clip_policy=config.negative_clip_policy,
        neg_threshold_rel=config.neg_threshold_rel,
    )
    result = simulate(rho, None, cfg, grad_w_fields=grad_w_fields, quiet=True)
    return result.final


@dataclass
class SimulationResult:
    time_series: TimeSeries
    final: Field
    clip_events: int
    clipped_mass: float
    metadata: dict = field(default_factory=dict)


def simulate(
    rho0: Field,
    potential,
    config: SolverConfig,
    grad_w_fields=None,
    condition_report=None,
    quiet: bool = False,
) -> SimulationResult:
    """Run the evolution and collect diagnostics at the configured cadence.

    The smallness verdict, when supplied, is advisory: it is recorded in
    the metadata and the run proceeds regardless.
    """
    g = rho0.grid
    if grad_w_fields is None:
        if potential is None:
            raise ValueError("either a potential or sampled gradients are required")
        _, grad_w_fields = sample_on_grid(potential, g)
    nonlinear = make_interaction_rhs(g, grad_w_fields, config.dealias)

    if config.dt > 0:
        n_steps = int(round(config.t_end / config.dt))
        if abs(n_steps * config.dt - config.t_end) > 1e-9 * max(config.t_end, 1.0):
            raise ValueError("t_end must be an integer multiple of dt")
    else:
        if config.t_end > 0:
            raise ValueError("dt = 0 only valid with t_end = 0")
        n_steps = 0

    lowfreq_k = config.lowfreq_k if config.lowfreq_k is not None else g.dim / 2.0 + 2.0
    mass0 = rho0.mass()
    stats = {"clip_events": 0, "clipped_mass": 0.0}

    metadata = {
        "version": __version__,
        "threads": 1,
        "scheme": config.scheme,
        "dt": config.dt,
        "t_end": config.t_end,
        "dim": g.dim,
        "n": g.n,
        "half_width": g.half_width,
        "dealias": config.dealias,
        "lowfreq_k": lowfreq_k,
        "clip_policy": config.negative_clip_policy,
    }
    if condition_report is not None:
        metadata["smallness_verdict"] = (
            "holds" if condition_report.any_holds else "none"
        )

    ts = TimeSeries(columns=PHYS_COLUMNS, metadata=metadata)
    ts.add_row(measure_state(rho0, 0.0, mass0, lowfreq_k))

    stepper = EtdStepper(g, config.dt, config.scheme, nonlinear)
    v_hat = forward_values(g, rho0.values)
    boundary_flagged = False
    cfl_warned = False

    for istep in range(n_steps):
        t = istep * config.dt
        phys = inverse_values(g, v_hat) if istep else rho0.values
        phys, clipped = _apply_negativity_policy(phys, config, stats)
        if clipped:
            v_hat = forward_values(g, phys)
        v_hat = stepper.step_hat(v_hat, t, phys=phys)
        t_next = (istep + 1) * config.dt

        if (istep + 1) % config.diagnostics_every == 0 or istep + 1 == n_steps:
            state_vals = inverse_values(g, v_hat)
            if not np.isfinite(state_vals).all():
                raise BlowupError(
                    f"solution lost finiteness at t = {t_next:.6g} (step {istep + 1}); "
                    f"last valid diagnostics at t = {ts.column('t')[-1]:.6g}"
                )
            state = Field(g, state_vals)
            ts.add_row(measure_state(state, t_next, mass0, lowfreq_k))
            if not boundary_flagged:
                frac = boundary_mass_fraction(state)
                if frac > BOUNDARY_MASS_TOL:
                    boundary_flagged = True
                    if not quiet:
                        warnings.warn(
                            f"boundary mass fraction {frac:.2e} exceeds "
                            f"{BOUNDARY_MASS_TOL:g}; the box no longer represents "
                            "free space",
                            RuntimeWarning,
                            stacklevel=2,
                        )
            if nonlinear is not None and not cfl_warned and not quiet:
                vel_max = _max_transport_speed(g, grad_w_fields, v_hat)
                if config.dt * vel_max / g.spacing > 0.5:
                    cfl_warned = True
                    warnings.warn(
                        f"advective CFL number {config.dt * vel_max / g.spacing:.2f} "
                        "exceeds 0.5; consider a smaller dt",
                        RuntimeWarning,
                        stacklevel=2,
                    )

    final_vals = inverse_values(g, v_hat) if n_steps else rho0.values.copy()
    if not np.isfinite(final_vals).all():
        raise BlowupError("final state lost finiteness")
    metadata["boundary_flag"] = boundary_flagged
    metadata["clip_events"] = stats["clip_events"]
    metadata["clipped_mass"] = stats["clipped_mass"]
    ts.metadata.update(
        boundary_flag=boundary_flagged,
        clip_events=stats["clip_events"],
    )
    return SimulationResult(
        time_series=ts,
        final=Field(g, final_vals),
        clip_events=stats["clip_events"],
        clipped_mass=stats["clipped_mass"],
        metadata=metadata,
    )


def _max_transport_speed(g: Grid, grad_w_fields, v_hat) -> float:
    conv = conv_norm(g.dim)
    speed = 0.0
    for f in grad_w_fields:
        gw_hat = forward_values(g, f.values)
        vel = inverse_values(g, conv * gw_hat * v_hat)
        speed = max(speed, float(np.abs(vel).max()))
    return speed


# ---------------------------------------------------------------------------
# mild-formulation route


def duhamel_bilinear(
    times: np.ndarray,
    rho_values: np.ndarray,
    psi_values: np.ndarray,
    t: float,
    grid: Grid,
    grad_w_fields,
    n_nodes: int = 16,
) -> Field:
    """The mild-formulation correction term

        -(integral_0^t grad e^{(t-s) Lap} . ((grad W * psi_s) rho_s) ds)

    evaluated by Gauss-Legendre in u after the substitution s = t - u^2,
    which flattens the (t-s)^{-1/2} kernel growth near s = t.  The
    trajectories are cubic splines through their samples.
    """
    if n_nodes < 8:
        raise ValueError("at least 8 quadrature nodes are required")
    if t == 0.0:
        return Field(grid, np.zeros(grid.shape))
    grad_w_hats = [forward_values(grid, f.values) for f in grad_w_fields]
    if all(np.abs(f.values).max() == 0.0 for f in grad_w_fields):
        return Field(grid, np.zeros(grid.shape))
    conv = conv_norm(grid.dim)
    derivs = [derivative_multiplier(grid, d) for d in range(grid.dim)]
    ksq = grid.k_squared

    rho_spline = CubicSpline(times, rho_values, axis=0)
    psi_spline = CubicSpline(times, psi_values, axis=0)

    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    umax = math.sqrt(t)
    u = 0.5 * umax * (nodes + 1.0)
    w = 0.5 * umax * weights * 2.0 * u  # ds = 2 u du

    out_hat = np.zeros(grid.shape, dtype=complex)
    for ui, wi in zip(u, w):
        s = t - ui * ui
        rho_s = rho_spline(s)
        psi_hat = forward_values(grid, psi_spline(s))
        heat = np.exp(-ksq * (ui * ui))
        for d in range(grid.dim):
            vel = inverse_values(grid, conv * grad_w_hats[d] * psi_hat)
            flux_hat = forward_values(grid, rho_s * vel)
            out_hat -= wi * derivs[d] * heat * flux_hat
    return Field(grid, inverse_values(grid, out_hat))


@dataclass
class PicardResult:
    times: np.ndarray
    states: list
    iterations: int
    converged: bool
    residuals: list

    @property
    def final(self) -> Field:
        return self.states[-1]


def duhamel_picard(rho0: Field, potential, config: PicardConfig) -> PicardResult:
    """Fixed-point iteration on the mild formulation.

    Iterates rho^{k+1} = heat(t) rho0 + B(rho^k, rho^k) on a uniform time
    sample of [0, horizon]; stops when the sup-in-time L2 increment drops
    below the tolerance.  Non-convergence is reported, never silently
    accepted.
    """
    g = rho0.grid
    _, grad_w_fields = sample_on_grid(potential, g)
    times = np.linspace(0.0, config.horizon, config.time_samples)
    rho0_hat = forward_values(g, rho0.values)
    ksq = g.k_squared
    heat_traj = np.stack(
        [inverse_values(g, np.exp(-ksq * t) * rho0_hat) for t in times]
    )

    traj = heat_traj.copy()
    residuals = []
    converged = False
    iterations = 0
    interacting = any(np.abs(f.values).max() > 0 for f in grad_w_fields)
    cell = g.cell_volume

    for it in range(1, config.max_iter + 1):
        iterations = it
        new_traj = heat_traj.copy()
        if interacting:
            for j, t in enumerate(times[1:], start=1):
                corr = duhamel_bilinear(
                    times, traj, traj, float(t), g, grad_w_fields, config.quad_nodes
                )
                new_traj[j] += corr.values
        diffs = np.sqrt(
            cell * ((new_traj - traj) ** 2).reshape(len(times), -1).sum(axis=1)
        )
        resid = float(diffs.max())
        residuals.append(resid)
        traj = new_traj
        if not np.isfinite(resid):
            break
        if resid < config.tol:
            converged = True
            break
        if not interacting:
            converged = True
            break

    states = [Field(g, traj[j].copy()) for j in range(len(times))]
    return PicardResult(times, states, iterations, converged, residuals)


def contraction_margin(
    grad_lq: float, initial_sobolev_norm: float, horizon: float, c_m: float = 1.0
) -> float:
    """4 c_m sqrt(T) ||grad W||_q ||rho0||_{m,p}; below 1 marks the
    fixed-point regime of the mild formulation."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    return 4.0 * c_m * math.sqrt(horizon) * grad_lq * initial_sobolev_norm


# ---------------------------------------------------------------------------
# initial data families (all in L1 and Linf with finite second moment)


def gaussian_initial(grid: Grid, mass: float = 1.0, center=None, sigma2: float = 1.0) -> Field:
    from .oracles import GaussianState

    if center is None:
        center = (0.0,) * grid.dim
    return GaussianState(mass, tuple(center), sigma2).sample(grid)


def double_gaussian_initial(
    grid: Grid, masses=(0.5, 0.5), centers=((-2.0,), (2.0,)), sigma2s=(1.0, 1.0)
) -> Field:
    from .oracles import GaussianState

    vals = np.zeros(grid.shape)
    for m, c, s2 in zip(masses, centers, sigma2s):
        vals += GaussianState(m, tuple(c), s2).sample(grid).values
    return Field(grid, vals)


def smoothed_indicator_initial(
    grid: Grid, mass: float = 1.0, inner: float = 2.0, width: float = 0.5
) -> Field:
    """Mollified box of half-size `inner`, ramp scale `width`, normalized mass."""
    vals = np.ones(grid.shape)
    for c in grid.coords:
        vals = vals * 0.5 * (
            np.tanh((c + inner) / width) - np.tanh((c - inner) / width)
        )
    total = vals.sum() * grid.cell_volume
    if total <= 0:
        raise ValueError("degenerate smoothed indicator")
    return Field(grid, vals * (mass / total))


# ---------------------------------------------------------------------------
# checkpointing

_CHECKPOINT_MAGIC = "aggdiff-field"


def save_checkpoint(field_: Field, t: float, path):
    g = field_.grid
    header = (
        f"{_CHECKPOINT_MAGIC} dim={g.dim} n={g.n} "
        f"half_width={g.half_width!r} time={float(t)!r}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        parts = header.split()
        if not parts or parts[0] != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a field checkpoint: {path}")
        kv = dict(p.split("=", 1) for p in parts[1:])
        grid = Grid(int(kv["dim"]), int(kv["n"]), float(kv["half_width"]))
        t = float(kv["time"])
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).copy()
    return Field(grid, values), t
