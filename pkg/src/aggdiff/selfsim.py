"""Self-similar change of variables, the confined rescaled flow with its
shrinking interaction kernel, and the entropy/dissipation ledger.

In the rescaled frame diffusion plus the confinement drift relax any
density toward the unit Maxwellian, while the interaction kernel shrinks
with rate e^{-N s}; the ledger quantifies exactly that competition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .diagnostics import (
    RESCALED_COLUMNS,
    TimeSeries,
    lp_norm,
    low_freq_fraction,
    second_moment,
    spectrum_l2,
    weighted_l2,
)
from .potentials import ZeroPotential
from .solver import BlowupError, EtdStepper, SolverConfig, _apply_negativity_policy
from .spectral import (
    BOUNDARY_MASS_TOL,
    Field,
    Grid,
    boundary_mass_fraction,
    conv_norm,
    derivative_multiplier,
    forward,
    forward_values,
    inverse_values,
    resample_scaled,
    riesz_power,
)

# Floor policy for f log f: contributions vanish below the hard floor and
# are linearized (frozen log) below the relative floor.
FLOG_HARD_FLOOR = 1e-300
FLOG_REL_FLOOR = 1e-16

_SUPPORT_OVERFLOW_TOL = 100.0 * BOUNDARY_MASS_TOL


def s_from_t(t: float) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return 0.5 * math.log1p(2.0 * t)


def t_from_s(s: float) -> float:
    if s < 0:
        raise ValueError("s must be nonnegative")
    return 0.5 * math.expm1(2.0 * s)


@dataclass
class RescaledState:
    f: Field
    s: float

    @property
    def source_time(self) -> float:
        return t_from_s(self.s)


def to_selfsimilar(rho: Field, t: float) -> RescaledState:
    """Map a physical-time state to the rescaled frame:
    f(y) = e^{N s} rho(t, e^s y) with s = log(1 + 2t) / 2."""
    s = s_from_t(t)
    scale = math.exp(s)
    vals = resample_scaled(rho, scale).values * scale ** rho.grid.dim
    out = Field(rho.grid, vals)
    if boundary_mass_fraction(out) > _SUPPORT_OVERFLOW_TOL:
        raise ValueError(
            "rescaled support overflows the grid; rerun with a larger half_width"
        )
    return RescaledState(out, s)


def from_selfsimilar(state: RescaledState):
    """Inverse map: rho(t, x) = e^{-N s} f(s, e^{-s} x)."""
    s = state.s
    g = state.f.grid
    vals = resample_scaled(state.f, math.exp(-s)).values * math.exp(-g.dim * s)
    return Field(g, vals), t_from_s(s)


# ---------------------------------------------------------------------------
# shrinking potential


def rescaled_potential(pot, s: float, grid: Grid):
    """Sample the time-dependent kernel W(y e^s) and its gradient
    e^s grad W(y e^s) analytically on the grid."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    es = math.exp(s)
    r = grid.radius
    rs = es * r
    w_vals = np.asarray(pot.radial(rs), dtype=float)
    kprime = np.asarray(pot.radial_derivative(rs), dtype=float)
    # grad_d = e^s k'(e^s r) * y_d / r, with the origin limit taken as zero
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, es * kprime / np.where(r > 0, r, 1.0), 0.0)
    grads = [Field(grid, scale * c) for c in grid.coords]
    peak = np.abs(w_vals - pot.far_field_constant()).max()
    if peak > 0:
        edge = abs(float(pot.radial(es * grid.half_width)) - pot.far_field_constant())
        if edge > 1e-8 * peak:
            warnings.warn(
                "rescaled kernel does not decay at the box boundary",
                RuntimeWarning,
                stacklevel=2,
            )
    return Field(grid, w_vals), grads


def _sample_scale_derivative(pot, s: float, grid: Grid) -> Field:
    """Sample y . grad_y W(y e^s) = e^s r k'(e^s r), the s-derivative of the
    shrinking kernel."""
    es = math.exp(s)
    rs = es * grid.radius
    return Field(grid, rs * np.asarray(pot.radial_derivative(rs), dtype=float))


# ---------------------------------------------------------------------------
# rescaled stepping


def make_rescaled_rhs(grid: Grid, pot, dealias: bool = True):
    """Closure for the non-diffusive part of the rescaled flow:
    div(y f) + div(f (grad Wtil * f)), with the kernel resampled at every
    stage time.  The confinement product is never dealiased (it is linear
    in f); the quadratic interaction flux is."""
    derivs = [derivative_multiplier(grid, d) for d in range(grid.dim)]
    coords = grid.coords
    keep = grid.dealias_keep
    conv = conv_norm(grid.dim)
    interacting = not isinstance(pot, ZeroPotential)

    def nonlinear(v_hat, s, phys=None):
        f = inverse_values(grid, v_hat) if phys is None else phys
        out = np.zeros(grid.shape, dtype=complex)
        for d in range(grid.dim):
            out += derivs[d] * forward_values(grid, coords[d] * f)
        if interacting:
            _, grads = rescaled_potential(pot, max(s, 0.0), grid)
            for d in range(grid.dim):
                gw_hat = forward_values(grid, grads[d].values)
                vel = inverse_values(grid, conv * gw_hat * v_hat)
                flux_hat = forward_values(grid, f * vel)
                if dealias:
                    flux_hat = np.where(keep, flux_hat, 0.0)
                out += derivs[d] * flux_hat
        return out

    return nonlinear


def step_rescaled(f: Field, s: float, ds: float, pot, config: SolverConfig) -> Field:
    """One step of the rescaled flow (ds = 0 returns the state unchanged)."""
    if ds == 0.0:
        return f.copy()
    nonlinear = make_rescaled_rhs(f.grid, pot, config.dealias)
    stepper = EtdStepper(f.grid, ds, config.scheme, nonlinear)
    stats = {"clip_events": 0, "clipped_mass": 0.0}
    phys, clipped = _apply_negativity_policy(f.values, config, stats)
    v_hat = forward_values(f.grid, phys)
    out = inverse_values(f.grid, stepper.step_hat(v_hat, s, phys=phys))
    if not np.isfinite(out).all():
        raise BlowupError(f"rescaled state lost finiteness at s = {s:.6g}")
    return Field(f.grid, out)


# ---------------------------------------------------------------------------
# entropy ledger


@dataclass
class EntropyRow:
    s: float
    H: float
    H_rel: float
    D: float
    cross_term: float
    T2: float
    T31: float
    T32: float
    T4: float
    logsob_margin: float


def _f_log_f(values: np.ndarray) -> np.ndarray:
    """f log f with the floor policy: zero below the hard floor, frozen log
    below the relative floor (spectral undershoot makes the raw log
    ill-defined there)."""
    peak = float(np.abs(values).max())
    rel_floor = FLOG_REL_FLOOR * max(peak, FLOG_HARD_FLOOR)
    out = np.zeros_like(values)
    solid = values > rel_floor
    out[solid] = values[solid] * np.log(values[solid])
    linear = (~solid) & (values > FLOG_HARD_FLOOR)
    out[linear] = values[linear] * math.log(rel_floor)
    return out


def entropy_ledger(f: Field, s: float, pot, mass: float | None = None) -> EntropyRow:
    """One dissipation-ledger row for a rescaled state.

    All terms are evaluated from their own integral definitions; in
    particular T4 comes from the s-derivative kernel convolution, not from
    any identity with T31, so the claimed proportionality between the two
    stays independently checkable.
    """
    g = f.grid
    cell = g.cell_volume
    vals = f.values
    m = float(mass) if mass is not None else f.mass()
    if m <= 0:
        raise ValueError("entropy needs positive mass")
    dim = g.dim
    coords = g.coords
    ysq = sum(c ** 2 for c in coords)

    flogf = _f_log_f(vals)
    h = float(cell * (flogf + 0.5 * ysq * vals).sum())
    h_rel = h + m * (0.5 * dim * math.log(2.0 * math.pi) - math.log(m))

    # dissipation with the same floor mask
    peak = float(np.abs(vals).max())
    rel_floor = FLOG_REL_FLOOR * max(peak, FLOG_HARD_FLOOR)
    solid = vals > rel_floor
    spec = forward(f)
    from .spectral import inverse, spectral_derivative

    grad_f = [
        inverse(spectral_derivative(spec, _unit(dim, d))).values for d in range(dim)
    ]
    d_val = 0.0
    safe = np.where(solid, vals, 1.0)
    for dcomp, c in zip(grad_f, coords):
        term = np.where(solid, vals * (c + dcomp / safe) ** 2, 0.0)
        d_val += float(cell * term.sum())

    if isinstance(pot, ZeroPotential):
        cross = t2 = t31 = t32 = t4 = 0.0
    else:
        w_field, w_grads = rescaled_potential(pot, s, g)
        f_hat = forward_values(g, vals)
        conv = conv_norm(dim)
        w_conv_f = inverse_values(g, conv * forward_values(g, w_field.values) * f_hat)
        cross = 0.5 * float(cell * (vals * w_conv_f).sum())
        vel = [
            inverse_values(g, conv * forward_values(g, wg.values) * f_hat)
            for wg in w_grads
        ]
        vsq = sum(v ** 2 for v in vel)
        fpos = np.maximum(vals, 0.0)
        t2 = -float(cell * (fpos * vsq).sum())
        ydotv = sum(c * v for c, v in zip(coords, vel))
        t31 = 2.0 * float(cell * (vals * ydotv).sum())
        t32 = 2.0 * sum(
            float(cell * (gf * v).sum()) for gf, v in zip(grad_f, vel)
        )
        ws = _sample_scale_derivative(pot, s, g)
        ws_conv_f = inverse_values(g, conv * forward_values(g, ws.values) * f_hat)
        t4 = 0.5 * float(cell * (vals * ws_conv_f).sum())

    return EntropyRow(
        s=s,
        H=h,
        H_rel=h_rel,
        D=d_val,
        cross_term=cross,
        T2=t2,
        T31=t31,
        T32=t32,
        T4=t4,
        logsob_margin=d_val - 2.0 * h_rel,
    )


def _unit(dim, d):
    gamma = [0] * dim
    gamma[d] = 1
    return tuple(gamma)


# ---------------------------------------------------------------------------
# rescaled simulation


def measure_rescaled_state(
    f: Field, s: float, mass0: float, lowfreq_k: float, pot
) -> dict:
    """Full diagnostics row (physical columns plus entropy block) in the
    rescaled frame; the heat-distance target is the mass-M Gaussian of
    variance 1 - e^{-2s}."""
    g = f.grid
    t = t_from_s(s)
    spec = forward(f)
    row = {
        "t": t,
        "s": s,
        "mass": f.mass(),
        "l1": lp_norm(f, 1.0),
        "l2": lp_norm(f, 2.0),
        "linf": lp_norm(f, np.inf),
        "h1": spectrum_l2(riesz_power(spec, 1.0)),
        "h2": spectrum_l2(riesz_power(spec, 2.0)),
        "m2": second_moment(f),
        "xrho2": weighted_l2(f),
        "lowfreq": low_freq_fraction(f, t, lowfreq_k),
    }
    var = -math.expm1(-2.0 * s)
    if var > 0:
        q = sum(c ** 2 for c in g.coords)
        target = mass0 / (2.0 * math.pi * var) ** (g.dim / 2.0) * np.exp(
            -q / (2.0 * var)
        )
        row["l1heat"] = float(g.cell_volume * np.abs(f.values - target).sum())
    else:
        row["l1heat"] = math.nan
    ledger = entropy_ledger(f, s, pot, mass=mass0)
    row.update(
        H=ledger.H,
        Hrel=ledger.H_rel,
        D=ledger.D,
        cross=ledger.cross_term,
        T2=ledger.T2,
        T31=ledger.T31,
        T32=ledger.T32,
        T4=ledger.T4,
        logsob=ledger.logsob_margin,
    )
    return row


@dataclass
class RescaledResult:
    time_series: TimeSeries
    final: RescaledState
    clip_events: int
    clipped_mass: float
    metadata: dict = field(default_factory=dict)


def simulate_rescaled(f0: Field, pot, config: SolverConfig) -> RescaledResult:
    """Evolve the rescaled flow to s = t_end with step ds = dt, emitting
    ledger rows at the diagnostics cadence.

    A boundary-mass breach aborts the run: the confinement drift is
    meaningless for mass sitting against the box edge.
    """
    g = f0.grid
    ds = config.dt
    s_end = config.t_end
    if ds > 0:
        n_steps = int(round(s_end / ds))
        if abs(n_steps * ds - s_end) > 1e-9 * max(s_end, 1.0):
            raise ValueError("t_end must be an integer multiple of dt")
    else:
        if s_end > 0:
            raise ValueError("ds = 0 only valid with s_end = 0")
        n_steps = 0

    lowfreq_k = config.lowfreq_k if config.lowfreq_k is not None else g.dim / 2.0 + 2.0
    mass0 = f0.mass()
    stats = {"clip_events": 0, "clipped_mass": 0.0}
    metadata = {
        "version": __version__,
        "threads": 1,
        "scheme": config.scheme,
        "dt": ds,
        "t_end": s_end,
        "dim": g.dim,
        "n": g.n,
        "half_width": g.half_width,
        "dealias": config.dealias,
        "lowfreq_k": lowfreq_k,
        "clip_policy": config.negative_clip_policy,
        "frame": "rescaled",
        "flog_floor_rel": FLOG_REL_FLOOR,
        "flog_floor_hard": FLOG_HARD_FLOOR,
    }
    ts = TimeSeries(columns=RESCALED_COLUMNS, metadata=metadata)
    ts.add_row(measure_rescaled_state(f0, 0.0, mass0, lowfreq_k, pot))

    nonlinear = make_rescaled_rhs(g, pot, config.dealias)
    stepper = EtdStepper(g, ds, config.scheme, nonlinear)
    v_hat = forward_values(g, f0.values)

    for istep in range(n_steps):
        s = istep * ds
        phys = inverse_values(g, v_hat) if istep else f0.values
        phys, clipped = _apply_negativity_policy(phys, config, stats)
        if clipped:
            v_hat = forward_values(g, phys)
        v_hat = stepper.step_hat(v_hat, s, phys=phys)
        s_next = (istep + 1) * ds
        if (istep + 1) % config.diagnostics_every == 0 or istep + 1 == n_steps:
            state_vals = inverse_values(g, v_hat)
            if not np.isfinite(state_vals).all():
                raise BlowupError(
                    f"rescaled solution lost finiteness at s = {s_next:.6g}"
                )
            state = Field(g, state_vals)
            frac = boundary_mass_fraction(state)
            if frac > BOUNDARY_MASS_TOL:
                raise BlowupError(
                    f"boundary mass fraction {frac:.2e} exceeds "
                    f"{BOUNDARY_MASS_TOL:g} at s = {s_next:.6g}; the confinement "
                    "term is invalid with mass at the box edge"
                )
            ts.add_row(measure_rescaled_state(state, s_next, mass0, lowfreq_k, pot))

    final_vals = inverse_values(g, v_hat) if n_steps else f0.values.copy()
    metadata["clip_events"] = stats["clip_events"]
    metadata["clipped_mass"] = stats["clipped_mass"]
    return RescaledResult(
        time_series=ts,
        final=RescaledState(Field(g, final_vals), s_end),
        clip_events=stats["clip_events"],
        clipped_mass=stats["clipped_mass"],
        metadata=metadata,
    )
