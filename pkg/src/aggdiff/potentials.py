"""Radial interaction potentials, their derivatives, and the norm catalog
the smallness conditions consume.

All families are radial, W(x) = k(|x|), which keeps the required symmetry
W(x) = W(-x) automatic and lets every norm reduce to an adaptive 1-D
quadrature in the radius.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, optimize

from .spectral import Field, Grid

# Unit sphere areas for N = 1, 2, 3 (index by dim).
_SPHERE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}

_QUAD_EPSREL = 1e-12
_QUAD_EPSABS = 1e-300


# ---------------------------------------------------------------------------
# potential families


@dataclass(frozen=True)
class ZeroPotential:
    """No interaction; every evaluation and norm vanishes."""

    def radial(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def radial_derivative(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def radial_second(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def far_field_constant(self) -> float:
        return 0.0

    def suggested_rmax(self) -> float:
        return 1.0


@dataclass(frozen=True)
class GaussianPotential:
    """W(x) = amplitude * exp(-|x|^2 / width^2); attractive when amplitude < 0."""

    amplitude: float
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * np.exp(-((r / self.width) ** 2))

    def radial_derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 * self.amplitude * r / self.width ** 2 * np.exp(
            -((r / self.width) ** 2)
        )

    def radial_second(self, r):
        r = np.asarray(r, dtype=float)
        w2 = self.width ** 2
        return (
            self.amplitude
            * (4.0 * r ** 2 / w2 ** 2 - 2.0 / w2)
            * np.exp(-(r ** 2) / w2)
        )

    def far_field_constant(self) -> float:
        return 0.0

    def suggested_rmax(self) -> float:
        return 12.0 * self.width

    def grad_linf_exact(self) -> float:
        """sup |k'| = sqrt(2) |A| e^{-1/2} / width, attained at r = width/sqrt(2)."""
        return math.sqrt(2.0) * abs(self.amplitude) * math.exp(-0.5) / self.width


@dataclass(frozen=True)
class MorsePotential:
    """W(x) = amplitude * (1 - exp(-|x|^alpha)), alpha >= 1.

    Non-decaying at infinity (W -> amplitude), so W itself is never L^1 or
    L^2; only its gradient and Laplacian enter the finite norms.
    """

    amplitude: float = 1.0
    exponent: float = 2.0

    def __post_init__(self):
        if self.exponent < 1:
            raise ValueError("exponent must be >= 1")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * (1.0 - np.exp(-(r ** self.exponent)))

    def radial_derivative(self, r):
        r = np.asarray(r, dtype=float)
        a = self.exponent
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.amplitude * a * r ** (a - 1.0) * np.exp(-(r ** a))
        # one-sided limit at r = 0: 0 for a > 1, amplitude for a = 1
        limit0 = self.amplitude if a == 1.0 else 0.0
        return np.where(r == 0.0, limit0, out)

    def radial_second(self, r):
        r = np.asarray(r, dtype=float)
        a = self.exponent
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (
                self.amplitude
                * a
                * np.exp(-(r ** a))
                * ((a - 1.0) * r ** (a - 2.0) - a * r ** (2.0 * a - 2.0))
            )
        return out

    def far_field_constant(self) -> float:
        return self.amplitude

    def suggested_rmax(self) -> float:
        # exp(-r^alpha) below 1e-40
        return max(4.0, (92.2) ** (1.0 / self.exponent) * 1.5)


@dataclass(frozen=True)
class TabulatedPotential:
    """Radial potential given by samples (r_i, k_i), monotone cubic
    interpolation in between, constant extrapolation past the table."""

    radii: np.ndarray
    values: np.ndarray
    _interp: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.size < 4:
            raise ValueError("table needs at least 4 radial samples")
        if not np.all(np.diff(r) > 0):
            raise ValueError("radii must be strictly increasing")
        if r[0] < 0:
            raise ValueError("radii must be nonnegative")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_interp", interpolate.PchipInterpolator(r, v))

    def _warn_extrapolation(self, r):
        if np.any(np.asarray(r) > self.radii[-1]):
            warnings.warn(
                "tabulated potential evaluated beyond its radial extent; "
                "using a constant tail",
                RuntimeWarning,
                stacklevel=3,
            )

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        self._warn_extrapolation(r)
        rc = np.clip(r, self.radii[0], self.radii[-1])
        return np.asarray(self._interp(rc))

    def radial_derivative(self, r):
        r = np.asarray(r, dtype=float)
        self._warn_extrapolation(r)
        inside = (r >= self.radii[0]) & (r <= self.radii[-1])
        rc = np.clip(r, self.radii[0], self.radii[-1])
        return np.where(inside, np.asarray(self._interp.derivative()(rc)), 0.0)

    def radial_second(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.radii[0]) & (r <= self.radii[-1])
        rc = np.clip(r, self.radii[0], self.radii[-1])
        return np.where(inside, np.asarray(self._interp.derivative(2)(rc)), 0.0)

    def far_field_constant(self) -> float:
        return float(self.values[-1])

    def suggested_rmax(self) -> float:
        return float(self.radii[-1])


def load_tabulated(path) -> TabulatedPotential:
    """Load a two-column "r value" text table with a single header line."""
    data = np.loadtxt(path, skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("expected two columns: radius and value")
    return TabulatedPotential(data[:, 0], data[:, 1])


# ---------------------------------------------------------------------------
# pointwise evaluation


def eval_potential(pot, point) -> float:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return float(pot.radial(np.linalg.norm(point)))


def eval_gradient(pot, point) -> np.ndarray:
    """grad W = k'(r) x / r with the r -> 0 limit taken as the zero vector."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    r = np.linalg.norm(point)
    if r == 0.0:
        return np.zeros_like(point)
    return float(pot.radial_derivative(r)) * point / r


def eval_laplacian(pot, point) -> float:
    """lap W = k''(r) + (dim - 1) k'(r) / r, with the radial limit at r = 0."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    dim = point.size
    r = np.linalg.norm(point)
    if r == 0.0:
        return _laplacian_at_origin(pot, dim)
    val = float(pot.radial_second(r))
    if dim > 1:
        val += (dim - 1) * float(pot.radial_derivative(r)) / r
    return val


def _laplacian_at_origin(pot, dim: int) -> float:
    if isinstance(pot, ZeroPotential):
        return 0.0
    if isinstance(pot, GaussianPotential):
        return -2.0 * dim * pot.amplitude / pot.width ** 2
    if isinstance(pot, MorsePotential):
        a = pot.exponent
        if a == 2.0:
            return 2.0 * dim * pot.amplitude
        if a == 1.0 and dim == 1:
            return -pot.amplitude
        # r^(alpha-2) leading term diverges for alpha < 2 in dim >= 2,
        # vanishes for alpha > 2
        if a > 2.0:
            return 0.0
        coef = pot.amplitude * a * (dim + a - 2.0)
        return math.inf if coef > 0 else (-math.inf if coef < 0 else 0.0)
    # fall back to a small-radius limit for tabulated data
    eps = 1e-6 * max(pot.suggested_rmax(), 1.0)
    return float(
        pot.radial_second(eps) + (dim - 1) * pot.radial_derivative(eps) / eps
    )


def radial_laplacian(pot, r, dim: int) -> np.ndarray:
    """Vectorized lap W over radii r > 0."""
    r = np.asarray(r, dtype=float)
    out = np.asarray(pot.radial_second(r), dtype=float).copy()
    if dim > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = out + (dim - 1) * np.asarray(pot.radial_derivative(r)) / r
    return out


# ---------------------------------------------------------------------------
# grid sampling

_BOUNDARY_SAMPLE_TOL = 1e-8


def sample_on_grid(pot, grid: Grid):
    """Sample W and its analytic gradient on the grid, centered at the origin.

    Returns (w_field, [grad_d fields]).  The gradient is always the sampled
    analytic gradient, never a spectral derivative of the sample.  Families
    with a nonzero far-field constant are shifted by that constant before
    sampling (the shift does not alter grad W * rho).
    """
    r = grid.radius
    shift = pot.far_field_constant()
    w_vals = np.asarray(pot.radial(r), dtype=float) - shift
    kprime = np.asarray(pot.radial_derivative(r), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, kprime / np.where(r > 0, r, 1.0), 0.0)
    grads = [Field(grid, scale * c) for c in grid.coords]

    peak = np.abs(w_vals).max()
    if peak > 0:
        edge = max(
            abs(float(pot.radial(grid.half_width)) - shift),
            abs(float(pot.radial(grid.half_width * math.sqrt(grid.dim))) - shift),
        )
        if edge > _BOUNDARY_SAMPLE_TOL * peak:
            warnings.warn(
                "potential magnitude at the box boundary exceeds "
                f"{_BOUNDARY_SAMPLE_TOL:g} of its max; periodization artifacts likely",
                RuntimeWarning,
                stacklevel=2,
            )
    return Field(grid, w_vals), grads


# ---------------------------------------------------------------------------
# norm catalog


@dataclass
class PotentialNorms:
    """Every potential norm the decay theory consumes, with finiteness flags.

    Divergent entries hold math.inf and are flagged; consumers must check
    the flag rather than trusting the number.
    """

    dim: int
    w_l1: float
    w_l2: float
    grad_l1: float
    grad_linf: float
    grad_lq: dict
    lap_plus_lhalf_n: float
    radial_bound: float
    finite: dict

    def is_finite(self, name: str) -> bool:
        return bool(self.finite.get(name, False))


def _radial_quad(func, rmax, points=None):
    pts = [p for p in (points or []) if 0.0 < p < rmax]
    val, _ = integrate.quad(
        func,
        0.0,
        rmax,
        points=pts or None,
        limit=400,
        epsrel=_QUAD_EPSREL,
        epsabs=_QUAD_EPSABS,
    )
    return val


def radial_lp_norm(sample_func, p: float, dim: int, rmax: float, points=None) -> float:
    """||g||_p over R^dim for radial g, by 1-D quadrature in the radius."""
    if np.isinf(p):
        return radial_sup(sample_func, rmax)
    area = _SPHERE_AREA[dim]
    val = _radial_quad(
        lambda r: np.abs(sample_func(r)) ** p * r ** (dim - 1), rmax, points
    )
    return float((area * val) ** (1.0 / p))


def radial_sup(sample_func, rmax: float, refine: bool = True) -> float:
    """sup over r >= 0 of |g(r)| via dense scan plus local refinement."""
    rs = np.linspace(0.0, rmax, 8193)
    vals = np.abs(np.asarray(sample_func(rs), dtype=float))
    i = int(np.argmax(vals))
    best = float(vals[i])
    if refine and 0 < i < rs.size - 1:
        res = optimize.minimize_scalar(
            lambda r: -abs(float(sample_func(r))),
            bounds=(rs[i - 1], rs[i + 1]),
            method="bounded",
            options={"xatol": 1e-14},
        )
        best = max(best, float(-res.fun))
    return best


def _sign_change_points(func, rmax, samples=4096):
    rs = np.linspace(1e-12, rmax, samples)
    vals = np.asarray(func(rs), dtype=float)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    idx = np.where(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    out = []
    for i in idx:
        lo, hi = rs[i], rs[i + 1]
        try:
            out.append(float(optimize.brentq(func, lo, hi)))
        except ValueError:
            out.append(0.5 * (lo + hi))
    return out


def potential_norms(pot, dim: int, q_list=()) -> PotentialNorms:
    """Compute the full norm catalog of a radial potential in dimension dim.

    Norms that diverge (a Morse-type W is never integrable) are flagged
    infinite instead of being mis-reported as numbers.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    if isinstance(pot, ZeroPotential):
        finite = {k: True for k in (
            "w_l1", "w_l2", "grad_l1", "grad_linf", "lap_plus_lhalf_n", "radial_bound",
        )}
        return PotentialNorms(
            dim, 0.0, 0.0, 0.0, 0.0, {q: 0.0 for q in q_list}, 0.0, 0.0, finite
        )

    rmax = pot.suggested_rmax()
    if isinstance(pot, TabulatedPotential):
        dk = np.abs(np.asarray(pot.radial_derivative(pot.radii)))
        if dk.size and dk[-1] > 1e-6 * max(dk.max(), 1e-300):
            raise ValueError(
                "tabulated potential still varies at its largest radius; "
                "a wider table is required for norm quadrature"
            )

    w_decays = pot.far_field_constant() == 0.0 and _tail_is_small(pot, rmax)
    finite = {}

    if w_decays:
        w_l1 = radial_lp_norm(pot.radial, 1.0, dim, rmax)
        w_l2 = radial_lp_norm(pot.radial, 2.0, dim, rmax)
        finite["w_l1"] = finite["w_l2"] = True
    else:
        w_l1 = w_l2 = math.inf
        finite["w_l1"] = finite["w_l2"] = False

    grad_l1 = radial_lp_norm(pot.radial_derivative, 1.0, dim, rmax)
    grad_linf = radial_sup(pot.radial_derivative, rmax)
    finite["grad_l1"] = math.isfinite(grad_l1)
    finite["grad_linf"] = True

    grad_lq = {}
    for q in q_list:
        if np.isinf(q):
            grad_lq[q] = grad_linf
        else:
            grad_lq[q] = radial_lp_norm(pot.radial_derivative, float(q), dim, rmax)

    lap = lambda r: radial_laplacian(pot, r, dim)
    lap_plus = lambda r: np.maximum(lap(r), 0.0)
    pts = _sign_change_points(lap, rmax)
    p_half = dim / 2.0
    lap_plus_norm = float(
        (
            _SPHERE_AREA[dim]
            * _radial_quad(
                lambda r: lap_plus(r) ** p_half * r ** (dim - 1), rmax, pts
            )
        )
        ** (1.0 / p_half)
    )
    finite["lap_plus_lhalf_n"] = math.isfinite(lap_plus_norm)

    radial_bound = radial_sup(
        lambda r: np.asarray(r) * np.asarray(pot.radial_derivative(r)), rmax
    )
    finite["radial_bound"] = math.isfinite(radial_bound)

    return PotentialNorms(
        dim, w_l1, w_l2, grad_l1, grad_linf, grad_lq,
        lap_plus_norm, radial_bound, finite,
    )


def _tail_is_small(pot, rmax) -> bool:
    tail = abs(float(pot.radial(rmax)))
    peak = radial_sup(pot.radial, rmax, refine=False)
    return peak == 0.0 or tail <= 1e-12 * peak


def morse_lap_plus_alt(dim: int) -> float:
    """Alternative closed-form candidate for ||[lap W]_+||_{N/2} of the
    quadratic Morse-type potential (amplitude 1, exponent 2):

        value^{N/2} = integral over |x| <= N of (|x|^2 - N)^{N/2} e^{-N|x|^2/2} dx.

    This published variant disagrees with the direct positive-part
    quadrature (whose support is |x| <= sqrt(N/2)); both are reported so
    the discrepancy stays visible.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    p = dim / 2.0
    area = _SPHERE_AREA[dim]
    integrand = lambda r: (r ** 2 - dim) ** p * math.exp(
        -dim * r ** 2 / 2.0
    ) * r ** (dim - 1)
    # the displayed integrand is real only where |x|^2 >= N
    lo = math.sqrt(dim)
    val, _ = integrate.quad(integrand, lo, float(dim), epsrel=1e-12)
    return float((area * val) ** (1.0 / p))
