"""Periodic spectral substrate: grids, transforms, derivatives, convolution.

The computational domain is the periodic box [-L, L)^N standing in for all
of R^N, so every field handed to these routines is expected to decay well
inside the box.  Transforms use the symmetric normalization (the forward
transform carries h^N / (2 pi)^{N/2}, the inverse its reciprocal), which
makes the discrete Plancherel identity literal and makes the forward
transform of a well-resolved field agree with its continuous Fourier
transform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Relative size below which leftover imaginary parts of inverse transforms
# are considered numerical noise and discarded.
IMAG_RESIDUE_TOL = 1e-12

# Advisory boundary-decay threshold for convolution operands.
CONV_DECAY_TOL = 1e-12

# Fraction of |u| mass allowed in the outermost cell layer before the
# boundary monitor flags a run as box-contaminated.
BOUNDARY_MASS_TOL = 1e-10


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(eq=False)
class Grid:
    """Uniform periodic grid on [-half_width, half_width)^dim.

    Immutable by convention: construct once (via make_grid) and share.
    All derived arrays are cached on first use.
    """

    dim: int
    n: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not _is_power_of_two(self.n) or self.n < 16:
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    # -- scalars ---------------------------------------------------------

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def mode_spacing(self) -> float:
        """Spacing of the wavenumber lattice, pi / half_width."""
        return np.pi / self.half_width

    # -- cached axis arrays ----------------------------------------------

    @cached_property
    def axis_coords(self) -> np.ndarray:
        """Physical coordinates along one axis, x_j = -L + j h."""
        return -self.half_width + self.spacing * np.arange(self.n)

    @cached_property
    def freq_ints(self) -> np.ndarray:
        """Integer FFT frequencies along one axis (0, 1, ..., -1)."""
        return np.rint(np.fft.fftfreq(self.n) * self.n).astype(int)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers xi_k = (pi / L) k in FFT ordering."""
        return (np.pi / self.half_width) * self.freq_ints

    # -- cached full meshes ----------------------------------------------

    @cached_property
    def coords(self) -> list:
        """Coordinate fields x_d, each of shape grid.shape."""
        axes = [self.axis_coords] * self.dim
        return list(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c ** 2 for c in self.coords))

    @cached_property
    def wavenumber_grids(self) -> list:
        axes = [self.wavenumbers] * self.dim
        return list(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k ** 2 for k in self.wavenumber_grids)

    @cached_property
    def phase(self) -> np.ndarray:
        """Sign field (-1)^(k_1+...+k_N) translating FFT output to the
        origin-centered transform convention."""
        sign1d = np.where(self.freq_ints % 2 == 0, 1.0, -1.0)
        out = sign1d
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, sign1d)
        return out

    @cached_property
    def dealias_keep(self) -> np.ndarray:
        """Boolean mask of modes kept by the 2/3-rule truncation."""
        cut = self.n // 3
        keep1d = np.abs(self.freq_ints) <= cut
        out = keep1d
        for _ in range(self.dim - 1):
            out = np.logical_and.outer(out, keep1d)
        return out

    @cached_property
    def _nyquist_axis_masks(self) -> list:
        """Per axis d, boolean mesh selecting the Nyquist plane k_d = -n/2."""
        masks = []
        ny = self.freq_ints == -self.n // 2
        for d in range(self.dim):
            shape = [1] * self.dim
            shape[d] = self.n
            masks.append(np.broadcast_to(ny.reshape(shape), self.shape))
        return masks

    # -- misc --------------------------------------------------------------

    def compatible(self, other: "Grid") -> bool:
        return (
            self.dim == other.dim
            and self.n == other.n
            and self.half_width == other.half_width
        )

    def __repr__(self):
        return f"Grid(dim={self.dim}, n={self.n}, half_width={self.half_width})"


def make_grid(dim: int, n: int, half_width: float) -> Grid:
    """Construct a periodic grid; rejects non-power-of-two n and dim > 3."""
    return Grid(dim, int(n), float(half_width))


@dataclass(eq=False)
class Field:
    """Real scalar field sampled on a Grid (densities, potentials, fluxes)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def mass(self) -> float:
        """Trapezoid-free Riemann mass, h^N * sum(values)."""
        return float(self.grid.cell_volume * self.values.sum())


@dataclass(eq=False)
class Spectrum:
    """Complex Fourier coefficients of a Field, FFT mode ordering."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "Spectrum":
        return Spectrum(self.grid, self.coeffs.copy())


def _require_same_grid(a, b):
    if not a.grid.compatible(b.grid):
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


# ---------------------------------------------------------------------------
# transforms


def forward(u: Field) -> Spectrum:
    """Forward transform approximating the continuous Fourier transform
    (2 pi)^{-N/2} integral of e^{-i x.xi} u(x) dx on the box."""
    g = u.grid
    scale = g.cell_volume / (2.0 * np.pi) ** (g.dim / 2.0)
    coeffs = scale * g.phase * np.fft.fftn(u.values)
    return Spectrum(g, coeffs)


def inverse(spec: Spectrum) -> Field:
    """Inverse transform; checks and discards the imaginary residue."""
    g = spec.grid
    scale = (2.0 * np.pi) ** (g.dim / 2.0) / g.cell_volume
    vals = scale * np.fft.ifftn(g.phase * spec.coeffs)
    resid = np.abs(vals.imag).max()
    mag = np.abs(vals.real).max()
    if resid > IMAG_RESIDUE_TOL * max(1.0, mag):
        raise ValueError(
            f"imaginary residue {resid:.3e} exceeds tolerance for field of size {mag:.3e}"
        )
    return Field(g, vals.real.copy())


def spectrum_l2(spec: Spectrum) -> float:
    """L2 norm of a spectrum with the mode-lattice quadrature weight."""
    g = spec.grid
    return float(
        np.sqrt(g.mode_spacing ** g.dim * np.vdot(spec.coeffs, spec.coeffs).real)
    )


def forward_values(g: Grid, values: np.ndarray) -> np.ndarray:
    """Raw-array forward transform (solver hot path; no wrapping/validation)."""
    scale = g.cell_volume / (2.0 * np.pi) ** (g.dim / 2.0)
    return scale * g.phase * np.fft.fftn(values)


def inverse_values(g: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Raw-array inverse transform returning the real part unchecked."""
    scale = (2.0 * np.pi) ** (g.dim / 2.0) / g.cell_volume
    return (scale * np.fft.ifftn(g.phase * coeffs)).real


def derivative_multiplier(g: Grid, axis: int) -> np.ndarray:
    """First-derivative multiplier i xi_d with the axis Nyquist plane zeroed."""
    mult = 1j * g.wavenumber_grids[axis]
    return np.where(g._nyquist_axis_masks[axis], 0.0, mult)


# ---------------------------------------------------------------------------
# multiplier operators


def spectral_derivative(spec: Spectrum, gamma) -> Spectrum:
    """Partial derivative of multi-index gamma as a Fourier multiplier.

    The Nyquist plane of axis d is zeroed whenever gamma_d is odd; that
    mode carries no representable odd-derivative information.
    """
    g = spec.grid
    gamma = tuple(int(c) for c in np.atleast_1d(gamma))
    if len(gamma) != g.dim:
        raise ValueError(f"gamma length {len(gamma)} does not match dim {g.dim}")
    if any(c < 0 for c in gamma):
        raise ValueError("derivative orders must be nonnegative")
    if sum(gamma) > 8:
        raise ValueError("total derivative order capped at 8")
    if sum(gamma) == 0:
        return spec.copy()
    coeffs = spec.coeffs.copy()
    for d, order in enumerate(gamma):
        if order == 0:
            continue
        coeffs *= (1j * g.wavenumber_grids[d]) ** order
        if order % 2 == 1:
            coeffs[g._nyquist_axis_masks[d]] = 0.0
    return Spectrum(g, coeffs)


def riesz_power(spec: Spectrum, m: float) -> Spectrum:
    """Multiply coefficients by |xi|^m (homogeneous derivative of order m)."""
    if m < 0:
        raise ValueError(f"riesz power requires m >= 0, got {m}")
    if m == 0:
        return spec.copy()
    g = spec.grid
    if m == 2.0:
        mult = g.k_squared
    else:
        mult = g.k_squared ** (m / 2.0)
    return Spectrum(g, spec.coeffs * mult)


def dealias(spec: Spectrum) -> Spectrum:
    """Zero the top third of modes (2/3-rule truncation)."""
    return Spectrum(spec.grid, np.where(spec.grid.dealias_keep, spec.coeffs, 0.0))


def gradient(u: Field) -> list:
    """Spectral gradient, one Field per axis."""
    spec = forward(u)
    return [
        inverse(spectral_derivative(spec, _unit_index(u.grid.dim, d)))
        for d in range(u.grid.dim)
    ]


def _unit_index(dim: int, d: int) -> tuple:
    gamma = [0] * dim
    gamma[d] = 1
    return tuple(gamma)


# ---------------------------------------------------------------------------
# convolution


# forward(u * v) = CONV_NORM(dim) * forward(u) * forward(v)
def conv_norm(dim: int) -> float:
    return (2.0 * np.pi) ** (dim / 2.0)


def _boundary_band_max(u: Field) -> float:
    """Largest |u| in the outer half of the box (any axis beyond L/2)."""
    g = u.grid
    outer = np.zeros(g.shape, dtype=bool)
    for c in g.coords:
        outer |= np.abs(c) >= g.half_width / 2.0
    return float(np.abs(u.values[outer]).max()) if outer.any() else 0.0


def convolve(u: Field, v: Field, check_decay: bool = True) -> Field:
    """Periodic convolution scaled by h^N, approximating the full-space
    convolution integral for fields that decay inside the box.

    The decay precondition is advisory: operands whose outer-half values
    exceed CONV_DECAY_TOL relative to their max trigger a warning, not an
    error.
    """
    _require_same_grid(u, v)
    if check_decay:
        for name, f in (("left", u), ("right", v)):
            peak = np.abs(f.values).max()
            if peak > 0 and _boundary_band_max(f) > CONV_DECAY_TOL * peak:
                warnings.warn(
                    f"convolve: {name} operand does not decay below "
                    f"{CONV_DECAY_TOL:g} of its max in the outer half of the box",
                    RuntimeWarning,
                    stacklevel=2,
                )
    uh = forward(u)
    vh = forward(v)
    prod = Spectrum(u.grid, conv_norm(u.grid.dim) * uh.coeffs * vh.coeffs)
    return inverse(prod)


def boundary_mass_fraction(u: Field) -> float:
    """Fraction of the |u| mass carried by the outermost cell layer.

    R^N is only faithfully represented while this stays below
    BOUNDARY_MASS_TOL; callers use it as the box-validity monitor.
    """
    g = u.grid
    absu = np.abs(u.values)
    total = absu.sum()
    if total == 0.0:
        return 0.0
    edge = np.zeros(g.shape, dtype=bool)
    for d in range(g.dim):
        sl = [slice(None)] * g.dim
        sl[d] = 0
        edge[tuple(sl)] = True
        sl[d] = g.n - 1
        edge[tuple(sl)] = True
    return float(absu[edge].sum() / total)


# ---------------------------------------------------------------------------
# trigonometric resampling (used by the self-similar change of variables)


def _axis_eval_matrix(grid: Grid, targets: np.ndarray) -> np.ndarray:
    """Evaluation matrix of the 1-D trigonometric interpolant at arbitrary
    points; the Nyquist mode is split symmetrically so real inputs stay real."""
    n = grid.n
    L = grid.half_width
    f = grid.freq_ints.astype(float).copy()
    weights = np.ones(n)
    # split the unpaired -n/2 mode into +-n/2 halves (cosine evaluation)
    ny = np.where(grid.freq_ints == -n // 2)[0]
    phase_arg = np.pi / L * np.outer(targets + L, f)  # (m, n)
    mat = np.exp(1j * phase_arg)
    if ny.size:
        j = ny[0]
        mat[:, j] = np.cos(np.pi / L * (targets + L) * (n / 2.0))
    return mat * (weights / n)


def resample_scaled(u: Field, scale: float) -> Field:
    """Evaluate the trigonometric interpolant of u at scale * x on the same
    grid, i.e. return samples of x -> u(scale x) (periodically wrapped).

    Exact for band-limited fields; intended for fields that decay inside
    the box so the periodic wrap is immaterial.
    """
    g = u.grid
    if scale <= 0:
        raise ValueError("scale must be positive")
    targets = scale * g.axis_coords
    mat = _axis_eval_matrix(g, targets)
    vals = np.fft.fftn(u.values.astype(complex))
    for d in range(g.dim):
        vals = np.tensordot(mat, vals, axes=([1], [d]))
        vals = np.moveaxis(vals, 0, d)
    resid = np.abs(vals.imag).max()
    mag = max(np.abs(vals.real).max(), 1.0)
    if resid > 1e-10 * mag:
        raise ValueError(f"resample produced imaginary residue {resid:.3e}")
    return Field(g, vals.real.copy())
