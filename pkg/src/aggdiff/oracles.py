"""Closed-form and brute-force references used to validate the spectral
machinery before it is trusted.

Everything here is either an exact Gaussian computation or an O(n^2)
direct sum; none of it calls the FFT paths it is meant to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Field, Grid

DIRECT_CONV_MAX_POINTS = 4096


@dataclass(frozen=True)
class GaussianState:
    """Isotropic Gaussian bump: mass * N(mean, variance * I)."""

    mass: float
    mean: tuple
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def density(self, points) -> np.ndarray:
        """Evaluate the density at points given as a list of coordinate arrays."""
        if len(points) != self.dim:
            raise ValueError("coordinate count does not match dimension")
        q = sum((x - m) ** 2 for x, m in zip(points, self.mean))
        norm = self.mass / (2.0 * np.pi * self.variance) ** (self.dim / 2.0)
        return norm * np.exp(-q / (2.0 * self.variance))

    def sample(self, grid: Grid) -> Field:
        if grid.dim != self.dim:
            raise ValueError(f"grid dim {grid.dim} != state dim {self.dim}")
        return Field(grid, self.density(grid.coords))

    def lp_norm(self, p: float) -> float:
        """Exact L^p norm of the density; p may be inf."""
        d, s2 = self.dim, self.variance
        if np.isinf(p):
            return self.mass / (2.0 * np.pi * s2) ** (d / 2.0)
        if p < 1:
            raise ValueError("p must be >= 1")
        # ||rho||_p = M (2 pi s2)^{-d/2 (1-1/p)} p^{-d/(2p)}
        return (
            self.mass
            * (2.0 * np.pi * s2) ** (-d / 2.0 * (1.0 - 1.0 / p))
            * p ** (-d / (2.0 * p))
        )

    def grad_l2_norm(self) -> float:
        """Exact ||grad rho||_2."""
        d, s2 = self.dim, self.variance
        # ||grad rho||_2^2 = M^2 * d / (2 s2) * (4 pi s2)^{-d/2}
        return float(
            self.mass * np.sqrt(d / (2.0 * s2) * (4.0 * np.pi * s2) ** (-d / 2.0))
        )

    def second_moment(self) -> float:
        """integral |x|^2 rho dx."""
        return self.mass * (
            self.dim * self.variance + sum(m ** 2 for m in self.mean)
        )


def heat_kernel_state(mass: float, dim: int, t: float) -> GaussianState:
    """The fundamental heat solution M G(t, .) as a GaussianState (variance 2t)."""
    if t <= 0:
        raise ValueError("heat kernel state requires t > 0")
    return GaussianState(mass, (0.0,) * dim, 2.0 * t)


def exact_heat(state: GaussianState, t: float) -> GaussianState:
    """Evolve a Gaussian by the heat flow: variance grows by 2t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return GaussianState(state.mass, state.mean, state.variance + 2.0 * t)


def exact_ou(state: GaussianState, s: float) -> GaussianState:
    """Evolve a Gaussian by the confined linear flow in rescaled time:
    mean -> mean e^{-s}, variance -> 1 + (variance - 1) e^{-2s}."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    decay = np.exp(-s)
    mean = tuple(m * decay for m in state.mean)
    var = 1.0 + (state.variance - 1.0) * decay ** 2
    return GaussianState(state.mass, mean, var)


def gaussian_entropy(state: GaussianState, dim: int | None = None):
    """Closed-form relative entropy and dissipation of an isotropic Gaussian
    against the unit Maxwellian (mass must be 1).

    Returns (h_rel, dissipation) with
      h_rel = d/2 (s2 - 1 - log s2) + |mean|^2 / 2
      D     = d (s2 - 1)^2 / s2 + |mean|^2
    """
    if dim is not None and dim != state.dim:
        raise ValueError("dim does not match state")
    if abs(state.mass - 1.0) > 1e-12:
        raise ValueError("relative entropy closed form assumes unit mass")
    d = state.dim
    s2 = state.variance
    msq = sum(m ** 2 for m in state.mean)
    h_rel = 0.5 * d * (s2 - 1.0 - np.log(s2)) + 0.5 * msq
    dissipation = d * (s2 - 1.0) ** 2 / s2 + msq
    return float(h_rel), float(dissipation)


def direct_convolution(u: Field, v: Field) -> Field:
    """O(n^2) periodic Riemann convolution sum times h^N.

    The reference implementation for the FFT convolution; guarded to small
    grids because of its cost.
    """
    g = u.grid
    if not g.compatible(v.grid):
        raise ValueError("grid mismatch")
    if g.size > DIRECT_CONV_MAX_POINTS:
        raise ValueError(
            f"direct convolution limited to {DIRECT_CONV_MAX_POINTS} points, "
            f"got {g.size}"
        )
    n, dim = g.n, g.dim
    uv = u.values.reshape(-1)
    vv = v.values
    out = np.zeros(g.shape)
    # index arithmetic: v is sampled at x = -L + i h, so the sample of
    # v(x_j - x_m) lives at index (j - m + n/2) mod n on each axis
    idx = [np.arange(n)] * dim
    mesh = np.meshgrid(*idx, indexing="ij")
    for m_flat in range(g.size):
        m_multi = np.unravel_index(m_flat, g.shape)
        shifted = tuple(
            (mesh[d] - m_multi[d] + n // 2) % n for d in range(dim)
        )
        out += uv[m_flat] * vv[shifted]
    return Field(g, out * g.cell_volume)
