"""Pseudo-spectral solver and decay-rate verification toolkit for
diffusion-dominated aggregation equations on periodic boxes.

The library simulates densities evolving by nonlocal self-transport plus
linear diffusion, evaluates the smallness conditions under which diffusion
wins, and fits the resulting decay rates (Sobolev norms, heat-kernel
distance, entropy in self-similar variables) against their theoretical
exponents.
"""

__version__ = "0.1.0"

from .spectral import Grid, Field, Spectrum, make_grid, forward, inverse
from .potentials import (
    ZeroPotential,
    GaussianPotential,
    MorsePotential,
    TabulatedPotential,
    PotentialNorms,
    potential_norms,
    sample_on_grid,
)
from .oracles import GaussianState
from .solver import SolverConfig, PicardConfig, simulate, gaussian_initial
from .selfsim import RescaledState, to_selfsimilar, from_selfsimilar
from .diagnostics import TimeSeries, DecayReport, fit_power_law, fit_exponential
from .bounds import check_smallness, mittag_leffler_phi, ConditionReport
