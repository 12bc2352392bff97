"""Constants-and-conditions pipeline: series bounds, growth envelopes,
the uniform sup bound, and the four-way smallness gate.

Generic constants that the theory leaves unspecified are explicit policy
inputs (default 1) and are echoed into every report; nothing here invents
a numerical ground truth for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .potentials import PotentialNorms

# ---------------------------------------------------------------------------
# gamma function (Lanczos, g = 7, 9 coefficients)

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def lanczos_gamma(x: float) -> float:
    """Gamma(x) for x > 0 via the Lanczos approximation.

    Relative error below 1e-13 on (0, 50]; overflows to inf past ~171.6
    like the true function.
    """
    if x <= 0:
        raise ValueError("lanczos_gamma requires x > 0")
    return math.exp(lanczos_lgamma(x))


def lanczos_lgamma(x: float) -> float:
    """log Gamma(x) for x > 0 (same Lanczos kernel, overflow-safe)."""
    if x <= 0:
        raise ValueError("lanczos_lgamma requires x > 0")
    z = x - 1.0
    acc = _LANCZOS_COEF[0]
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return (
        0.5 * math.log(2.0 * math.pi)
        + (z + 0.5) * math.log(t)
        - t
        + math.log(acc)
    )


# ---------------------------------------------------------------------------
# Mittag-Leffler style series

_PHI_TERM_CAP = 10_000


def mittag_leffler_phi(z: float, delta: float, tol: float = 1e-15) -> float:
    """Sum of z^n / Gamma(n (1 - delta) + 1), the growth factor produced by
    weakly singular Gronwall kernels.

    The series is summed until the current term drops below tol times the
    partial sum, with a hard cap of 10^4 terms.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z == 0.0:
        return 1.0
    beta = 1.0 - delta
    total = 1.0  # n = 0 term
    log_abs_z = math.log(abs(z))
    sign_z = 1.0 if z >= 0 else -1.0
    prev_mag = math.inf
    for n in range(1, _PHI_TERM_CAP + 1):
        log_term = n * log_abs_z - lanczos_lgamma(beta * n + 1.0)
        mag = math.exp(log_term)
        total += (sign_z ** n) * mag
        # terms grow before the series peak; only a shrinking term counts
        # as convergence evidence
        if mag < tol * max(abs(total), 1e-300) and mag < prev_mag:
            return total
        prev_mag = mag
    err = RuntimeError(
        f"series did not converge within {_PHI_TERM_CAP} terms (z={z}, delta={delta})"
    )
    err.partial_value = total
    raise err


# ---------------------------------------------------------------------------
# growth envelopes


class GrowthEnvelope(NamedTuple):
    exponential: float
    mittag_leffler: float


def lp_growth_envelope(
    t: float,
    initial_lp: float,
    mass: float,
    grad_linf: float,
    c_env: float = 1.0,
) -> GrowthEnvelope:
    """Theoretical L^p growth cap at time t.

    The primary envelope is initial_lp * exp(c_env * ||grad W||_inf * mass * sqrt(t));
    the sharper series envelope initial_lp * Phi(B Gamma(1/2) sqrt(t)) with
    B = c_env * ||grad W||_inf * mass is returned alongside for comparison.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    b = c_env * grad_linf * mass
    expo = initial_lp * math.exp(b * math.sqrt(t))
    ml = initial_lp * mittag_leffler_phi(
        b * lanczos_gamma(0.5) * math.sqrt(t), 0.5
    )
    return GrowthEnvelope(expo, ml)


@dataclass
class BoundEnvelope:
    """Time-indexed theoretical envelopes for one run.

    The squared L2 norm decays with exponent -dim/2; the norm itself with
    -dim/4.  Both exponents are carried so reports can show the pair.
    """

    dim: int
    mass: float
    grad_linf: float
    initial_lp: float
    kappa: float = 1.0
    c_env: float = 1.0

    @property
    def l2_exponent(self) -> float:
        return -self.dim / 4.0

    @property
    def l2_squared_exponent(self) -> float:
        return -self.dim / 2.0

    def hm_exponent(self, m: float) -> float:
        return -(self.dim / 4.0 + m / 2.0)

    @property
    def linf_exponent(self) -> float:
        return -self.dim / 2.0

    def l2_decay(self, t: float) -> float:
        return self.kappa * (t + 1.0) ** self.l2_exponent

    def hm_decay(self, t: float, m: float) -> float:
        return self.kappa * (t + 1.0) ** self.hm_exponent(m)

    def lp_growth(self, t: float) -> float:
        return lp_growth_envelope(
            t, self.initial_lp, self.mass, self.grad_linf, self.c_env
        ).exponential


# ---------------------------------------------------------------------------
# uniform sup bound


@dataclass
class SupBound:
    value: float
    provenance: str
    formula_value: float | None = None
    measured_value: float | None = None


def linfty_bound(
    norms: PotentialNorms,
    mass: float,
    q: float,
    dim: int,
    c_policy: float = 1.0,
    c_tilde0: float = 0.0,
    measured_sup: float | None = None,
) -> SupBound:
    """Uniform-in-time sup bound for the density.

    Formula path: (2C)^{1 + N/(2 mu)} ||grad W||_q^{N/(2 mu)} M^{1 + N/(2 mu)}
    + c_tilde0, with 2 mu = 1 - N/q and C = c_policy.  Requires q > dim.
    When a measured trajectory sup is supplied it is reported as the
    empirical value and preferred for downstream margins.
    """
    if q <= dim:
        raise ValueError(
            f"the sup bound needs q > dim (integrability of the kernel gradient); "
            f"got q={q}, dim={dim}"
        )
    if math.isinf(q):
        grad_q = norms.grad_linf
        two_mu = 1.0
    else:
        if q not in norms.grad_lq:
            raise ValueError(f"||grad W||_q for q={q} not present in norms")
        grad_q = norms.grad_lq[q]
        two_mu = 1.0 - dim / q
    expo = dim / two_mu
    formula = (2.0 * c_policy) ** (1.0 + expo) * grad_q ** expo * mass ** (
        1.0 + expo
    ) + c_tilde0
    if measured_sup is not None:
        return SupBound(float(measured_sup), "measured", formula, float(measured_sup))
    return SupBound(float(formula), "formula", formula, None)


# ---------------------------------------------------------------------------
# smallness conditions


@dataclass
class ConditionEntry:
    status: str  # "holds" | "fails" | "unknown"
    margin: float | None
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.status == "holds"


@dataclass
class ConditionReport:
    """Pass/fail plus numeric margins for the four smallness conditions.

    Each condition holds iff its margin is below 1; a condition whose
    inputs are unavailable (divergent norm, missing constant) reports
    "unknown" rather than a fabricated number.
    """

    dim: int
    mass: float
    conditions: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def any_holds(self) -> bool:
        return any(e.holds for e in self.conditions.values())

    def to_text(self) -> str:
        lines = [
            "smallness condition report",
            f"  dim  = {self.dim}",
            f"  mass = {self.mass:.12g}",
        ]
        for key in ("i", "ii", "iii", "iv"):
            e = self.conditions[key]
            margin = "n/a" if e.margin is None else f"{e.margin:.12g}"
            lines.append(f"  condition {key:>3}: {e.status:<8} margin = {margin}")
            if e.detail:
                lines.append(f"                 {e.detail}")
        for k, v in self.constants.items():
            lines.append(f"  constant {k} = {v}")
        for k, v in self.provenance.items():
            lines.append(f"  provenance {k} = {v}")
        lines.append(f"  verdict: {'holds' if self.any_holds else 'does not hold'}")
        return "\n".join(lines) + "\n"

    def to_keyvalues(self) -> str:
        rows = [f"dim={self.dim}", f"mass={self.mass!r}"]
        for key in ("i", "ii", "iii", "iv"):
            e = self.conditions[key]
            rows.append(f"cond_{key}.status={e.status}")
            rows.append(
                f"cond_{key}.margin={'nan' if e.margin is None else repr(e.margin)}"
            )
        for k, v in self.constants.items():
            rows.append(f"constant.{k}={v!r}")
        for k, v in self.provenance.items():
            rows.append(f"provenance.{k}={v}")
        rows.append(f"verdict={'holds' if self.any_holds else 'none'}")
        return "\n".join(rows) + "\n"


def check_smallness(
    norms: PotentialNorms,
    mass: float,
    c_infinity: float | None = None,
    c_two: float | None = None,
    c_cond4: float = 1.0,
    c_infinity_provenance: str = "supplied",
) -> ConditionReport:
    """Evaluate the four smallness margins for a potential/data pair.

    Margins:
      i   ||grad W||_inf * M^{(N+4)/(N+2)}
      ii  ||W||_1 * C_inf
      iii ||W||_2 * C_2           (C_2 defaults to sqrt(M * C_inf))
      iv  4 * c_cond4 * M * ||[lap W]_+||_{N/2}

    Every margin is 1-homogeneous in the potential for fixed constants.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    dim = norms.dim
    report = ConditionReport(dim=dim, mass=mass)
    report.constants["c_cond4"] = c_cond4

    margin_i = norms.grad_linf * mass ** ((dim + 4.0) / (dim + 2.0))
    report.conditions["i"] = ConditionEntry(
        "holds" if margin_i < 1.0 else "fails", margin_i
    )

    if not norms.is_finite("w_l1"):
        report.conditions["ii"] = ConditionEntry(
            "unknown", None, "||W||_1 is not finite"
        )
    elif c_infinity is None:
        report.conditions["ii"] = ConditionEntry(
            "unknown", None, "no uniform sup constant supplied"
        )
    else:
        margin_ii = norms.w_l1 * c_infinity
        report.conditions["ii"] = ConditionEntry(
            "holds" if margin_ii < 1.0 else "fails", margin_ii
        )
        report.constants["c_infinity"] = c_infinity
        report.provenance["c_infinity"] = c_infinity_provenance

    c2 = c_two
    c2_detail = "supplied"
    if c2 is None and c_infinity is not None:
        c2 = math.sqrt(mass * c_infinity)
        c2_detail = "interpolated sqrt(M * C_inf)"
    if not norms.is_finite("w_l2"):
        report.conditions["iii"] = ConditionEntry(
            "unknown", None, "||W||_2 is not finite"
        )
    elif c2 is None:
        report.conditions["iii"] = ConditionEntry(
            "unknown", None, "no L2 trajectory constant available"
        )
    else:
        margin_iii = norms.w_l2 * c2
        report.conditions["iii"] = ConditionEntry(
            "holds" if margin_iii < 1.0 else "fails", margin_iii
        )
        report.constants["c_two"] = c2
        report.provenance["c_two"] = c2_detail

    if not norms.is_finite("lap_plus_lhalf_n"):
        report.conditions["iv"] = ConditionEntry(
            "unknown", None, "positive-part Laplacian norm not finite"
        )
    else:
        margin_iv = 4.0 * c_cond4 * mass * norms.lap_plus_lhalf_n
        report.conditions["iv"] = ConditionEntry(
            "holds" if margin_iv < 1.0 else "fails", margin_iv
        )
    return report
