"""Norms, moments, distances, inequality checks and rate fitters that turn
simulated trajectories into theorem verdicts.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .spectral import (
    Field,
    Spectrum,
    forward,
    gradient,
    riesz_power,
    spectral_derivative,
    spectrum_l2,
)

# Exact CSV column orders (metadata travels as leading comment lines).
PHYS_COLUMNS = (
    "t", "mass", "l1", "l2", "linf", "h1", "h2",
    "m2", "xrho2", "l1heat", "lowfreq",
)
RESCALED_COLUMNS = PHYS_COLUMNS + (
    "s", "H", "Hrel", "D", "cross", "T2", "T31", "T32", "T4", "logsob",
)


# ---------------------------------------------------------------------------
# norms and moments


def lp_norm(u: Field, p: float) -> float:
    """Riemann L^p norm, h^N sum |u|^p then the p-th root; p = inf is the max."""
    if np.isinf(p):
        return float(np.abs(u.values).max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return float((u.grid.cell_volume * np.abs(u.values) ** p * 1.0).sum() ** (1.0 / p))


def hm_seminorm(u: Field, m: float) -> float:
    """Homogeneous Sobolev seminorm |||xi|^m u_hat||_2 (equals ||u||_2 at m = 0)."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    return spectrum_l2(riesz_power(forward(u), m))


def dj_seminorm(u: Field, j: int, p: float) -> float:
    """Mixed-derivative seminorm over all multi-indices of total order j."""
    spec = forward(u)
    vals = []
    for gamma in _multi_indices(u.grid.dim, j):
        from .spectral import inverse

        vals.append(lp_norm(inverse(spectral_derivative(spec, gamma)), p))
    if np.isinf(p):
        return max(vals)
    return float(sum(v ** p for v in vals) ** (1.0 / p))


def wmp_norm(u: Field, m: int, p: float) -> float:
    """Sobolev norm over all derivatives of order <= m in L^p."""
    spec = forward(u)
    from .spectral import inverse

    vals = []
    for k in range(m + 1):
        for gamma in _multi_indices(u.grid.dim, k):
            vals.append(lp_norm(inverse(spectral_derivative(spec, gamma)), p))
    if np.isinf(p):
        return max(vals)
    return float(sum(v ** p for v in vals) ** (1.0 / p))


def _multi_indices(dim: int, total: int):
    """All multi-indices of the given total order."""
    if dim == 1:
        yield (total,)
        return
    for combo in itertools.product(range(total + 1), repeat=dim):
        if sum(combo) == total:
            yield combo


def second_moment(u: Field) -> float:
    """integral |x|^2 u dx (boundary-sensitive; callers watch the box monitor)."""
    g = u.grid
    r2 = sum(c ** 2 for c in g.coords)
    return float(g.cell_volume * (r2 * u.values).sum())


def weighted_l2(u: Field) -> float:
    """|| x u ||_2 = (integral |x|^2 u^2)^{1/2}."""
    g = u.grid
    r2 = sum(c ** 2 for c in g.coords)
    return float(math.sqrt(g.cell_volume * (r2 * u.values ** 2).sum()))


def l1_heat_distance(u: Field, t: float, mass: float) -> float:
    """L1 distance to the mass-M fundamental heat solution at time t."""
    if t <= 0:
        raise ValueError("heat distance requires t > 0")
    g = u.grid
    q = sum(c ** 2 for c in g.coords)
    kernel = mass / (4.0 * np.pi * t) ** (g.dim / 2.0) * np.exp(-q / (4.0 * t))
    return float(g.cell_volume * np.abs(u.values - kernel).sum())


def low_freq_fraction(u: Field, t: float, k: float) -> float:
    """Share of the spectral energy inside the shrinking ball
    |xi| <= sqrt(2k / (t+1))."""
    if k <= 0:
        raise ValueError("k must be positive")
    g = u.grid
    radius2 = 2.0 * k / (t + 1.0)
    spec = forward(u)
    power = np.abs(spec.coeffs) ** 2
    total = power.sum()
    if total == 0.0:
        return 0.0
    inside = g.k_squared <= radius2
    if radius2 < g.mode_spacing ** 2:
        warnings.warn(
            "low-frequency ball smaller than one mode; returning the DC share",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(power[inside].sum() / total)


# ---------------------------------------------------------------------------
# time series


class TimeSeries:
    """Column-oriented diagnostics trace with run metadata.

    Columns follow PHYS_COLUMNS or RESCALED_COLUMNS; rows are appended as
    dicts and validated lazily (strictly increasing time, constant mass).
    """

    def __init__(self, columns=PHYS_COLUMNS, metadata=None):
        self.columns = tuple(columns)
        self.metadata = dict(metadata or {})
        self._data = {c: [] for c in self.columns}

    def add_row(self, row: dict):
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing columns: {sorted(missing)}")
        for c in self.columns:
            self._data[c].append(float(row[c]))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self._data[name])

    def __len__(self):
        return len(self._data[self.columns[0]])

    def validate(self, mass_rtol: float = 1e-10):
        t = self.column(self.columns[0])
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("time column is not strictly increasing")
        m = self.column("mass")
        if len(m) and m[0] != 0:
            drift = np.abs(m - m[0]).max() / abs(m[0])
            if drift > mass_rtol:
                raise ValueError(f"mass drift {drift:.3e} exceeds {mass_rtol:g}")

    def to_csv(self, path):
        with open(path, "w") as fh:
            for k in sorted(self.metadata):
                fh.write(f"# {k}={self.metadata[k]}\n")
            fh.write(",".join(self.columns) + "\n")
            for i in range(len(self)):
                fh.write(
                    ",".join(f"{self._data[c][i]:.17g}" for c in self.columns) + "\n"
                )

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        metadata = {}
        header = None
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        k, v = body.split("=", 1)
                        metadata[k.strip()] = v.strip()
                    continue
                if header is None:
                    header = tuple(line.split(","))
                    if header not in (PHYS_COLUMNS, RESCALED_COLUMNS):
                        raise ValueError(
                            f"unrecognized CSV schema: {','.join(header)}"
                        )
                    continue
                rows.append([float(x) for x in line.split(",")])
        if header is None:
            raise ValueError("empty CSV: no header found")
        ts = cls(columns=header, metadata=metadata)
        for r in rows:
            ts.add_row(dict(zip(header, r)))
        return ts


def measure_state(
    u: Field,
    t: float,
    mass0: float,
    lowfreq_k: float,
    hm_orders=(1, 2),
) -> dict:
    """One diagnostics row for a physical-time state."""
    spec = forward(u)
    row = {
        "t": t,
        "mass": u.mass(),
        "l1": lp_norm(u, 1.0),
        "l2": lp_norm(u, 2.0),
        "linf": lp_norm(u, np.inf),
        "m2": second_moment(u),
        "xrho2": weighted_l2(u),
        "lowfreq": low_freq_fraction(u, t, lowfreq_k),
    }
    for m in hm_orders:
        row[f"h{m}"] = spectrum_l2(riesz_power(spec, float(m)))
    row["l1heat"] = l1_heat_distance(u, t, mass0) if t > 0 else math.nan
    return row


# ---------------------------------------------------------------------------
# decay fitting


@dataclass
class DecayReport:
    """Fitted rate for one diagnostics column over a window.

    slope is the log-log (power) or log-linear (exponential) regression
    coefficient; a negative slope means decay.
    """

    quantity: str
    model: str
    window: tuple
    slope: float
    stderr: float
    residual_rms: float
    intercept: float
    n_samples: int
    half_window_slope: float
    theory: float | None = None
    tolerance: float | None = None

    @property
    def verdict(self) -> bool | None:
        if self.theory is None or self.tolerance is None:
            return None
        return abs(self.slope - self.theory) <= self.tolerance

    def to_text(self) -> str:
        lines = [
            f"decay fit: {self.quantity} ({self.model})",
            f"  window        = [{self.window[0]:g}, {self.window[1]:g}]"
            f" ({self.n_samples} samples)",
            f"  slope         = {self.slope:.6g} +- {self.stderr:.2g}",
            f"  residual rms  = {self.residual_rms:.3g}",
            f"  half-window slope = {self.half_window_slope:.6g}",
        ]
        if self.theory is not None:
            lines.append(f"  theory slope  = {self.theory:.6g}")
            if self.tolerance is not None:
                ok = "pass" if self.verdict else "FAIL"
                lines.append(f"  verdict       = {ok} (tol {self.tolerance:g})")
        return "\n".join(lines) + "\n"

    def to_keyvalues(self) -> str:
        rows = [
            f"quantity={self.quantity}",
            f"model={self.model}",
            f"window={self.window[0]!r},{self.window[1]!r}",
            f"slope={self.slope!r}",
            f"stderr={self.stderr!r}",
            f"residual_rms={self.residual_rms!r}",
            f"half_window_slope={self.half_window_slope!r}",
            f"n_samples={self.n_samples}",
        ]
        if self.theory is not None:
            rows.append(f"theory={self.theory!r}")
        if self.tolerance is not None:
            rows.append(f"tolerance={self.tolerance!r}")
            rows.append(f"verdict={'pass' if self.verdict else 'fail'}")
        return "\n".join(rows) + "\n"


def _least_squares_line(x: np.ndarray, y: np.ndarray):
    n = x.size
    xbar, ybar = x.mean(), y.mean()
    sxx = ((x - xbar) ** 2).sum()
    if sxx == 0:
        raise ValueError("degenerate regression: no spread in the time window")
    slope = ((x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    rms = math.sqrt((resid ** 2).mean())
    dof = max(n - 2, 1)
    stderr = math.sqrt((resid ** 2).sum() / dof / sxx)
    return slope, intercept, stderr, rms


def _window_data(ts: TimeSeries, quantity: str, window, time_column: str):
    t = ts.column(time_column)
    y = ts.column(quantity)
    t0, t1 = window
    sel = (t >= t0) & (t <= t1) & np.isfinite(y)
    t, y = t[sel], y[sel]
    if t.size < 10:
        raise ValueError(
            f"window [{t0}, {t1}] holds only {t.size} samples; need at least 10"
        )
    bad = t[y <= 0]
    if bad.size:
        raise ValueError(
            f"nonpositive values of {quantity} inside the window at times "
            f"{bad[:10].tolist()}"
        )
    return t, y


def _fit(ts, quantity, window, transform_x, model, time_column, theory, tolerance,
         transform_y=None):
    t, y = _window_data(ts, quantity, window, time_column)
    x = transform_x(t)
    ly = np.log(y) if transform_y is None else transform_y(t, y)
    slope, intercept, stderr, rms = _least_squares_line(x, ly)
    mid = 0.5 * (window[0] + window[1])
    try:
        th, yh = _window_data(ts, quantity, (mid, window[1]), time_column)
        hslope = _least_squares_line(
            transform_x(th), np.log(yh) if transform_y is None else transform_y(th, yh)
        )[0]
    except ValueError:
        hslope = math.nan
    return DecayReport(
        quantity=quantity,
        model=model,
        window=(float(window[0]), float(window[1])),
        slope=slope,
        stderr=stderr,
        residual_rms=rms,
        intercept=intercept,
        n_samples=t.size,
        half_window_slope=hslope,
        theory=theory,
        tolerance=tolerance,
    )


def fit_power_law(
    ts: TimeSeries,
    quantity: str,
    window,
    theory: float | None = None,
    tolerance: float | None = None,
    time_column: str = "t",
) -> DecayReport:
    """Least squares of log y against log t over the window."""
    return _fit(ts, quantity, window, np.log, "power", time_column, theory, tolerance)


def fit_exponential(
    ts: TimeSeries,
    quantity: str,
    window,
    theory: float | None = None,
    tolerance: float | None = None,
    time_column: str = "t",
) -> DecayReport:
    """Least squares of log y against t (rate is the slope, negative = decay)."""
    return _fit(
        ts, quantity, window, lambda t: t, "exp", time_column, theory, tolerance
    )


def fit_power_log(
    ts: TimeSeries,
    quantity: str,
    window,
    theory: float | None = None,
    tolerance: float | None = None,
    time_column: str = "t",
) -> DecayReport:
    """Fit y = C t^a log t: regress log y - log log t on log t (needs t > 1)."""
    if window[0] <= 1.0:
        raise ValueError("power-log model needs the window inside t > 1")
    return _fit(
        ts, quantity, window, np.log, "power-log", time_column, theory, tolerance,
        transform_y=lambda t, y: np.log(y) - np.log(np.log(t)),
    )


# ---------------------------------------------------------------------------
# inequality checks


def dm_product_check(f: Field, g: Field, h: Field, m: int) -> dict:
    """Both sides of the product-convolution derivative bound
    ||D^m(f (g*h))||_2 <= 2^{m-1} (||D^m f||_2 ||g||_2 ||h||_2
                                   + ||f||_2 ||D^m g||_2 ||h||_2).

    Inputs must be band-limited enough that the product is alias-free,
    otherwise the discrete left side is not the continuum quantity.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    from .spectral import convolve

    gh = convolve(g, h, check_decay=False)
    prod = Field(f.grid, f.values * gh.values)
    lhs = hm_seminorm(prod, m)
    rhs = 2.0 ** (m - 1) * (
        hm_seminorm(f, m) * lp_norm(g, 2) * lp_norm(h, 2)
        + lp_norm(f, 2) * hm_seminorm(g, m) * lp_norm(h, 2)
    )
    ratio = 0.0 if rhs == 0.0 else lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def gns_check(u: Field, j: int, m: int, p: float, q: float, s: float, theta: float) -> dict:
    """Interpolation-inequality ratio ||D^j u||_p / (||D^m u||_q^theta ||u||_s^{1-theta}).

    The exponent relation 1/p = j/N + theta (1/q - m/N) + (1-theta)/s is
    validated to 1e-12 before anything is computed; the constant-free ratio
    is returned for monitoring.
    """
    dim = u.grid.dim
    lhs_rel = 1.0 / p
    rhs_rel = j / dim + theta * (1.0 / q - m / dim) + (1.0 - theta) / s
    if abs(lhs_rel - rhs_rel) > 1e-12:
        raise ValueError(
            f"exponent relation violated: 1/p={lhs_rel} vs {rhs_rel}"
        )
    lhs = dj_seminorm(u, j, p) if j > 0 else lp_norm(u, p)
    dm = dj_seminorm(u, m, q) if m > 0 else lp_norm(u, q)
    rhs = dm ** theta * lp_norm(u, s) ** (1.0 - theta)
    ratio = math.inf if rhs == 0 else lhs / rhs
    return {"lhs": lhs, "rhs_without_constant": rhs, "ratio": ratio}


def truncated_beta_check(t: float, alpha: float) -> dict:
    """Quadrature of integral_0^t (t-s)^{-1/2} (1+s)^{-alpha} ds against its
    theoretical envelope shape t^{-1/2} (alpha > 1) or t^{-1/2} log t."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    # substitution s = t - u^2 removes the endpoint singularity
    val, _ = integrate.quad(
        lambda u: 2.0 / (1.0 + t - u * u) ** alpha,
        0.0,
        math.sqrt(t),
        limit=200,
        epsrel=1e-12,
    )
    if alpha > 1:
        bound = t ** -0.5
    else:
        bound = t ** -0.5 * math.log(t) if t > 1 else t ** -0.5
    return {"integral": val, "bound": bound, "ratio": val / bound if bound else math.inf}
