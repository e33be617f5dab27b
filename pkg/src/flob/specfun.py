"""Special functions for fractional diffusion.

Gamma-family helpers, the one-parameter Mittag-Leffler function on the real
line, the scaling function of the fractional diffusion kernel (tabulated and
interpolated), and a Riemann-Liouville fractional integral on uniform grids.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.signal import fftconvolve
from scipy.special import exp1, gamma, gammaincc, rgamma, sici

from .errors import DomainError, NonConvergence, OutOfRange, QuadratureFailure

__all__ = [
    "MLParams",
    "GAlphaTable",
    "mittag_leffler",
    "f_alpha",
    "g_alpha_build",
    "g_alpha_eval",
    "get_g_table",
    "rl_fractional_integral",
    "upper_gamma",
    "write_g_table",
    "read_g_table",
]

_SERIES_RADIUS = 5.0


@dataclass(frozen=True)
class MLParams:
    """Evaluation controls for the Mittag-Leffler function."""

    alpha: float
    terms_max: int = 400
    tol: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.tol <= 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if self.terms_max < 1:
            raise DomainError(f"terms_max must be >= 1, got {self.terms_max}")


def upper_gamma(s: float, x: float) -> float:
    """Upper incomplete gamma Gamma(s, x) for real order s and x > 0.

    Supports negative and nonpositive-integer orders via downward recursion
    Gamma(s, x) = (Gamma(s+1, x) - x^s e^-x) / s, anchored at scipy's
    regularized gammaincc (s > 0) or at Gamma(0, x) = E_1(x).
    """
    if x <= 0:
        raise DomainError(f"upper_gamma requires x > 0, got {x}")
    if s > 0:
        return gamma(s) * gammaincc(s, x)
    n = round(s)
    if abs(s - n) < 1e-12:
        val = exp1(x)
        j = -1
        while j >= n:
            val = (val - x**j * math.exp(-x)) / j
            j -= 1
        return val
    k = int(math.ceil(-s))
    s0 = s + k
    val = gamma(s0) * gammaincc(s0, x)
    for j in range(k):
        sj = s0 - 1 - j
        val = (val - x**sj * math.exp(-x)) / sj
    return val


def _ml_series(alpha: float, z: float, terms_max: int, tol: float):
    """Power series sum_j z^j / Gamma(1 + j*alpha).

    Returns (value, max_abs_term, converged). The max term magnitude bounds
    the float64 cancellation error on the negative axis.
    """
    s = 1.0
    max_term = 1.0
    term = 1.0
    for j in range(1, terms_max):
        term = z**j / gamma(1.0 + alpha * j)
        s += term
        if abs(term) > max_term:
            max_term = abs(term)
        if abs(term) < 0.01 * tol and j > 2:
            return s, max_term, True
    return s, max_term, False


def _ml_neg_integral(alpha: float, x: float) -> float:
    """E_alpha(-x) for x > 0, 0 < alpha < 1, by the complete-monotone
    spectral representation E_alpha(-t^alpha) = int_0^inf K(r) e^{-rt} dr.

    The spectral density K(r) = (1/pi) r^{alpha-1} sin(pi alpha) /
    (r^{2 alpha} + 2 r^alpha cos(pi alpha) + 1); the r^{alpha-1} endpoint
    singularity is handled by an algebraic-weight quadrature.
    """
    t = x ** (1.0 / alpha)
    if not math.isfinite(t):
        return 1.0 / (x * gamma(1.0 - alpha))
    sa = math.sin(alpha * math.pi) / math.pi
    ca = 2.0 * math.cos(alpha * math.pi)

    def smooth_part(r):
        return sa * np.exp(-r * t) / (r ** (2 * alpha) + ca * r**alpha + 1.0)

    a_cut = 80.0 / t
    val, err = quad(
        smooth_part, 0.0, a_cut, weight="alg", wvar=(alpha - 1.0, 0.0),
        epsabs=1e-13, epsrel=1e-11, limit=400,
    )
    return val


def mittag_leffler(alpha: float, z: float, params: MLParams | None = None) -> float:
    """One-parameter Mittag-Leffler function E_alpha(z) for real z.

    Branches: exact exponential reduction at alpha = 1; power series for
    moderate |z|; for large negative z with alpha in (0, 1) the spectral
    integral over the complete-monotone relaxation density.

    Raises NonConvergence if no branch meets params.tol, DomainError for
    alpha <= 0.
    """
    if params is None:
        params = MLParams(alpha=alpha)
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if z == 0.0:
        return 1.0
    if alpha == 1.0:
        return math.exp(z)
    if abs(z) <= _SERIES_RADIUS:
        val, max_term, ok = _ml_series(alpha, z, params.terms_max, params.tol)
        cancel_err = max_term * 2.3e-16
        if ok and cancel_err <= params.tol:
            return val
        if z < 0 and 0 < alpha < 1:
            return _ml_neg_integral(alpha, -z)
        raise NonConvergence(
            f"series for E_{alpha}({z}) did not meet tol={params.tol} "
            f"(cancellation estimate {cancel_err:.2e})"
        )
    if z < 0 and 0 < alpha < 1:
        return _ml_neg_integral(alpha, -z)
    # large |z| with alpha >= 1 (or z > 0): the series still converges, only
    # more slowly; Gamma(1 + j alpha) eventually dominates any power.
    val, max_term, ok = _ml_series(alpha, z, params.terms_max, params.tol)
    cancel_err = max_term * 2.3e-16
    if ok and cancel_err <= params.tol:
        return val
    raise NonConvergence(
        f"no branch for E_{alpha}({z}) met tol={params.tol}"
    )


def f_alpha(alpha: float, z: float, params: MLParams | None = None) -> float:
    """Relaxation form F_alpha(z) = E_alpha(-z), completely monotone on z >= 0
    for alpha in (0, 1]."""
    return mittag_leffler(alpha, -z, params)


# ---------------------------------------------------------------------------
# g_alpha: scaling function of the short-time diffusion kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GAlphaTable:
    """Tabulated g_alpha on a logarithmic y-grid with a stretched-exponential
    tail rule beyond y_max.

    The kernel value at scaling variable y = x^2 / (4 w t^alpha) is
    g_alpha(y); interpolation happens in log space through a monotone cubic,
    which is exact for the alpha = 1 case where log g is linear in y.
    """

    alpha: float
    y_grid: np.ndarray
    values: np.ndarray
    quadrature_meta: dict
    tail_coefs: tuple | None = None
    _log_interp: PchipInterpolator = field(repr=False, compare=False, default=None)

    @property
    def y_max(self) -> float:
        return float(self.y_grid[-1])

    def tail_value(self, y):
        """Stretched-exponential extrapolation exp(b0 + b1 ln y - b2 y^p)."""
        if self.tail_coefs is None:
            raise OutOfRange(f"no tail rule configured beyond y_max={self.y_max}")
        b0, b1, b2, p = self.tail_coefs
        y = np.asarray(y, dtype=float)
        return np.exp(b0 + b1 * np.log(y) - b2 * y**p)


def _cos_tail(alpha: float, big_q: float, w: float) -> float:
    """Analytic int_Q^inf cos(w q) E_alpha(-q^2) dq using the two-term
    large-argument expansion E_alpha(-x) ~ 1/(x G(1-a)) - 1/(x^2 G(1-2a)).

    rgamma zeroes the coefficients whose gamma argument sits on a pole
    (including every term of the alpha = 1 Gaussian, whose tail is
    exponentially small)."""
    c1 = rgamma(1.0 - alpha)
    c2 = -rgamma(1.0 - 2.0 * alpha)
    if w == 0.0:
        c3 = rgamma(1.0 - 3.0 * alpha)
        return c1 / big_q + c2 / (3.0 * big_q**3) + c3 / (5.0 * big_q**5)
    si, _ = sici(w * big_q)
    # int_Q^inf cos(wq)/q^2 dq, then /q^4 via integration by parts
    i2 = math.cos(w * big_q) / big_q - w * (math.pi / 2.0 - si)
    i3s = math.sin(w * big_q) / (2.0 * big_q**2) + (w / 2.0) * i2
    i4 = math.cos(w * big_q) / (3.0 * big_q**3) - (w / 3.0) * i3s
    return c1 * i2 + c2 * i4


def g_alpha_build(
    alpha: float,
    y_max: float = 48.0,
    n_points: int = 512,
    q_cut: float = 14.0,
    quad_tol: float = 1e-4,
) -> GAlphaTable:
    """Build a g_alpha table by cosine-transform inversion of F_alpha(q^2).

    g_alpha(y) = (2/sqrt(pi)) int_0^inf cos(2 sqrt(y) q) F_alpha(q^2) dq,
    evaluated as a finite oscillatory quadrature on [0, q_cut] plus the
    analytic algebraic-tail contribution. Node values below the quadrature
    noise floor are replaced by the fitted stretched-exponential tail, which
    also provides the y > y_max extrapolation rule.
    """
    if not (0 < alpha <= 1):
        raise DomainError(f"g_alpha requires alpha in (0, 1], got {alpha}")
    if y_max <= 0:
        raise DomainError(f"y_max must be positive, got {y_max}")
    if n_points < 16:
        raise DomainError(f"n_points must be >= 16, got {n_points}")

    # integrand F_alpha(q^2): closed form at alpha=1, otherwise a cubic
    # spline over direct evaluations (series / spectral integral)
    if alpha == 1.0:
        fq = lambda q: np.exp(-np.asarray(q) ** 2)
    else:
        qs = np.linspace(0.0, q_cut, 701)
        vals = np.array([mittag_leffler(alpha, -q * q) for q in qs])
        fq = CubicSpline(qs, vals)

    y_grid = np.concatenate([[0.0], np.geomspace(1e-4, y_max, n_points - 1)])
    pref = 2.0 / math.sqrt(math.pi)
    raw = np.empty_like(y_grid)
    max_err = 0.0
    for i, y in enumerate(y_grid):
        w = 2.0 * math.sqrt(y)
        if y == 0.0:
            main, err = quad(fq, 0.0, q_cut, epsabs=1e-11, epsrel=1e-10, limit=300)
        else:
            main, err = quad(
                fq, 0.0, q_cut, weight="cos", wvar=w,
                epsabs=1e-11, limit=300,
            )
        raw[i] = pref * (main + _cos_tail(alpha, q_cut, w))
        max_err = max(max_err, err)
    if max_err > quad_tol:
        raise QuadratureFailure(
            f"oscillatory quadrature error {max_err:.2e} exceeds {quad_tol:.2e}"
        )

    # reliable range: strictly decreasing and clear of the quadrature noise
    # floor; beyond it, continue with the fitted tail form
    floor = 1e-9
    i_rel = len(raw) - 1
    for i in range(1, len(raw)):
        if not np.isfinite(raw[i]) or raw[i] < floor or raw[i] >= raw[i - 1]:
            i_rel = i - 1
            break

    p_tail = 1.0 / (2.0 - alpha)
    tail_coefs = None
    fit_lo = None
    # fit exp(b0 + b1 ln y - b2 y^p) on the last reliable decade
    y_hi = y_grid[i_rel]
    if y_hi > 1.0:
        mask = (y_grid >= y_hi / 10.0) & (y_grid <= y_hi) & (raw > 0)
        if mask.sum() >= 8:
            yy = y_grid[mask]
            design = np.column_stack([np.ones_like(yy), np.log(yy), -(yy**p_tail)])
            coef, *_ = np.linalg.lstsq(design, np.log(raw[mask]), rcond=None)
            tail_coefs = (coef[0], coef[1], coef[2], p_tail)
            fit_lo = float(yy[0])

    values = raw.copy()
    if i_rel < len(raw) - 1:
        if tail_coefs is None:
            raise QuadratureFailure(
                "node values hit the noise floor before a tail fit was possible"
            )
        b0, b1, b2, p = tail_coefs
        yy = y_grid[i_rel + 1 :]
        values[i_rel + 1 :] = np.exp(b0 + b1 * np.log(yy) - b2 * yy**p)

    meta = {
        "q_cut": q_cut,
        "n_points": n_points,
        "max_quad_err": max_err,
        "tail_start": None if i_rel == len(raw) - 1 else float(y_grid[i_rel]),
        "tail_fit_window": fit_lo,
    }
    interp = PchipInterpolator(y_grid, np.log(values), extrapolate=False)
    return GAlphaTable(
        alpha=alpha,
        y_grid=y_grid,
        values=values,
        quadrature_meta=meta,
        tail_coefs=tail_coefs,
        _log_interp=interp,
    )


def g_alpha_eval(table: GAlphaTable, y):
    """Interpolate g_alpha(y) from a table; exact at grid nodes, monotone in
    between (PCHIP in log space), tail rule beyond y_max.

    Accepts scalars or arrays. Raises OutOfRange beyond y_max when the table
    carries no tail rule, DomainError for negative y.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise DomainError("g_alpha is defined for y >= 0")
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr)
    out = np.empty_like(y_arr)
    inside = y_arr <= table.y_max
    if inside.any():
        out[inside] = np.exp(table._log_interp(y_arr[inside]))
    if (~inside).any():
        out[~inside] = table.tail_value(y_arr[~inside])
    return float(out[0]) if scalar else out


_TABLE_CACHE: dict[tuple, GAlphaTable] = {}


def get_g_table(alpha: float, y_max: float = 48.0, n_points: int = 512) -> GAlphaTable:
    """Shared per-alpha table cache; tables are immutable after build."""
    key = (round(alpha, 12), y_max, n_points)
    table = _TABLE_CACHE.get(key)
    if table is None:
        table = g_alpha_build(alpha, y_max=y_max, n_points=n_points)
        _TABLE_CACHE[key] = table
    return table


def write_g_table(table: GAlphaTable, path) -> None:
    """Dump a table as two-column text (`y value`) with a '#' header."""
    with open(path, "w") as fh:
        fh.write(f"# alpha = {table.alpha!r}\n")
        for k, v in sorted(table.quadrature_meta.items()):
            fh.write(f"# {k} = {v!r}\n")
        if table.tail_coefs is not None:
            fh.write(f"# tail_coefs = {tuple(float(c) for c in table.tail_coefs)!r}\n")
        for y, v in zip(table.y_grid, table.values):
            fh.write(f"{float(y)!r} {float(v)!r}\n")


def read_g_table(path) -> GAlphaTable:
    """Read a table written by write_g_table (round-trips eval exactly)."""
    meta = {}
    ys, vs = [], []
    tail = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                key = key.strip()
                val = ast.literal_eval(val.strip())
                if key == "tail_coefs":
                    tail = tuple(val)
                else:
                    meta[key] = val
                continue
            a, b = line.split()
            ys.append(float(a))
            vs.append(float(b))
    y_grid = np.array(ys)
    values = np.array(vs)
    interp = PchipInterpolator(y_grid, np.log(values), extrapolate=False)
    return GAlphaTable(
        alpha=float(meta.pop("alpha")),
        y_grid=y_grid,
        values=values,
        quadrature_meta=meta,
        tail_coefs=tail,
        _log_interp=interp,
    )


# ---------------------------------------------------------------------------
# Riemann-Liouville fractional integral on a uniform grid
# ---------------------------------------------------------------------------


def rl_fractional_integral(values, dt: float, alpha: float) -> np.ndarray:
    """Fractional integral of order alpha of a uniformly sampled function.

    Product-integration scheme with piecewise-linear reconstruction, exact
    for constant and linear inputs: values[0] is taken at t = 0 and the
    result is returned on the same grid.
    """
    if not (0 < alpha < 1):
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    f = np.asarray(values, dtype=float)
    n = f.size
    if n == 0:
        return np.array([])
    k = np.arange(n, dtype=float)
    a1 = alpha + 1.0
    # convolution weights for interior nodes: (k+1)^(a+1) - 2k^(a+1) + (k-1)^(a+1)
    b = np.zeros(n)
    if n > 1:
        b[0] = 1.0
        kk = k[1:]
        b[1:] = (kk + 1.0) ** a1 - 2.0 * kk**a1 + np.abs(kk - 1.0) ** a1
    # boundary weight multiplying f[0] at output node n
    w0 = np.zeros(n)
    if n > 1:
        nn = k[1:]
        w0[1:] = (nn - 1.0) ** a1 - nn**alpha * (nn - alpha - 1.0)
    conv = fftconvolve(b, f)[:n]
    out = conv + w0 * f[0] - b * f[0]  # replace the k=n term of conv by w0
    out[0] = 0.0
    return out * dt**alpha / gamma(alpha + 2.0)
