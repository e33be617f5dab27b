"""CTRW building blocks.

Model parameters with their derived hydrodynamic coefficients, the truncated
power-law waiting-time distribution (density, survival, Laplace transform,
sampler, stationary residual sampler), the Gaussian jump-length law, short-
and long-time diffusion kernels, a direct integrator of the renewal evolution
equation (the slow oracle everything else is checked against), and an
explicit memory-stepping solver of the fractional diffusion PDE.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, gamma

from .errors import DomainError, GridOverflow, RegimeWarning, StabilityError
from .specfun import g_alpha_eval, get_g_table, upper_gamma

__all__ = [
    "ModelParams",
    "DensityField",
    "TruncatedPowerLawWaitingTime",
    "ExponentialWaitingTime",
    "waiting_time_pdf",
    "waiting_time_sample",
    "waiting_time_laplace",
    "green_function_short",
    "green_function_long",
    "jump_kernel",
    "evolve_density_master",
    "FractionalDiffusionPDE",
]


@dataclass(frozen=True)
class ModelParams:
    """Primary model parameters; every derived coefficient is recomputed on
    access so the set can never go stale.

    alpha  : waiting-time tail exponent; (0,1) fractional, >= 1 runs the
             normal-diffusion control
    tau0   : microscopic waiting-time scale
    eps    : cutoff rate, 1/t_c
    sigma  : RMS jump length
    eta    : death probability per event
    lam    : deposition intensity (orders / price / time)

    Derived quantities follow the hydrodynamic formulas where they exist
    (tau_alpha, tau_tilde, omega, ...). The implemented waiting-time law is a
    regularized version of the ideal one, so its exact mean `mean_wait`
    differs from `tau_tilde` at O((eps*t_min)^(1-alpha)); the `*_eff`
    variants are the exact-mean counterparts and are the right coefficients
    to compare particle simulations against.
    """

    alpha: float
    tau0: float = 1.0
    eps: float = 1e-3
    sigma: float = 1.0
    eta: float = 0.1
    lam: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.tau0 <= 0:
            raise DomainError(f"tau0 must be positive, got {self.tau0}")
        if self.eps <= 0:
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not (0 <= self.eta < 1):
            raise DomainError(f"eta must be in [0, 1), got {self.eta}")
        if self.lam < 0:
            raise DomainError(f"lam must be nonnegative, got {self.lam}")

    # -- fractional-regime coefficients --------------------------------

    @property
    def is_fractional(self) -> bool:
        return self.alpha < 1.0

    @cached_property
    def tau_alpha(self) -> float:
        """tau^alpha = -Gamma(-alpha) tau0^alpha (fractional regime only)."""
        if not self.is_fractional:
            raise DomainError("tau_alpha is defined only for alpha < 1")
        return -gamma(-self.alpha) * self.tau0**self.alpha

    @cached_property
    def tau_tilde(self) -> float:
        """Mean time between jumps: alpha eps^(alpha-1) tau^alpha for the
        fractional regime, exact mean of the law for the control regime."""
        if self.is_fractional:
            return self.alpha * self.eps ** (self.alpha - 1.0) * self.tau_alpha
        return self.mean_wait

    @cached_property
    def omega(self) -> float:
        """Fractional diffusivity sigma^2 / tau^alpha."""
        return self.sigma**2 / self.tau_alpha

    @property
    def phi(self) -> float:
        return self.eta / self.sigma**2

    @property
    def jump_std(self) -> float:
        """Standard deviation of individual jumps.

        The diffusion-limit expansion of the jump characteristic function,
        1 - sigma^2 k^2 - eta, fixes sigma^2 as HALF the jump variance, so
        walkers must jump with RMS sqrt(2) sigma for the kernel formulas to
        describe them.
        """
        return math.sqrt(2.0) * self.sigma

    @property
    def omega_tilde(self) -> float:
        return self.sigma**2 / self.tau_tilde

    @property
    def nu(self) -> float:
        return self.omega_tilde * self.phi

    @cached_property
    def L_slope(self) -> float:
        """Local slope of the stationary book, lam sqrt(phi) / nu."""
        if self.phi == 0:
            raise DomainError("L_slope requires eta > 0")
        return self.lam * math.sqrt(self.phi) / self.nu

    @property
    def t_c(self) -> float:
        return 1.0 / self.eps

    # -- exact-mean (effective) coefficients ---------------------------

    @cached_property
    def waiting_time(self) -> "TruncatedPowerLawWaitingTime":
        return TruncatedPowerLawWaitingTime(self.alpha, self.tau0, self.eps)

    @property
    def t_min(self) -> float:
        return self.waiting_time.t_min

    @property
    def mean_wait(self) -> float:
        return self.waiting_time.mean

    @property
    def nu_eff(self) -> float:
        return self.eta / self.mean_wait

    @property
    def omega_tilde_eff(self) -> float:
        return self.sigma**2 / self.mean_wait

    @cached_property
    def L_slope_eff(self) -> float:
        if self.phi == 0:
            raise DomainError("L_slope_eff requires eta > 0")
        return self.lam * math.sqrt(self.phi) / self.nu_eff

    def derived_summary(self) -> dict:
        """All derived coefficients, for run manifests."""
        out = {
            "t_min": self.t_min,
            "mean_wait": self.mean_wait,
            "tau_tilde": self.tau_tilde,
            "phi": self.phi,
            "omega_tilde": self.omega_tilde,
            "nu": self.nu,
            "nu_eff": self.nu_eff,
            "t_c": self.t_c,
        }
        if self.is_fractional:
            out["tau_alpha"] = self.tau_alpha
            out["omega"] = self.omega
        if self.phi > 0:
            out["L_slope"] = self.L_slope
            out["L_slope_eff"] = self.L_slope_eff
        return out


# ---------------------------------------------------------------------------
# Waiting-time laws
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _solve_t_min(alpha: float, tau0: float, eps: float) -> float:
    """Lower cutoff that normalizes tau0^a e^(-eps t) t^(-1-a) on [t_min, inf).

    Fixing the tail coefficient at exactly tau0^alpha and absorbing the
    microscopic regularization into the cutoff keeps the implemented law's
    fractional hydrodynamics identical to the ideal one.
    """
    def deficit(tm):
        return tau0**alpha * eps**alpha * upper_gamma(-alpha, eps * tm) - 1.0

    return brentq(deficit, 1e-12 * tau0, 1e9 / eps, xtol=1e-15, rtol=8.9e-16,
                  maxiter=200)


class TruncatedPowerLawWaitingTime:
    """pdf(t) = tau0^alpha e^(-eps t) / t^(1+alpha) on [t_min, inf).

    All integral quantities (survival, mean, cell masses) are exact through
    the upper incomplete gamma function. Sampling is a Pareto proposal with
    exponential thinning.
    """

    def __init__(self, alpha: float, tau0: float, eps: float):
        if alpha <= 0 or tau0 <= 0 or eps <= 0:
            raise DomainError("alpha, tau0 and eps must all be positive")
        self.alpha = alpha
        self.tau0 = tau0
        self.eps = eps
        self.t_min = _solve_t_min(alpha, tau0, eps)
        self.mean = tau0**alpha * eps ** (alpha - 1.0) * upper_gamma(
            1.0 - alpha, eps * self.t_min
        )
        self._residual_inv = None
        self.rejection_retries = 0  # diagnostic counter

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("waiting times are positive")
        out = np.where(
            t >= self.t_min,
            self.tau0**self.alpha * np.exp(-self.eps * t) * t ** (-1.0 - self.alpha),
            0.0,
        )
        return float(out) if out.ndim == 0 else out

    def survival(self, t: float) -> float:
        """P(wait > t), exact."""
        if t <= self.t_min:
            return 1.0
        return self.tau0**self.alpha * self.eps**self.alpha * upper_gamma(
            -self.alpha, self.eps * t
        )

    def cdf(self, t: float) -> float:
        return 1.0 - self.survival(t)

    def _int_survival_tail(self, t: float) -> float:
        """int_t^inf survival(u) du for t >= t_min."""
        x = self.eps * t
        return self.tau0**self.alpha * self.eps ** (self.alpha - 1.0) * (
            upper_gamma(1.0 - self.alpha, x) - x * upper_gamma(-self.alpha, x)
        )

    def int_survival(self, t: float) -> float:
        """int_0^t survival(u) du, exact (-> mean as t -> inf)."""
        if t <= self.t_min:
            return t
        return self.t_min + self._int_survival_tail(self.t_min) - self._int_survival_tail(t)

    def cell_masses(self, edges: np.ndarray) -> np.ndarray:
        """Exact probability mass of each [edges[i], edges[i+1]] cell."""
        surv = np.array([self.survival(float(t)) for t in edges])
        return surv[:-1] - surv[1:]

    def laplace(self, p: float) -> float:
        """Exact Laplace transform of the regularized pdf."""
        if p < 0:
            raise DomainError("laplace argument must be nonnegative")
        if p == 0:
            return 1.0
        s = p + self.eps
        return self.tau0**self.alpha * s**self.alpha * upper_gamma(
            -self.alpha, s * self.t_min
        )

    def sample(self, rng: np.random.Generator, size=None):
        """Draw i.i.d. waits; Pareto proposal thinned by exp(-eps(t - t_min))."""
        n = 1 if size is None else int(size)
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(64, int((n - filled) * 1.4))
            t = self.t_min * rng.random(m) ** (-1.0 / self.alpha)
            keep = rng.random(m) < np.exp(-self.eps * (t - self.t_min))
            self.rejection_retries += int(m - keep.sum())
            acc = t[keep]
            take = min(acc.size, n - filled)
            out[filled : filled + take] = acc[:take]
            filled += take
        return float(out[0]) if size is None else out

    def sample_residual(self, rng: np.random.Generator, size=None):
        """Stationary residual-life draws, density survival(t)/mean.

        Seeding the initial book with residual lives instead of fresh waits
        starts the renewal processes in their stationary state, removing the
        slow aging transient.
        """
        if self._residual_inv is None:
            t_hi = 80.0 / self.eps + 10.0 * self.t_min
            grid = np.concatenate([
                [0.0],
                np.geomspace(self.t_min * 1e-3, t_hi, 4096),
            ])
            cdf = np.array([self.int_survival(float(t)) for t in grid]) / self.mean
            cdf[-1] = 1.0
            keep = np.concatenate([[True], np.diff(cdf) > 0])
            self._residual_inv = (cdf[keep], grid[keep])
        n = 1 if size is None else int(size)
        u = rng.random(n)
        out = np.interp(u, *self._residual_inv)
        return float(out[0]) if size is None else out


class ExponentialWaitingTime:
    """Memoryless control law used to bypass the fractional machinery when
    cross-checking the renewal integrator against the plain diffusion kernel."""

    def __init__(self, mean: float):
        if mean <= 0:
            raise DomainError("mean must be positive")
        self.mean = mean
        self.t_min = 0.0

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-t / self.mean) / self.mean

    def survival(self, t: float) -> float:
        return math.exp(-t / self.mean)

    def int_survival(self, t: float) -> float:
        return self.mean * (1.0 - math.exp(-t / self.mean))

    def cell_masses(self, edges: np.ndarray) -> np.ndarray:
        surv = np.exp(-np.asarray(edges) / self.mean)
        return surv[:-1] - surv[1:]

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.exponential(self.mean, size=1 if size is None else size)
        return float(out[0]) if size is None else out

    def sample_residual(self, rng: np.random.Generator, size=None):
        return self.sample(rng, size)


# -- spec-level operation wrappers ------------------------------------------


def waiting_time_pdf(params: ModelParams, t):
    """Normalized waiting-time density of the model law."""
    return params.waiting_time.pdf(t)


def waiting_time_sample(params: ModelParams, rng: np.random.Generator, size=None):
    """i.i.d. draws from the model waiting-time law."""
    return params.waiting_time.sample(rng, size)


def waiting_time_laplace(params: ModelParams, p: float, exact: bool = False) -> float:
    """Laplace transform of the waiting-time law.

    The default is the model's defining closed form
    1 - tau^alpha [(p+eps)^alpha - eps^alpha], an asymptotic statement valid
    while 1 - Psi << 1. With exact=True the transform of the implemented
    regularized density is returned instead (valid for every p >= 0).
    """
    if p < 0:
        raise DomainError("p must be nonnegative")
    if exact or not params.is_fractional:
        return params.waiting_time.laplace(p)
    return 1.0 - params.tau_alpha * (
        (p + params.eps) ** params.alpha - params.eps**params.alpha
    )


# ---------------------------------------------------------------------------
# Diffusion kernels
# ---------------------------------------------------------------------------


def green_function_short(params: ModelParams, x, t: float, table=None, omega=None):
    """Short-time kernel (1/sqrt(4 pi w t^a)) g_a(x^2 / (4 w t^a)).

    Valid for t << t_c; emits RegimeWarning when t*eps >= 0.1. `omega`
    overrides the diffusivity (used for the alpha = 1 reduction where the
    fractional scale degenerates).
    """
    if t <= 0:
        raise DomainError("t must be positive")
    if t * params.eps >= 0.1:
        warnings.warn(
            f"short-time kernel at t*eps = {t * params.eps:.3g} >= 0.1",
            RegimeWarning, stacklevel=2,
        )
    w = params.omega if omega is None else omega
    if table is None:
        table = get_g_table(params.alpha)
    scale = 4.0 * w * t**params.alpha
    x = np.asarray(x, dtype=float)
    return g_alpha_eval(table, x * x / scale) / math.sqrt(math.pi * scale)


def green_function_long(params: ModelParams, x, t: float, effective: bool = False):
    """Long-time kernel: Gaussian of variance 2 w~ t with death factor e^(-nu t).

    Valid for t >> t_c; emits RegimeWarning when t*eps <= 10. With
    effective=True the exact-mean coefficients are used.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    if t * params.eps <= 10.0:
        warnings.warn(
            f"long-time kernel at t*eps = {t * params.eps:.3g} <= 10",
            RegimeWarning, stacklevel=2,
        )
    wt = params.omega_tilde_eff if effective else params.omega_tilde
    nu = params.nu_eff if effective else params.nu
    x = np.asarray(x, dtype=float)
    var = 2.0 * wt * t
    return math.exp(-nu * t) * np.exp(-x * x / (2.0 * var)) / math.sqrt(
        2.0 * math.pi * var
    )


def jump_kernel(jump_std: float, dx: float, eta: float = 0.0, half_width: float = 8.0):
    """Cell-integrated Gaussian jump kernel on a lattice of spacing dx.

    jump_std is the standard deviation of a single jump (params.jump_std for
    model-consistent diffusion). Integrating the Gaussian over each
    destination cell (erf differences) keeps the discrete kernel an exact
    probability vector before the (1-eta) survival scaling.
    """
    m = max(1, int(math.ceil(half_width * jump_std / dx)))
    edges = (np.arange(-m, m + 1) + 0.5) * dx
    cdf = 0.5 * (1.0 + erf(edges / (jump_std * math.sqrt(2.0))))
    kern = np.diff(np.concatenate([[0.0], cdf]))
    kern[0] = cdf[0]
    kern /= kern.sum()
    return (1.0 - eta) * kern


# ---------------------------------------------------------------------------
# Density fields and the renewal-equation oracle
# ---------------------------------------------------------------------------


@dataclass
class DensityField:
    """Signed (or single-species) density on a uniform price grid."""

    x_grid: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x_grid.shape != self.values.shape:
            raise DomainError("x_grid and values must have matching shapes")

    @property
    def dx(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def total_mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def second_moment(self) -> float:
        """Variance of the normalized |density| profile."""
        w = np.abs(self.values)
        tot = w.sum()
        if tot == 0:
            return 0.0
        mean = float((self.x_grid * w).sum() / tot)
        return float(((self.x_grid - mean) ** 2 * w).sum() / tot)

    def dump(self, path, header: dict | None = None) -> None:
        with open(path, "w") as fh:
            fh.write(f"# time = {float(self.time)!r}\n")
            for k, v in (header or {}).items():
                fh.write(f"# {k} = {v!r}\n")
            for x, v in zip(self.x_grid, self.values):
                fh.write(f"{float(x)!r} {float(v)!r}\n")

    @classmethod
    def load(cls, path) -> "DensityField":
        xs, vs, t = [], [], 0.0
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].partition("=")
                    if key.strip() == "time":
                        t = float(val)
                    continue
                a, b = line.split()
                xs.append(float(a))
                vs.append(float(b))
        return cls(np.array(xs), np.array(vs), t)


def evolve_density_master(
    initial: DensityField,
    params: ModelParams,
    source,
    t_end: float,
    dt: float,
    waiting=None,
    record=None,
    boundary_tol: float = 1e-4,
) -> DensityField:
    """Direct integration of the renewal evolution equation.

    phi(x, t) = Phi(t) phi(x, 0)
              + int dt' Psi(t') (Lambda * phi)(x, t - t')
              + int dt' Phi(t') s(x, t - t')

    Product integration with the exact per-cell masses of Psi and Phi makes
    total mass conservation exact for eta = 0, s = 0 (the discrete renewal
    identity telescopes), independent of dt. This is the slow oracle the
    kernels and the particle simulator are validated against.

    source: None, or callable s(x_grid, t) -> density rate array.
    record: optional callable record(t, field_values) invoked each step.
    GridOverflow is raised when the outermost cells hold more than
    boundary_tol of the total |mass|.
    """
    wt = params.waiting_time if waiting is None else waiting
    if dt <= 0 or t_end <= dt:
        raise DomainError("need 0 < dt < t_end")
    n_steps = int(round(t_end / dt))
    x = initial.x_grid
    dx = initial.dx
    kern = jump_kernel(params.jump_std, dx, params.eta)

    edges = dt * np.arange(n_steps + 2)
    w = np.concatenate([[0.0], wt.cell_masses(edges)])  # w[m], m = 1..n_steps+1
    surv = np.array([wt.survival(float(t)) for t in edges[: n_steps + 1]])
    iphi = np.array([wt.int_survival(float(t)) for t in edges])
    wphi = np.diff(iphi)  # integral of Phi over each cell

    # midpoint-in-time product weights: v[j] pairs cell masses with the
    # average of the two bracketing history slices
    v = np.zeros(n_steps + 1)
    if n_steps >= 1:
        v[1] = w[1] + 0.5 * w[2]
        for j in range(2, n_steps + 1):
            v[j] = 0.5 * (w[j] + w[j + 1])
    vs = np.zeros(n_steps + 1)
    for j in range(1, n_steps + 1):
        vs[j] = 0.5 * (wphi[j - 1] + wphi[j])

    n_x = x.size
    hist_conv = np.zeros((n_steps + 1, n_x))
    phi0 = initial.values.copy()
    hist_conv[0] = np.convolve(phi0, kern, mode="same")
    have_source = source is not None
    if have_source:
        src_hist = np.zeros((n_steps + 1, n_x))
        src_hist[0] = source(x, 0.0)

    phi_n = phi0
    if record is not None:
        record(0.0, phi0)
    for n in range(1, n_steps + 1):
        t_n = n * dt
        acc = v[1 : n + 1] @ hist_conv[n - 1 :: -1][:n]
        acc -= 0.5 * w[n + 1] * hist_conv[0]
        if have_source:
            src_hist[n] = source(x, t_n)
            sacc = vs[1 : n + 1] @ src_hist[n - 1 :: -1][:n]
            sacc -= 0.5 * wphi[n] * src_hist[0]
            sacc += 0.5 * wphi[0] * src_hist[n]
        else:
            sacc = 0.0
        phi_n = surv[n] * phi0 + acc + sacc
        hist_conv[n] = np.convolve(phi_n, kern, mode="same")
        if record is not None:
            record(t_n, phi_n)
    total = np.abs(phi_n).sum()
    edge_mass = np.abs(phi_n[:2]).sum() + np.abs(phi_n[-2:]).sum()
    if total > 0 and edge_mass > boundary_tol * total:
        raise GridOverflow(
            f"boundary holds {edge_mass / total:.2e} of total mass "
            f"(> {boundary_tol:.1e}); widen the grid"
        )
    return DensityField(x, phi_n, time=n_steps * dt)


# ---------------------------------------------------------------------------
# Explicit fractional-PDE stepper (Grunwald-Letnikov memory)
# ---------------------------------------------------------------------------


class FractionalDiffusionPDE:
    """Explicit stepper for  d_t phi = K D_t^(1-alpha) (d_xx phi - phi_c phi) + s.

    The memory derivative uses Grunwald-Letnikov weights over the full stored
    history of the spatial operator (optionally truncated). Single-run
    object: owns its history buffer.
    """

    def __init__(
        self,
        params: ModelParams,
        x_grid: np.ndarray,
        dt: float,
        n_steps_max: int,
        diffusivity: float | None = None,
        memory_window: int | None = None,
        stability_factor: float = 0.5,
    ):
        self.params = params
        self.alpha = params.alpha
        if not (0 < self.alpha <= 1):
            raise DomainError("fractional stepper requires alpha in (0, 1]")
        self.x = np.asarray(x_grid, dtype=float)
        self.dx = float(self.x[1] - self.x[0])
        if diffusivity is not None:
            self.K = diffusivity
        else:
            self.K = params.omega if params.is_fractional else params.omega_tilde
        dt_max = (stability_factor * self.dx**2 / (2.0 * self.K)) ** (1.0 / self.alpha)
        if dt > dt_max:
            raise StabilityError(
                f"dt = {dt:.3g} exceeds stability bound {dt_max:.3g} "
                f"(dt^alpha <= {stability_factor} dx^2 / 2K)"
            )
        self.dt = dt
        self.phi_c = params.phi
        # GL weights for derivative order 1 - alpha
        mu = 1.0 - self.alpha
        n_w = n_steps_max + 1 if memory_window is None else memory_window
        wts = np.empty(n_w)
        wts[0] = 1.0
        for j in range(1, n_w):
            wts[j] = wts[j - 1] * (j - 1.0 - mu) / j
        self.gl_weights = wts
        self.memory_window = memory_window
        self._hist = np.zeros((n_steps_max + 1, self.x.size))
        self._n = 0
        self.t = 0.0

    def _spatial_operator(self, vals):
        lap = np.empty_like(vals)
        lap[1:-1] = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
        lap[0] = vals[1] - vals[0]      # reflective (zero-flux) edges
        lap[-1] = vals[-2] - vals[-1]
        return lap / self.dx**2 - self.phi_c * vals

    def step(self, vals: np.ndarray, source=None) -> np.ndarray:
        """Advance one dt; returns the new field values."""
        if self._n >= self._hist.shape[0]:
            raise DomainError("stepper exceeded its preallocated step budget")
        self._hist[self._n] = self._spatial_operator(vals)
        n_mem = self._n + 1
        if self.memory_window is not None:
            n_mem = min(n_mem, self.memory_window)
        start = self._n - n_mem + 1
        block = self._hist[start : self._n + 1]
        mem = self.gl_weights[:n_mem] @ block[::-1]
        frac = self.K * self.dt ** (self.alpha - 1.0) * mem
        new = vals + self.dt * frac
        if source is not None:
            new = new + self.dt * source(self.x, self.t)
        self._n += 1
        self.t += self.dt
        return new

    def run(self, initial: DensityField, n_steps: int, source=None) -> DensityField:
        vals = initial.values.copy()
        for _ in range(n_steps):
            vals = self.step(vals, source)
        return DensityField(self.x, vals, time=self.t)
