"""
Stochastic Site Module
======================

Single dissipated site behind a weak link, driven by exponentially
correlated complex noise:

    i da/dt = (omega - i*gamma) a + g |a|^2 a - (eps*J/2) xi(t)

with xi a complex Ornstein-Uhlenbeck process of power A and correlation
time tau, plus the diffusion and friction checks of the driven oscillator.

Constants under this convention (A = 2): the occupation of an undamped,
non-interacting site grows at rate 2D with D = eps^2 J^2 tau / 2, i.e. the
action |a|^2 / 2 grows as D t. With damping the occupation relaxes at rate
2*gamma to D / gamma / (1 + gamma*tau), which is the closed-form stationary
value ``eps^2 J^2 tau / (2 gamma)`` up to the finite-tau factor. The
stationary amplitude is an isotropic complex Gaussian with variance
``<|a|^2> / 2`` per quadrature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .ensembles import trajectory_stream
from .integrator import BLOWUP_OCCUPATION, BlowUpError, rk4_step

logger = logging.getLogger(__name__)

NOISE_POWER = 2.0
MIN_EFFECTIVE_SAMPLES = 10_000
# Noise buffer size (complex values) per refill
_NOISE_BLOCK_VALUES = 1 << 18


class StochasticSiteError(Exception):
    """Base exception for the single-site model."""


class StochasticConfigError(StochasticSiteError):
    """Raised for invalid noise or oscillator parameters."""


class UndefinedStationaryStateError(StochasticSiteError):
    """Raised when a stationary value is requested without damping."""


class InsufficientSamplesError(StochasticSiteError):
    """Raised when a path is too short to analyse at all."""


def default_step(tau: float) -> float:
    return min(tau / 20.0, 1.0e-3)


@dataclass(frozen=True)
class OUProcessConfig:
    """Complex exponentially correlated noise.

    ``<xi(t) xi*(t')> = A exp(-|t - t'| / tau)`` and ``<xi xi> = 0``.
    Realization r draws from the stream keyed on ``(seed, r)``.
    """

    A: float = NOISE_POWER
    tau: float = 0.5
    step: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.A <= 0 or self.tau <= 0:
            raise StochasticConfigError(f"A and tau must be > 0, got A={self.A}, tau={self.tau}")
        if self.step is None:
            object.__setattr__(self, "step", default_step(self.tau))
        if self.step <= 0:
            raise StochasticConfigError(f"step must be > 0, got {self.step}")

    @property
    def decay(self) -> float:
        """One-step autocorrelation ``exp(-h / tau)``."""
        return math.exp(-self.step / self.tau)

    @property
    def innovation_scale(self) -> float:
        return math.sqrt(self.A * (1.0 - self.decay**2))


@dataclass(frozen=True)
class SingleSiteConfig:
    """Oscillator parameters. ``friction`` adds amplitude damping on top of gamma."""

    omega: float = 0.0
    gamma: float = 0.1
    g: float = 0.0
    drive_strength: float = 0.05
    friction: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.friction < 0:
            raise StochasticConfigError(f"gamma and friction must be >= 0, got {self.gamma}, {self.friction}")

    @classmethod
    def behind_weak_link(cls, epsilon: float, J: float = 1.0, **kwargs) -> SingleSiteConfig:
        """Site coupled through a bond of strength eps*J to a chaotic bath."""
        return cls(drive_strength=0.5 * epsilon * J, **kwargs)


@dataclass(eq=False)
class SingleSitePath:
    """Sampled amplitudes; ``a`` has shape (n_times, n_realizations)."""

    times: np.ndarray
    a: np.ndarray

    @property
    def occupations(self) -> np.ndarray:
        return self.a.real**2 + self.a.imag**2

    @property
    def mean_occupation(self) -> np.ndarray:
        return self.occupations.mean(axis=1)

    def after(self, t_min: float) -> SingleSitePath:
        keep = self.times >= t_min
        return SingleSitePath(times=self.times[keep], a=self.a[keep])


@dataclass(eq=False)
class StationaryTestReport:
    """Outcome of the isotropic complex Gaussian check."""

    passed: bool
    n_samples: int
    n_effective: float
    mean: complex
    var_re: float
    var_im: float
    occupation_mean: float
    moment_ratio: float
    sigma2_expected: float | None = None
    relative_error: float | None = None
    problems: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def _complex_normal(stream: np.random.Generator, n: int) -> np.ndarray:
    eta = stream.standard_normal((n, 2))
    return (eta[:, 0] + 1j * eta[:, 1]) / math.sqrt(2.0)


def _ou_filter(innovations: np.ndarray, start: np.ndarray, rho: float) -> np.ndarray:
    """xi_{k+1} = rho xi_k + innovation_k along the last axis, from *start*."""
    zi = (rho * np.asarray(start, dtype=complex))[..., np.newaxis]
    out, _ = lfilter([1.0], [1.0, -rho], innovations, axis=-1, zi=zi)
    return out


def ou_path(ocfg: OUProcessConfig, n_steps: int, index: int = 0) -> np.ndarray:
    """Exact discretization of the complex OU process: ``n_steps + 1`` values.

    xi_0 is drawn from the stationary law, so the whole path is stationary.
    """
    if n_steps < 0:
        raise StochasticConfigError(f"n_steps must be >= 0, got {n_steps}")
    stream = trajectory_stream(ocfg.seed, index)
    xi0 = math.sqrt(ocfg.A) * _complex_normal(stream, 1)[0]
    if n_steps == 0:
        return np.array([xi0])
    innovations = ocfg.innovation_scale * _complex_normal(stream, n_steps)
    rest = _ou_filter(innovations, np.array(xi0), ocfg.decay)
    return np.concatenate(([xi0], rest))


class _OUNoise:
    """Per-realization OU streams delivered in blocks of steps.

    Realization r reproduces ``ou_path(ocfg, n, index=r)`` value by value.
    """

    def __init__(self, ocfg: OUProcessConfig, n_real: int) -> None:
        self.ocfg = ocfg
        self.streams = [trajectory_stream(ocfg.seed, r) for r in range(n_real)]
        self.xi = np.array([math.sqrt(ocfg.A) * _complex_normal(s, 1)[0] for s in self.streams])

    def block(self, m: int) -> np.ndarray:
        """Values for the next *m* steps, shape (m, n_real)."""
        innovations = np.stack([self.ocfg.innovation_scale * _complex_normal(s, m) for s in self.streams])
        nxt = _ou_filter(innovations, self.xi, self.ocfg.decay)
        values = np.concatenate((self.xi[:, np.newaxis], nxt[:, :-1]), axis=1)
        self.xi = nxt[:, -1]
        return values.T


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def propagate_single_site(
    a0,
    scfg: SingleSiteConfig,
    ocfg: OUProcessConfig,
    t_final: float,
    sample_every: float | None = None,
) -> SingleSitePath:
    """Integrate the driven oscillator with RK4 and step-wise constant noise.

    *a0* is a complex number or a sequence of them, one per independent
    noise realization.

    Raises:
        BlowUpError: If any realization leaves the physical range.
    """
    a = np.atleast_1d(np.asarray(a0, dtype=complex)).copy()
    h = ocfg.step
    sample_every = h if sample_every is None else sample_every
    steps_per_sample = round(sample_every / h)
    n_samples = round(t_final / (steps_per_sample * h))
    if steps_per_sample < 1 or n_samples < 1:
        raise StochasticConfigError(
            f"t_final ({t_final}) and sample_every ({sample_every}) must cover at least one step of {h}"
        )

    damping = scfg.gamma + scfg.friction
    drive = scfg.drive_strength

    noise = _OUNoise(ocfg, a.size)
    refill = steps_per_sample * max(1, _NOISE_BLOCK_VALUES // (a.size * steps_per_sample))
    buffer = noise.block(refill)
    cursor = 0

    times = np.arange(n_samples + 1) * (steps_per_sample * h)
    out = np.empty((n_samples + 1, a.size), dtype=complex)
    out[0] = a
    for k in range(1, n_samples + 1):
        for _ in range(steps_per_sample):
            if cursor == refill:
                buffer = noise.block(refill)
                cursor = 0
            xi = buffer[cursor]
            cursor += 1

            def f(x: np.ndarray, xi=xi) -> np.ndarray:
                return -1j * (scfg.omega * x + scfg.g * (x.real**2 + x.imag**2) * x - drive * xi) - damping * x

            a = rk4_step(f, a, h)
        n = a.real**2 + a.imag**2
        if not np.all(np.isfinite(n) & (n <= BLOWUP_OCCUPATION)):
            raise BlowUpError(f"single-site amplitude blow-up at t={times[k]:.6g}", time=float(times[k]))
        out[k] = a
    return SingleSitePath(times=times, a=out)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def diffusion_constant(epsilon: float, J: float, tau: float) -> float:
    """D = eps^2 J^2 tau / 2."""
    return 0.5 * epsilon**2 * J**2 * tau


def stationary_occupation(epsilon: float, J: float, tau: float, gamma: float) -> float:
    """Stationary relative occupation ``eps^2 J^2 tau / (2 gamma)`` of a site behind a weak link."""
    if gamma <= 0:
        raise UndefinedStationaryStateError(f"no stationary occupation without damping (gamma={gamma})")
    return diffusion_constant(epsilon, J, tau) / gamma


def quasi_stationary_occupation(n_neighbor, J: float, tau: float, gamma: float):
    """Plateau ``J^2 n_neighbor tau / (2 gamma)`` of the lossy site in a full lattice.

    *n_neighbor* may be an array; the result then has the same shape.
    """
    if gamma <= 0:
        raise UndefinedStationaryStateError(f"no quasi-stationary occupation without damping (gamma={gamma})")
    value = J**2 * np.asarray(n_neighbor, dtype=float) * tau / (2.0 * gamma)
    return float(value) if value.ndim == 0 else value


def occupation_growth_slope(path: SingleSitePath, t_min: float = 0.0) -> float:
    """Slope of the realization-mean occupation against time for t >= t_min."""
    tail = path.after(t_min)
    if tail.times.size < 3:
        raise InsufficientSamplesError(f"need >= 3 samples after t={t_min}, got {tail.times.size}")
    slope, _ = np.polyfit(tail.times, tail.mean_occupation, 1)
    return float(slope)


def burn_in(gamma: float) -> float:
    """Transient discarded before stationary averages."""
    if gamma <= 0:
        raise UndefinedStationaryStateError("burn-in is defined only for gamma > 0")
    return 10.0 / gamma


# ---------------------------------------------------------------------------
# Stationary Gaussian test
# ---------------------------------------------------------------------------


def _integrated_autocorrelation(x: np.ndarray) -> float:
    """Integrated autocorrelation time (in samples) of columns of *x*, summed to the first non-positive lag."""
    y = x - x.mean(axis=0)
    var = float(np.mean(y * y))
    if var == 0.0:
        return 1.0
    tau_int = 1.0
    for lag in range(1, x.shape[0] // 4):
        rho = float(np.mean(y[lag:] * y[:-lag])) / var
        if rho <= 0.0:
            break
        tau_int += 2.0 * rho
    return tau_int


def stationary_distribution_test(
    path: SingleSitePath,
    sigma2_expected: float | None = None,
    tolerance: float = 0.1,
    moment_tolerance: float = 0.15,
    min_effective: float = MIN_EFFECTIVE_SAMPLES,
) -> StationaryTestReport:
    """Check that the sampled amplitudes form an isotropic complex Gaussian.

    The path should already exclude the burn-in. *sigma2_expected* is the
    expected mean occupation ``<|a|^2>``; each quadrature then has variance
    ``sigma2_expected / 2``. For an isotropic Gaussian ``|a|^2`` is
    exponentially distributed, so ``<|a|^4> / <|a|^2>^2`` equals 2.
    """
    if path.a.shape[0] < 10:
        raise InsufficientSamplesError(f"need >= 10 time samples, got {path.a.shape[0]}")
    a = path.a
    occ = path.occupations
    n_samples = a.size
    n_eff = n_samples / _integrated_autocorrelation(occ)
    occ_mean = float(occ.mean())
    var_re = float(a.real.var())
    var_im = float(a.imag.var())
    mean = complex(a.mean())
    problems: list[str] = []

    if occ_mean <= 0.0 or var_re + var_im <= 1e-300:
        problems.append("degenerate distribution (no fluctuations)")
        ratio = float("nan")
    else:
        ratio = float(np.mean(occ * occ)) / occ_mean**2
        if n_eff < min_effective:
            problems.append(f"only {n_eff:.0f} effectively independent samples (need {min_effective:.0f})")
        spread = math.sqrt(0.5 * (var_re + var_im))
        if abs(mean) > 5.0 * spread / math.sqrt(n_eff):
            problems.append(f"mean {mean:.3g} is not zero")
        if abs(var_re - var_im) > tolerance * 0.5 * (var_re + var_im):
            problems.append(f"quadrature variances differ: {var_re:.4g} vs {var_im:.4g}")
        if abs(ratio - 2.0) > 2.0 * moment_tolerance:
            problems.append(f"<|a|^4>/<|a|^2>^2 = {ratio:.3f}, exponential occupations give 2")

    relative_error = None
    if sigma2_expected is not None:
        relative_error = abs(occ_mean - sigma2_expected) / sigma2_expected
        if relative_error > tolerance:
            problems.append(f"<|a|^2> = {occ_mean:.4g} differs from {sigma2_expected:.4g} by {relative_error:.1%}")

    if problems:
        logger.debug("Stationary test failed: %s", "; ".join(problems))
    return StationaryTestReport(
        passed=not problems,
        n_samples=n_samples,
        n_effective=n_eff,
        mean=mean,
        var_re=var_re,
        var_im=var_im,
        occupation_mean=occ_mean,
        moment_ratio=ratio,
        sigma2_expected=sigma2_expected,
        relative_error=relative_error,
        problems=problems,
    )
