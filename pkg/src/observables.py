"""
Observables Module
==================

Post-processing of ensemble results and trajectories: depleted-atom count,
bath (neighbour-sum) autocorrelation with its exponential fit, depletion
front tracking with power-law fits, steady-current and plateau checks.

All functions are pure; nothing here propagates trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import EnsembleResult
from .integrator import TrajectoryRecord
from .lattice_model import Boundary, LatticeConfig, neighbor_sum
from .stochastic_site import quasi_stationary_occupation

logger = logging.getLogger(__name__)

DEPLETION_THRESHOLD = 0.5
THRESHOLD_RANGE = (0.3, 0.4, 0.5, 0.6, 0.7)
BOOTSTRAP_RESAMPLES = 200
MIN_FIT_LAGS = 5
NEIGHBOR_LEVEL = 0.8


class ObservableError(Exception):
    """Base exception for observables."""


class StorageModeError(ObservableError):
    """Raised when complex amplitudes are needed but only occupations were stored."""


class FitError(ObservableError):
    """Raised when a fit has too few usable points."""


class ScalingWindowError(ObservableError):
    """Raised when the depletion front never spans a scaling window."""


@dataclass(eq=False)
class CorrelationEstimate:
    """Autocorrelation ``C(lag)`` of a complex series ensemble plus its exponential fit.

    ``n_samples`` is the number of products averaged at lag 0 (0 for
    noiseless synthetic input). ``duration`` is the time span of the
    analysed window.
    """

    lags: np.ndarray
    C: np.ndarray
    A_fit: float | None = None
    tau_fit: float | None = None
    fit_window: tuple[float, float] | None = None
    residual: float | None = None
    n_samples: int = 0
    duration: float = math.inf
    warnings: list[str] = field(default_factory=list)


@dataclass(eq=False)
class FrontFit:
    """Depleted-site count against time and its power-law fit."""

    times: np.ndarray
    depleted_count: np.ndarray
    exponent: float
    prefactor: float
    fit_window: tuple[float, float]
    exponent_err: float = math.nan
    threshold: float = DEPLETION_THRESHOLD
    residual: float = 0.0


@dataclass(eq=False)
class SteadyCurrent:
    """Linear fit of N(t) over the end of a run."""

    slope: float
    intercept: float
    r2: float
    steady: bool
    fit_window: tuple[float, float]
    message: str = ""


@dataclass(eq=False)
class PlateauClosure:
    """Measured lossy-site occupation against the quasi-stationary prediction."""

    times: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    mask: np.ndarray
    max_relative_error: float

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.measured / self.predicted


def _dissipation_site(result: EnsembleResult, site: int | None) -> int:
    if site is not None:
        return site
    try:
        return int(result.meta["lattice"]["dissipation_site"])
    except (KeyError, TypeError):
        return result.L // 2


def _neighbour_sites(result: EnsembleResult, d: int) -> list[int]:
    """Chain neighbours of *d*; an open chain has one neighbour at each end."""
    try:
        open_chain = Boundary(result.meta["lattice"]["boundary"]) is Boundary.OPEN
    except (KeyError, TypeError, ValueError):
        open_chain = False
    if open_chain:
        return [l for l in (d - 1, d + 1) if 0 <= l < result.L]
    return [(d - 1) % result.L, (d + 1) % result.L]


# ---------------------------------------------------------------------------
# Depleted atoms and the bath series
# ---------------------------------------------------------------------------


def depleted_total(result: EnsembleResult, nbar: float) -> np.ndarray:
    """N(t) = nbar * sum_l (1 - n_l(t))."""
    return nbar * np.sum(1.0 - result.n, axis=1)


def xi_series(trajectory: TrajectoryRecord, l: int, cfg: LatticeConfig | None = None) -> np.ndarray:
    """Neighbour sum ``a_{l+1} + a_{l-1}`` of one trajectory, per sample.

    Without *cfg* the chain is taken as periodic.
    """
    if trajectory.amplitudes is None:
        raise StorageModeError("xi_series needs a trajectory recorded with store_amplitudes=True")
    L = trajectory.amplitudes.shape[-1]
    if cfg is None:
        cfg = LatticeConfig(L=L)
    return neighbor_sum(trajectory.amplitudes, l, cfg)


def stationary_window(result: EnsembleResult, site: int | None = None, tolerance: float = 0.1) -> int:
    """Number of leading samples during which the neighbours of *site* stay within *tolerance* of their start."""
    d = _dissipation_site(result, site)
    neighbours = result.n[:, _neighbour_sites(result, d)]
    ok = np.all(np.abs(neighbours - neighbours[0]) <= tolerance * neighbours[0], axis=1)
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else len(ok)


# ---------------------------------------------------------------------------
# Autocorrelation
# ---------------------------------------------------------------------------


def autocorrelation(
    series: np.ndarray,
    max_lag: int,
    dt: float = 1.0,
    expected_tau: float | None = None,
) -> CorrelationEstimate:
    """Ensemble and time averaged ``C(lag) = <xi(t + lag) xi*(t)>``.

    *series* has shape (n_series, n_times) or (n_times,). Lags are in
    samples; ``dt`` converts them to time.
    """
    x = np.atleast_2d(np.asarray(series, dtype=complex))
    n_times = x.shape[1]
    if max_lag < 1 or max_lag >= n_times:
        raise ObservableError(f"max_lag must lie in [1, {n_times - 1}], got {max_lag}")
    C = np.empty(max_lag + 1, dtype=complex)
    for lag in range(max_lag + 1):
        C[lag] = np.mean(x[:, lag:] * np.conj(x[:, : n_times - lag]))
    C[0] = C[0].real
    duration = (n_times - 1) * dt
    estimate = CorrelationEstimate(
        lags=np.arange(max_lag + 1) * dt,
        C=C,
        n_samples=x.size,
        duration=duration,
    )
    if expected_tau is not None and duration < 10.0 * expected_tau:
        estimate.warnings.append(f"window {duration:.3g} is shorter than 10 correlation times ({expected_tau:.3g})")
        logger.warning("Autocorrelation window %.3g shorter than 10 tau (%.3g)", duration, expected_tau)
    return estimate


def generate_exponential(lags, A: float, tau: float) -> CorrelationEstimate:
    """Noiseless ``A exp(-lag / tau)`` as a correlation estimate."""
    lags = np.asarray(lags, dtype=float)
    return CorrelationEstimate(lags=lags, C=(A * np.exp(-lags / tau)).astype(complex))


def fit_exponential(corr: CorrelationEstimate) -> tuple[float, float, float]:
    """Weighted least squares of ln|C| against lag; returns (A, tau, residual).

    Uses the leading lags where ``|C| > max(3 * noise floor, 0.05 * C(0))``,
    the noise floor being ``C(0) / sqrt(n_samples)``. The fit is also
    stored on *corr*.
    """
    c0 = float(corr.C[0].real)
    if c0 <= 0:
        raise FitError(f"C(0) must be > 0, got {c0}")
    magnitude = np.abs(corr.C)
    noise_floor = c0 / math.sqrt(corr.n_samples) if corr.n_samples else 0.0
    cutoff = max(3.0 * noise_floor, 0.05 * c0)
    below = np.flatnonzero(magnitude <= cutoff)
    n_use = int(below[0]) if below.size else len(magnitude)
    if n_use < MIN_FIT_LAGS:
        raise FitError(f"only {n_use} usable lags above {cutoff:.3g} (need {MIN_FIT_LAGS})")

    lags = corr.lags[:n_use]
    y = np.log(magnitude[:n_use])
    w = magnitude[:n_use]
    slope, intercept = np.polyfit(lags, y, 1, w=w)
    if slope >= 0:
        raise FitError(f"correlation does not decay (slope {slope:.3g})")
    fitted = intercept + slope * lags
    residual = float(np.sqrt(np.sum((w * (y - fitted)) ** 2) / np.sum(w * w)))

    corr.A_fit = float(math.exp(intercept))
    corr.tau_fit = float(-1.0 / slope)
    corr.fit_window = (float(lags[0]), float(lags[-1]))
    corr.residual = residual
    if corr.duration < 10.0 * corr.tau_fit:
        corr.warnings.append(f"window {corr.duration:.3g} is shorter than 10 fitted correlation times")
    return corr.A_fit, corr.tau_fit, residual


# ---------------------------------------------------------------------------
# Depletion front
# ---------------------------------------------------------------------------


def fit_power_law(t, y) -> tuple[float, float, float]:
    """Least squares of ln y against ln t; returns (prefactor, exponent, residual)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (t > 0) & (y > 0)
    if keep.sum() < 2:
        raise FitError(f"power-law fit needs >= 2 positive points, got {int(keep.sum())}")
    lt, ly = np.log(t[keep]), np.log(y[keep])
    exponent, log_prefactor = np.polyfit(lt, ly, 1)
    residual = float(np.sqrt(np.mean((ly - (log_prefactor + exponent * lt)) ** 2)))
    return float(math.exp(log_prefactor)), float(exponent), residual


def _front_points(times: np.ndarray, count: np.ndarray, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """(time, count) at every new maximum of the count, restricted to lo <= count <= hi."""
    record = np.maximum.accumulate(count)
    rises = np.flatnonzero(np.diff(record, prepend=-1) > 0)
    t, c = times[rises], record[rises]
    keep = (c >= lo) & (c <= hi) & (t > 0)
    return t[keep], c[keep].astype(float)


def _front_exponent(times: np.ndarray, n: np.ndarray, threshold: float) -> tuple[float, float, float, tuple[float, float]]:
    L = n.shape[1]
    count = np.sum(n < threshold, axis=1)
    if count.max() <= 3:
        raise ScalingWindowError(f"depleted count never exceeds 3 (max {int(count.max())}) at threshold {threshold}")
    t, c = _front_points(times, count, 3, L - 4)
    if t.size < 3:
        raise ScalingWindowError(f"only {t.size} front advances inside 3 <= count <= {L - 4}")
    prefactor, exponent, residual = fit_power_law(t, c)
    return prefactor, exponent, residual, (float(t[0]), float(t[-1]))


def depletion_front(
    result: EnsembleResult,
    threshold: float = DEPLETION_THRESHOLD,
    n_boot: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> FrontFit:
    """Count sites below *threshold* and fit the front's power law.

    The fit uses the times at which the count first reaches each new value
    inside ``3 <= count <= L - 4``. The error bar is the bootstrap spread
    over trajectory groups (``result.group_means``); without groups it is NaN.
    """
    count = np.sum(result.n < threshold, axis=1)
    prefactor, exponent, residual, window = _front_exponent(result.times, result.n, threshold)

    err = math.nan
    groups = result.group_means
    if groups is not None and len(groups) >= 2 and n_boot > 0:
        rng = np.random.default_rng(seed)
        samples = []
        for _ in range(n_boot):
            pick = rng.integers(0, len(groups), size=len(groups))
            try:
                samples.append(_front_exponent(result.times, groups[pick].mean(axis=0), threshold)[1])
            except (ScalingWindowError, FitError):
                continue
        if len(samples) >= n_boot // 2:
            err = float(np.std(samples, ddof=1))
        else:
            logger.warning("Only %d of %d bootstrap resamples had a scaling window", len(samples), n_boot)
    else:
        logger.debug("No trajectory groups on the result; front exponent has no error bar")

    return FrontFit(
        times=result.times,
        depleted_count=count,
        exponent=exponent,
        prefactor=prefactor,
        fit_window=window,
        exponent_err=err,
        threshold=threshold,
        residual=residual,
    )


def threshold_sensitivity(result: EnsembleResult, thresholds=THRESHOLD_RANGE) -> dict[float, float]:
    """Front exponent per threshold (NaN where no scaling window exists)."""
    exponents = {}
    for threshold in thresholds:
        try:
            exponents[float(threshold)] = _front_exponent(result.times, result.n, threshold)[1]
        except (ScalingWindowError, FitError) as e:
            logger.warning("Threshold %.2f: %s", threshold, e)
            exponents[float(threshold)] = math.nan
    return exponents


# ---------------------------------------------------------------------------
# Steady current and plateau
# ---------------------------------------------------------------------------


def steady_current_check(
    result: EnsembleResult,
    nbar: float,
    fraction: float = 1.0 / 3.0,
    min_r2: float = 0.95,
) -> SteadyCurrent:
    """Linear fit of N(t) over the final *fraction* of the run."""
    N = depleted_total(result, nbar)
    start = result.times[-1] * (1.0 - fraction)
    keep = result.times >= start
    if keep.sum() < 3:
        raise FitError(f"need >= 3 samples in the final {fraction:.0%} of the run")
    t, y = result.times[keep], N[keep]
    slope, intercept = np.polyfit(t, y, 1)
    ss_res = float(np.sum((y - (intercept + slope * t)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    steady = r2 >= min_r2
    message = "" if steady else f"no steady state reached (R^2 = {r2:.3f} < {min_r2})"
    if message:
        logger.info(message)
    return SteadyCurrent(
        slope=float(slope),
        intercept=float(intercept),
        r2=float(r2),
        steady=steady,
        fit_window=(float(t[0]), float(t[-1])),
        message=message,
    )


def neighbour_mean(result: EnsembleResult, site: int | None = None) -> np.ndarray:
    """Mean occupation of the chain neighbours of *site* (the lossy site by default), per sample."""
    d = _dissipation_site(result, site)
    return result.n[:, _neighbour_sites(result, d)].mean(axis=1)


def plateau_closure(
    result: EnsembleResult,
    tau: float,
    gamma: float,
    J: float = 1.0,
    site: int | None = None,
    level: float = NEIGHBOR_LEVEL,
    t_settle: float | None = None,
) -> PlateauClosure:
    """Compare the lossy-site occupation with ``J^2 n_neighbour tau / (2 gamma)``.

    Only samples after *t_settle* (default ``1 / gamma``) with the mean
    neighbour occupation above *level* enter ``max_relative_error``.
    """
    d = _dissipation_site(result, site)
    t_settle = 1.0 / gamma if t_settle is None else t_settle
    neighbours = neighbour_mean(result, d)
    predicted = quasi_stationary_occupation(neighbours, J, tau, gamma)
    measured = result.n[:, d]
    mask = (result.times >= t_settle) & (neighbours > level)
    if mask.any():
        error = float(np.max(np.abs(measured[mask] / predicted[mask] - 1.0)))
    else:
        logger.warning("No samples with neighbours above %.2f after t=%.3g", level, t_settle)
        error = math.nan
    return PlateauClosure(
        times=result.times,
        measured=measured,
        predicted=predicted,
        mask=mask,
        max_relative_error=error,
    )


def neighbor_depletion_time(result: EnsembleResult, level: float = NEIGHBOR_LEVEL, site: int | None = None) -> float:
    """First time the mean occupation of the lossy site's neighbours drops below *level* (inf if never)."""
    d = _dissipation_site(result, site)
    below = np.flatnonzero(neighbour_mean(result, d) < level)
    return float(result.times[below[0]]) if below.size else math.inf
