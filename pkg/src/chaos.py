"""
Chaos Module
============

Chaos diagnostics of the closed chain (gamma = 0):

- Benettin estimates of the largest Lyapunov exponent, single and scanned
  over uniform phase-space samples
- the Monte Carlo energy-shell volume histogram
- the catalog of nonlinear Bloch waves with their stability flags, and
  numerical checks of those exact solutions
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ensembles import trajectory_stream
from .integrator import IntegratorConfig, propagate_batch, propagate_tangent_batch
from .lattice_model import Boundary, LatticeConfig, TrajectoryState, abs2, bloch_wave_state, check_dimension, energy

logger = logging.getLogger(__name__)

# Regular/chaotic split in units of J
REGULAR_THRESHOLD = 0.05
DEFAULT_T = 200.0
DEFAULT_RENORM_INTERVAL = 1.0
DEFAULT_BINS = 50
CONVERGENCE_SPREAD = 0.2


class ChaosError(Exception):
    """Base exception for chaos diagnostics."""


class ClosedSystemRequiredError(ChaosError):
    """Raised when a closed-system diagnostic is asked for gamma > 0."""


class BlochCatalogError(ChaosError):
    """Raised when Bloch waves are requested for a lattice that has none in closed form."""


@dataclass(eq=False)
class LyapunovResult:
    """Benettin estimate of the largest Lyapunov exponent.

    ``history`` holds the running estimate after each renormalization that
    follows the transient; ``spread`` is the max-min range of its last
    quartile. ``converged`` is False when that spread exceeds 20% of the
    estimate while the estimate itself is above the regular threshold.
    """

    lambda_: float
    history: np.ndarray
    T: float
    renorm_interval: float
    transient: float = 0.0
    spread: float = 0.0
    converged: bool = True
    retries: int = 0


@dataclass(eq=False)
class ShellHistogram:
    """Relative phase-space volume per energy bin (sums to 1)."""

    edges: np.ndarray
    volume: np.ndarray
    n_samples: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def stderr(self) -> np.ndarray:
        """Binomial Monte Carlo standard error of each bin's mass."""
        return np.sqrt(self.volume * (1.0 - self.volume) / self.n_samples)


@dataclass(frozen=True)
class BlochWave:
    k: int
    kappa: float
    energy: float
    stable: bool


class ScanPoint(NamedTuple):
    energy: float
    lambda_: float
    converged: bool


def _require_closed(cfg: LatticeConfig) -> None:
    if cfg.gamma != 0.0:
        raise ClosedSystemRequiredError(f"chaos diagnostics need gamma = 0, got {cfg.gamma}")


def _random_tangents(stream: np.random.Generator, n: int, L: int) -> np.ndarray:
    z = stream.standard_normal((n, 2, L))
    da = z[:, 0] + 1j * z[:, 1]
    return da / np.sqrt(np.sum(abs2(da), axis=-1, keepdims=True))


def _summarise(log_growth: np.ndarray, renorm_interval: float, T: float, skip: int, threshold: float) -> LyapunovResult:
    kept = log_growth[skip:]
    elapsed = renorm_interval * np.arange(1, len(kept) + 1)
    history = np.cumsum(kept) / elapsed
    lam = float(history[-1])
    tail = history[-max(1, len(history) // 4) :]
    spread = float(tail.max() - tail.min())
    converged = not (spread > CONVERGENCE_SPREAD * abs(lam) and lam > threshold)
    return LyapunovResult(
        lambda_=lam,
        history=history,
        T=T,
        renorm_interval=renorm_interval,
        transient=skip * renorm_interval,
        spread=spread,
        converged=converged,
    )


def _benettin_batch(
    a0: np.ndarray,
    da0: np.ndarray,
    cfg: LatticeConfig,
    T: float,
    renorm_interval: float,
    step: float,
    transient: float,
) -> list[LyapunovResult]:
    skip = round(transient / renorm_interval)
    n_intervals = round(T / renorm_interval)
    if skip >= n_intervals:
        raise ChaosError(f"transient ({transient}) must be shorter than T ({T})")
    out = propagate_tangent_batch(a0, da0, cfg, step=step, t_final=T, renorm_interval=renorm_interval)
    threshold = REGULAR_THRESHOLD * cfg.J
    results = [_summarise(out.log_growth[:, row], renorm_interval, T, skip, threshold) for row in range(a0.shape[0])]
    if out.retries:
        for r in results:
            r.retries = out.retries
    return results


def lyapunov_exponent(
    initial: TrajectoryState,
    cfg: LatticeConfig,
    T: float = DEFAULT_T,
    renorm_interval: float = DEFAULT_RENORM_INTERVAL,
    stream: np.random.Generator | None = None,
    step: float = 1.0e-3,
    transient: float = 0.0,
) -> LyapunovResult:
    """Largest Lyapunov exponent of the trajectory starting at *initial*.

    The initial tangent is a random unit vector drawn from *stream*.
    Non-convergence is flagged on the result and logged, never raised.
    """
    _require_closed(cfg)
    check_dimension(initial.a, cfg)
    if T < 2 * renorm_interval:
        raise ChaosError(f"T ({T}) must span several renormalization intervals ({renorm_interval})")
    stream = trajectory_stream(0, 0) if stream is None else stream
    da0 = _random_tangents(stream, 1, cfg.L)
    result = _benettin_batch(initial.a[np.newaxis, :], da0, cfg, T, renorm_interval, step, transient)[0]
    if not result.converged:
        logger.warning(
            "Lyapunov estimate %.4g not converged (last-quartile spread %.3g)", result.lambda_, result.spread
        )
    return result


def _scan_chunk(task: tuple[np.ndarray, np.ndarray, LatticeConfig, float, float, float, float]) -> list[LyapunovResult]:
    a0, da0, cfg, T, renorm_interval, step, transient = task
    return _benettin_batch(a0, da0, cfg, T, renorm_interval, step, transient)


def draw_hypersphere_batch(stream: np.random.Generator, n: int, L: int) -> np.ndarray:
    """*n* uniform samples of the sphere sum |a_l|^2 = L, shape (n, L)."""
    z = stream.standard_normal((n, 2, L))
    norm = np.sum(z * z, axis=(1, 2))
    while np.any(norm == 0.0):
        bad = np.flatnonzero(norm == 0.0)
        z[bad] = stream.standard_normal((bad.size, 2, L))
        norm = np.sum(z * z, axis=(1, 2))
    a = z[:, 0] + 1j * z[:, 1]
    return a * np.sqrt(L / norm)[:, np.newaxis]


def draw_scan_sample(root_seed: int, index: int, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Initial state and unit tangent of scan sample *index*, both of shape (L,)."""
    stream = trajectory_stream(root_seed, index)
    a0 = draw_hypersphere_batch(stream, 1, L)[0]
    da0 = _random_tangents(stream, 1, L)[0]
    return a0, da0


def lyapunov_scan(
    n_samples: int,
    cfg: LatticeConfig,
    T: float = DEFAULT_T,
    root_seed: int = 0,
    renorm_interval: float = DEFAULT_RENORM_INTERVAL,
    step: float = 1.0e-3,
    transient: float = 0.0,
    workers: int = 1,
    chunk_size: int = 50,
) -> list[ScanPoint]:
    """(energy, lambda) pairs for uniform-hypersphere initial conditions.

    Sample *i* draws its state and tangent from its own stream keyed on
    ``(root_seed, i)``; the output depends neither on *workers* nor on
    *n_samples* for the samples both runs share.
    """
    _require_closed(cfg)
    if n_samples < 1:
        raise ChaosError(f"n_samples must be >= 1, got {n_samples}")
    draws = [draw_scan_sample(root_seed, i, cfg.L) for i in range(n_samples)]
    a0 = np.stack([a for a, _ in draws])
    da0 = np.stack([da for _, da in draws])
    energies = energy(a0, cfg)

    tasks = [
        (a0[s : s + chunk_size], da0[s : s + chunk_size], cfg, T, renorm_interval, step, transient)
        for s in range(0, n_samples, chunk_size)
    ]
    logger.info("Lyapunov scan: %d samples, T=%g, %d chunk(s), %d worker(s)", n_samples, T, len(tasks), workers)
    if workers == 1 or len(tasks) == 1:
        chunks = list(map(_scan_chunk, tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_scan_chunk, tasks))
    results = [r for chunk in chunks for r in chunk]

    not_converged = sum(not r.converged for r in results)
    if not_converged:
        logger.warning("%d of %d Lyapunov estimates flagged as not converged", not_converged, n_samples)
    return [ScanPoint(float(e), r.lambda_, r.converged) for e, r in zip(energies, results, strict=True)]


def energy_shell_histogram(
    n_samples: int,
    bins: int = DEFAULT_BINS,
    cfg: LatticeConfig | None = None,
    stream: np.random.Generator | None = None,
) -> ShellHistogram:
    """Monte Carlo estimate of the relative energy-shell volume.

    The bin range covers the sampled energies and, for a periodic lattice
    with uniform bonds, every Bloch-wave energy.
    """
    cfg = LatticeConfig() if cfg is None else cfg
    stream = trajectory_stream(0, 0) if stream is None else stream
    if n_samples < 100 * bins:
        logger.warning("Only %d samples for %d bins; expect noisy shell volumes", n_samples, bins)
    energies = energy(draw_hypersphere_batch(stream, n_samples, cfg.L), cfg)
    lo, hi = float(energies.min()), float(energies.max())
    try:
        bloch = [w.energy for w in bloch_wave_catalog(cfg)]
        lo, hi = min(lo, *bloch), max(hi, *bloch)
    except BlochCatalogError:
        pass
    counts, edges = np.histogram(energies, bins=bins, range=(lo, hi))
    return ShellHistogram(edges=edges, volume=counts / n_samples, n_samples=n_samples)


def bloch_wave_catalog(cfg: LatticeConfig) -> list[BlochWave]:
    """All L nonlinear Bloch waves with their closed-form energies."""
    if cfg.boundary is not Boundary.PERIODIC or any(b != 1.0 for b in cfg.bond_factors):
        raise BlochCatalogError("Bloch waves need a periodic lattice with uniform bonds")
    waves = []
    for k in range(cfg.L):
        kappa = 2.0 * math.pi * k / cfg.L
        if kappa > math.pi:
            kappa -= 2.0 * math.pi
        e = cfg.L * (cfg.omega - cfg.J * math.cos(kappa) + 0.5 * cfg.g)
        waves.append(BlochWave(k=k, kappa=kappa, energy=e, stable=abs(kappa) < 0.5 * math.pi))
    return waves


def _bloch_frequency(k: int, cfg: LatticeConfig) -> float:
    kappa = 2.0 * math.pi * k / cfg.L
    return cfg.omega - cfg.J * math.cos(kappa) + cfg.g


def _perturbed(k: int, cfg: LatticeConfig, perturbation: float) -> np.ndarray:
    a0 = bloch_wave_state(k, cfg).a
    if perturbation:
        rng = np.random.default_rng(0)
        direction = rng.normal(size=cfg.L) + 1j * rng.normal(size=cfg.L)
        a0 = a0 + perturbation * direction / np.sqrt(np.sum(abs2(direction)))
    return a0


def verify_bloch_wave(
    k: int,
    cfg: LatticeConfig,
    t_final: float = 10.0,
    step: float = 1.0e-3,
    perturbation: float = 0.0,
    sample_every: float = 0.1,
) -> float:
    """Max over sites and samples of |a_numeric - a_analytic| for Bloch wave *k*."""
    _require_closed(cfg)
    if cfg.boundary is not Boundary.PERIODIC:
        raise BlochCatalogError("Bloch waves need a periodic lattice")
    icfg = IntegratorConfig(step=step, sample_every=sample_every, t_final=t_final, store_amplitudes=True)
    batch = propagate_batch(_perturbed(k, cfg, perturbation), cfg, icfg)
    numeric = batch.amplitudes[:, 0, :]
    analytic = np.exp(-1j * _bloch_frequency(k, cfg) * batch.times)[:, np.newaxis] * bloch_wave_state(k, cfg).a
    deviation = float(np.max(np.abs(numeric - analytic)))
    logger.debug("Bloch wave k=%d: max deviation %.3e over t=%g", k, deviation, t_final)
    return deviation


def stability_growth(
    k: int,
    cfg: LatticeConfig,
    perturbation: float = 1.0e-6,
    t_final: float = 50.0,
    step: float = 1.0e-3,
) -> float:
    """Largest occupation deviation from 1, relative to *perturbation*.

    Occupations are phase blind, so a stable wave stays O(1) while an
    unstable one grows by many orders of magnitude.
    """
    _require_closed(cfg)
    icfg = IntegratorConfig(step=step, sample_every=0.5, t_final=t_final)
    batch = propagate_batch(_perturbed(k, cfg, perturbation), cfg, icfg)
    return float(np.max(np.abs(batch.occupations[:, 0, :] - 1.0)) / perturbation)


# ---------------------------------------------------------------------------
# Summary helpers
# ---------------------------------------------------------------------------


def classify_regular(lambdas, threshold: float = REGULAR_THRESHOLD) -> np.ndarray:
    """True where an estimate lies below the regular/chaotic threshold."""
    return np.asarray(lambdas, dtype=float) < threshold


def middle_tercile_fraction(energies, lambdas, threshold: float = REGULAR_THRESHOLD) -> float:
    """Fraction of the middle energy tercile with lambda above *threshold*."""
    e = np.asarray(energies, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    lo, hi = np.quantile(e, [1.0 / 3.0, 2.0 / 3.0])
    middle = (e >= lo) & (e <= hi)
    if not middle.any():
        return float("nan")
    return float(np.mean(lam[middle] > threshold))


def edge_regular_fraction(
    energies, lambdas, threshold: float = REGULAR_THRESHOLD, fraction: float = 0.02
) -> tuple[float, float]:
    """Regular fraction among the lowest and the highest *fraction* of energies."""
    e = np.asarray(energies, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    order = np.argsort(e, kind="stable")
    n = max(1, int(round(fraction * e.size)))
    low = lam[order[:n]]
    high = lam[order[-n:]]
    return float(np.mean(low < threshold)), float(np.mean(high < threshold))
