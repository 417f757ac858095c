"""
Integrator Module
=================

Fixed-step explicit Runge-Kutta (order 4) propagation of the lattice
equations of motion, optionally co-integrating a tangent vector for
Lyapunov bookkeeping.

All propagation is batched: a ``(B, L)`` array of initial amplitudes is
advanced in lock-step, each row independently. Single-trajectory entry
points wrap the batch kernels with ``B = 1``.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .lattice_model import (
    LatticeConfig,
    TangentState,
    TrajectoryState,
    abs2,
    check_dimension,
    lattice_rhs,
    lattice_tangent_rhs,
)

logger = logging.getLogger(__name__)

BLOWUP_OCCUPATION = 1.0e6
TANGENT_NORM_RANGE = (1.0e-150, 1.0e150)
MAX_TANGENT_RETRIES = 30


class IntegrationError(Exception):
    """Base exception for integrator errors."""


class IntegratorConfigError(IntegrationError):
    """Raised for inconsistent step / sampling / end-time settings."""


class BlowUpError(IntegrationError):
    """Raised when an amplitude becomes non-finite or exceeds the blow-up guard."""

    def __init__(self, message: str, time: float, site: int | None = None) -> None:
        super().__init__(message)
        self.time = time
        self.site = site


class TangentRangeError(IntegrationError):
    """Raised when the tangent norm cannot be kept in range even after shrinking the interval."""


def _as_multiple(value: float, unit: float, what: str) -> int:
    n = round(value / unit)
    if n < 1 or abs(n * unit - value) > 1e-9 * max(value, unit):
        raise IntegratorConfigError(f"{what} ({value}) must be a positive integer multiple of {unit}")
    return n


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    Args:
        step: Time step h (units of 1/J).
        sample_every: Output interval; integer multiple of ``step``.
        t_final: End time; integer multiple of ``sample_every``.
        store_amplitudes: Keep complex amplitudes in the record. Otherwise
            only the occupations ``|a_l|^2`` are stored.
    """

    step: float = 1.0e-3
    sample_every: float = 0.1
    t_final: float = 10.0
    store_amplitudes: bool = False
    scheme: str = "rk4"

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise IntegratorConfigError(f"step must be > 0, got {self.step}")
        if self.t_final <= 0:
            raise IntegratorConfigError(f"t_final must be > 0, got {self.t_final}")
        if self.sample_every < self.step:
            raise IntegratorConfigError(f"sample_every ({self.sample_every}) must be >= step ({self.step})")
        if self.scheme != "rk4":
            raise IntegratorConfigError(f"only the 'rk4' scheme is available, got {self.scheme!r}")
        _as_multiple(self.sample_every, self.step, "sample_every")
        _as_multiple(self.t_final, self.sample_every, "t_final")

    @property
    def steps_per_sample(self) -> int:
        return _as_multiple(self.sample_every, self.step, "sample_every")

    @property
    def n_samples(self) -> int:
        return _as_multiple(self.t_final, self.sample_every, "t_final")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples + 1) * (self.steps_per_sample * self.step)


@dataclass(eq=False)
class TrajectoryRecord:
    """Sampled trajectory. ``occupations`` has shape (n_times, L)."""

    times: np.ndarray
    occupations: np.ndarray
    amplitudes: np.ndarray | None = None

    @property
    def final_state(self) -> TrajectoryState:
        if self.amplitudes is None:
            raise IntegrationError("final_state needs a record with stored amplitudes")
        return TrajectoryState(t=float(self.times[-1]), a=self.amplitudes[-1].copy())


@dataclass(eq=False)
class BatchRecord:
    """Sampled batch. Arrays have shape (n_times, B, L).

    ``failures`` maps the row index of every aborted trajectory to
    ``(time, message)``; aborted rows are zeroed from that sample on.
    """

    times: np.ndarray
    occupations: np.ndarray
    amplitudes: np.ndarray | None = None
    failures: dict[int, tuple[float, str]] = field(default_factory=dict)


def rk4_step(f: Callable[[np.ndarray], np.ndarray], a: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``da/dt = f(a)``."""
    k1 = f(a)
    k2 = f(a + (0.5 * h) * k1)
    k3 = f(a + (0.5 * h) * k2)
    k4 = f(a + h * k3)
    return a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_tangent_step(
    a: np.ndarray, da: np.ndarray, cfg: LatticeConfig, h: float
) -> tuple[np.ndarray, np.ndarray]:
    k1 = lattice_rhs(a, cfg)
    l1 = lattice_tangent_rhs(a, da, cfg)
    a2 = a + (0.5 * h) * k1
    d2 = da + (0.5 * h) * l1
    k2 = lattice_rhs(a2, cfg)
    l2 = lattice_tangent_rhs(a2, d2, cfg)
    a3 = a + (0.5 * h) * k2
    d3 = da + (0.5 * h) * l2
    k3 = lattice_rhs(a3, cfg)
    l3 = lattice_tangent_rhs(a3, d3, cfg)
    a4 = a + h * k3
    d4 = da + h * l3
    k4 = lattice_rhs(a4, cfg)
    l4 = lattice_tangent_rhs(a4, d4, cfg)
    return (
        a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
        da + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4),
    )


def _bad_rows(occupations: np.ndarray) -> np.ndarray:
    """Rows with any non-finite or runaway occupation."""
    return ~np.all(np.isfinite(occupations) & (occupations <= BLOWUP_OCCUPATION), axis=-1)


def propagate_batch(a0: np.ndarray, cfg: LatticeConfig, icfg: IntegratorConfig) -> BatchRecord:
    """Propagate a (B, L) batch of initial states; rows never interact.

    A row that blows up is recorded in ``failures`` and reset to the zero
    state (a fixed point) so the rest of the batch keeps running.
    """
    a = np.array(a0, dtype=complex, copy=True)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    check_dimension(a, cfg)

    def f(x: np.ndarray) -> np.ndarray:
        return lattice_rhs(x, cfg)

    times = icfg.times
    n_batch = a.shape[0]
    occupations = np.empty((len(times), n_batch, cfg.L))
    amplitudes = np.empty((len(times), n_batch, cfg.L), dtype=complex) if icfg.store_amplitudes else None
    failures: dict[int, tuple[float, str]] = {}

    occupations[0] = abs2(a)
    if amplitudes is not None:
        amplitudes[0] = a
    for k in range(1, len(times)):
        for _ in range(icfg.steps_per_sample):
            a = rk4_step(f, a, icfg.step)
        n = abs2(a)
        bad = _bad_rows(n)
        if bad.any():
            for row in np.flatnonzero(bad):
                row = int(row)
                if row not in failures:
                    site = int(np.argmax(np.where(np.isfinite(n[row]), n[row], np.inf)))
                    message = f"amplitude blow-up at t={times[k]:.6g} on site {site}"
                    failures[row] = (float(times[k]), message)
                    logger.warning("Trajectory row %d: %s", row, message)
            a[bad] = 0.0
            n[bad] = 0.0
        occupations[k] = n
        if amplitudes is not None:
            amplitudes[k] = a
    return BatchRecord(times=times, occupations=occupations, amplitudes=amplitudes, failures=failures)


def propagate(initial: TrajectoryState, cfg: LatticeConfig, icfg: IntegratorConfig) -> TrajectoryRecord:
    """Propagate one trajectory from ``initial.t`` for ``icfg.t_final``.

    Raises:
        BlowUpError: If the trajectory leaves the physical range.
    """
    check_dimension(initial.a, cfg)
    batch = propagate_batch(initial.a[np.newaxis, :], cfg, icfg)
    if batch.failures:
        time, message = batch.failures[0]
        raise BlowUpError(message, time=initial.t + time)
    return TrajectoryRecord(
        times=initial.t + batch.times,
        occupations=batch.occupations[:, 0, :],
        amplitudes=None if batch.amplitudes is None else batch.amplitudes[:, 0, :],
    )


# ---------------------------------------------------------------------------
# Tangent propagation
# ---------------------------------------------------------------------------


def _tangent_norm(da: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(abs2(da), axis=-1))


def _advance_tangent(
    a: np.ndarray,
    da: np.ndarray,
    cfg: LatticeConfig,
    h: float,
    n_steps: int,
    depth: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Advance (a, da) by n_steps and renormalize da.

    Returns the new state, the unit tangent, ln of the growth per row and
    the number of interval halvings performed.
    """
    a_new, da_new = a, da
    for _ in range(n_steps):
        a_new, da_new = _rk4_tangent_step(a_new, da_new, cfg, h)
    norm = _tangent_norm(da_new)
    lo, hi = TANGENT_NORM_RANGE
    if np.all(np.isfinite(norm) & (norm > lo) & (norm < hi)):
        return a_new, da_new / norm[..., np.newaxis], np.log(norm), 0

    if n_steps < 2 or depth >= MAX_TANGENT_RETRIES:
        raise TangentRangeError(f"tangent norm left [{lo:g}, {hi:g}] within a single step of h={h}")
    logger.warning("Tangent norm out of range over %d steps; halving the renormalization interval", n_steps)
    first = n_steps // 2
    a_mid, da_mid, log1, r1 = _advance_tangent(a, da, cfg, h, first, depth + 1)
    a_end, da_end, log2, r2 = _advance_tangent(a_mid, da_mid, cfg, h, n_steps - first, depth + 1)
    return a_end, da_end, log1 + log2, r1 + r2 + 1


@dataclass(eq=False)
class TangentBatchResult:
    """Outcome of a batched tangent propagation.

    ``log_growth`` has shape (n_intervals, B): ln of the tangent growth
    over each renormalization interval.
    """

    times: np.ndarray
    occupations: np.ndarray
    log_growth: np.ndarray
    final_amplitudes: np.ndarray
    retries: int = 0


def propagate_tangent_batch(
    a0: np.ndarray,
    da0: np.ndarray,
    cfg: LatticeConfig,
    step: float,
    t_final: float,
    renorm_interval: float,
) -> TangentBatchResult:
    """Co-integrate trajectories and tangents, renormalizing every interval.

    Occupations are sampled at the renormalization boundaries.
    """
    a = np.array(a0, dtype=complex, copy=True)
    da = np.array(da0, dtype=complex, copy=True)
    if a.ndim == 1:
        a, da = a[np.newaxis, :], da[np.newaxis, :]
    check_dimension(a, cfg)
    check_dimension(da, cfg)
    steps_per_interval = _as_multiple(renorm_interval, step, "renorm_interval")
    n_intervals = _as_multiple(t_final, renorm_interval, "t_final")

    norm0 = _tangent_norm(da)
    if not np.all(norm0 > 0):
        raise IntegrationError("initial tangent must have a non-zero norm")
    da = da / norm0[..., np.newaxis]

    occupations = np.empty((n_intervals + 1, a.shape[0], cfg.L))
    occupations[0] = abs2(a)
    log_growth = np.empty((n_intervals, a.shape[0]))
    retries = 0
    for k in range(n_intervals):
        a, da, log_growth[k], r = _advance_tangent(a, da, cfg, step, steps_per_interval)
        retries += r
        n = abs2(a)
        if _bad_rows(n).any():
            t_fail = (k + 1) * steps_per_interval * step
            raise BlowUpError(f"amplitude blow-up at t={t_fail:.6g} during tangent propagation", time=t_fail)
        occupations[k + 1] = n
    if retries:
        logger.warning("Tangent propagation needed %d interval halvings", retries)
    times = np.arange(n_intervals + 1) * (steps_per_interval * step)
    return TangentBatchResult(
        times=times,
        occupations=occupations,
        log_growth=log_growth,
        final_amplitudes=a,
        retries=retries,
    )


def propagate_with_tangent(
    initial: TrajectoryState,
    tangent0: TangentState,
    cfg: LatticeConfig,
    icfg: IntegratorConfig,
    renorm_interval: float,
) -> tuple[TrajectoryRecord, np.ndarray]:
    """Propagate one trajectory with its tangent vector.

    Returns the record (sampled at every renormalization) and the sequence
    of ln(growth) values, one per interval. Their sum divided by the total
    time estimates the largest Lyapunov exponent.
    """
    check_dimension(initial.a, cfg)
    check_dimension(tangent0.da, cfg)
    result = propagate_tangent_batch(
        initial.a[np.newaxis, :],
        tangent0.da[np.newaxis, :],
        cfg,
        step=icfg.step,
        t_final=icfg.t_final,
        renorm_interval=renorm_interval,
    )
    record = TrajectoryRecord(
        times=initial.t + result.times,
        occupations=result.occupations[:, 0, :],
        amplitudes=None,
    )
    return record, result.log_growth[:, 0]


# ---------------------------------------------------------------------------
# Reference checks
# ---------------------------------------------------------------------------


def time_reversal_error(initial: TrajectoryState, cfg: LatticeConfig, icfg: IntegratorConfig) -> float:
    """Forward run, conjugate, forward run again, conjugate; max deviation from the start.

    Only meaningful for gamma = 0.
    """
    icfg_full = IntegratorConfig(
        step=icfg.step, sample_every=icfg.t_final, t_final=icfg.t_final, store_amplitudes=True
    )
    forward = propagate(initial, cfg, icfg_full)
    mirrored = TrajectoryState(t=0.0, a=np.conj(forward.amplitudes[-1]))
    back = propagate(mirrored, cfg, icfg_full)
    return float(np.max(np.abs(np.conj(back.amplitudes[-1]) - initial.a)))


def separation_rate(
    initial: TrajectoryState,
    cfg: LatticeConfig,
    delta: float,
    t_final: float,
    window: tuple[float, float],
    step: float = 1.0e-3,
    sample_every: float = 0.05,
    direction: np.ndarray | None = None,
) -> float:
    """Two-trajectory estimate of the local instability rate.

    Propagates ``initial`` and ``initial + delta * direction`` together and
    fits ln|a1(t) - a2(t)| against t inside ``window``.
    """
    check_dimension(initial.a, cfg)
    if direction is None:
        rng = np.random.default_rng(0)
        direction = rng.normal(size=cfg.L) + 1j * rng.normal(size=cfg.L)
    direction = np.asarray(direction, dtype=complex)
    direction = direction / np.sqrt(np.sum(abs2(direction)))
    pair = np.stack([initial.a, initial.a + delta * direction])
    icfg = IntegratorConfig(step=step, sample_every=sample_every, t_final=t_final, store_amplitudes=True)
    batch = propagate_batch(pair, cfg, icfg)
    if batch.failures:
        time, message = next(iter(batch.failures.values()))
        raise BlowUpError(message, time=time)
    separation = np.sqrt(np.sum(abs2(batch.amplitudes[:, 1] - batch.amplitudes[:, 0]), axis=-1))
    mask = (batch.times >= window[0]) & (batch.times <= window[1]) & (separation > 0)
    if mask.sum() < 3:
        raise IntegrationError(f"separation window {window} holds fewer than 3 samples")
    slope, _ = np.polyfit(batch.times[mask], np.log(separation[mask]), 1)
    return float(slope)
