"""
Ensembles Module
================

Initial-condition ensembles and seeded, parallel ensemble execution.

Samplers:
- zone_edge_bec:       a_l = (-1)^l plus complex Gaussian noise of variance
                       1/(4 nbar) per quadrature
- ground_state_bec:    a_l = 1 plus the same noise
- uniform_hypersphere: uniform on the sphere sum |a_l|^2 = L

Every trajectory draws from its own counter-based stream keyed on
``(root_seed, trajectory_index)``, so results do not depend on how the
trajectories are scheduled. Trajectories run in fixed-size chunks; chunk
outputs are consumed in index order and reduced with compensated
summation, which makes the ensemble means independent of the worker count.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from .integrator import IntegratorConfig, propagate_batch
from .lattice_model import LatticeConfig, TrajectoryState, neighbor_sum

logger = logging.getLogger(__name__)

DEFAULT_NBAR = 700.0


class EnsembleError(Exception):
    """Base exception for ensemble errors."""


class EnsembleConfigError(EnsembleError):
    """Raised for invalid ensemble settings."""


class EnsembleFailedError(EnsembleError):
    """Raised when too many trajectories abort."""

    def __init__(self, message: str, failures: list[tuple[int, float, str]]) -> None:
        super().__init__(message)
        self.failures = failures


class Sampler(StrEnum):
    ZONE_EDGE_BEC = "zone_edge_bec"
    GROUND_STATE_BEC = "ground_state_bec"
    UNIFORM_HYPERSPHERE = "uniform_hypersphere"


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, seeding and execution settings.

    Args:
        n_traj: Number of trajectories.
        root_seed: 64-bit root seed.
        sampler: Initial-condition sampler.
        nbar: Fluctuation scale of the BEC samplers.
        workers: Worker processes (1 = run in-process).
        chunk_size: Trajectories per vectorised chunk. Part of the result's
            identity; changing it may change last-bit rounding.
        n_groups: Keep means of this many contiguous trajectory groups for
            bootstrap error bars (0 = off).
        xi_site: Also collect the neighbour-sum series of this site
            (forces complex sampling inside workers).
        max_failure_fraction: Abort threshold for blown-up trajectories.
    """

    n_traj: int = 1000
    root_seed: int = 0
    sampler: Sampler = Sampler.ZONE_EDGE_BEC
    nbar: float = DEFAULT_NBAR
    workers: int = 1
    chunk_size: int = 50
    n_groups: int = 0
    xi_site: int | None = None
    max_failure_fraction: float = 0.001

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise EnsembleConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if not 0 <= self.root_seed < 2**64:
            raise EnsembleConfigError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        if self.nbar <= 0:
            raise EnsembleConfigError(f"nbar must be > 0, got {self.nbar}")
        if self.workers < 1 or self.chunk_size < 1:
            raise EnsembleConfigError("workers and chunk_size must be >= 1")
        if self.n_groups < 0:
            raise EnsembleConfigError(f"n_groups must be >= 0, got {self.n_groups}")
        try:
            object.__setattr__(self, "sampler", Sampler(self.sampler))
        except ValueError:
            raise EnsembleConfigError(f"unknown sampler {self.sampler!r}")


@dataclass(eq=False)
class EnsembleResult:
    """Ensemble-mean site occupations on a time grid.

    ``n`` and ``stderr`` have shape (n_times, L). ``group_means`` has
    shape (n_groups, n_times, L) when requested, ``xi`` shape
    (n_ok, n_times) when a neighbour-sum site was requested.
    """

    times: np.ndarray
    n: np.ndarray
    stderr: np.ndarray
    n_traj: int = 0
    n_ok: int = 0
    meta: dict = field(default_factory=dict)
    failures: list[tuple[int, float, str]] = field(default_factory=list)
    group_means: np.ndarray | None = None
    xi: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.n.shape[1]


# ---------------------------------------------------------------------------
# Streams and samplers
# ---------------------------------------------------------------------------


def trajectory_stream(root_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based generator for one trajectory."""
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def _bec_state(carrier: np.ndarray, nbar: float, stream: np.random.Generator) -> TrajectoryState:
    if nbar <= 0:
        raise EnsembleConfigError(f"nbar must be > 0, got {nbar}")
    eta = stream.standard_normal((2, carrier.size))
    scale = 0.0 if math.isinf(nbar) else 1.0 / (2.0 * math.sqrt(nbar))
    return TrajectoryState(t=0.0, a=carrier + scale * (eta[0] + 1j * eta[1]))


def sample_zone_edge_bec(L: int, nbar: float, stream: np.random.Generator) -> TrajectoryState:
    """BEC at the Brillouin-zone edge: a_l = (-1)^l with quantum noise."""
    carrier = np.where(np.arange(L) % 2 == 0, 1.0, -1.0).astype(complex)
    return _bec_state(carrier, nbar, stream)


def sample_ground_state_bec(L: int, nbar: float, stream: np.random.Generator) -> TrajectoryState:
    """BEC in the band minimum: a_l = 1 with quantum noise."""
    return _bec_state(np.ones(L, dtype=complex), nbar, stream)


def sample_uniform_hypersphere(L: int, stream: np.random.Generator) -> TrajectoryState:
    """Uniform sample of the sphere sum |a_l|^2 = L."""
    if L < 2:
        raise EnsembleConfigError(f"L must be >= 2, got {L}")
    while True:
        z = stream.standard_normal((2, L))
        a = z[0] + 1j * z[1]
        norm = float(np.sum(z * z))
        if norm > 0.0:
            return TrajectoryState(t=0.0, a=a * math.sqrt(L / norm))
        logger.debug("Degenerate all-zero hypersphere draw; redrawing")


def draw_initial(ecfg: EnsembleConfig, L: int, index: int) -> TrajectoryState:
    """Initial state of trajectory *index* (depends only on root_seed and index)."""
    stream = trajectory_stream(ecfg.root_seed, index)
    if ecfg.sampler is Sampler.ZONE_EDGE_BEC:
        return sample_zone_edge_bec(L, ecfg.nbar, stream)
    if ecfg.sampler is Sampler.GROUND_STATE_BEC:
        return sample_ground_state_bec(L, ecfg.nbar, stream)
    return sample_uniform_hypersphere(L, stream)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _ChunkOutput:
    start: int
    occupations: np.ndarray  # (n_times, B, L)
    xi: np.ndarray | None  # (B, n_times)
    failures: list[tuple[int, float, str]]


def _run_chunk(task: tuple[int, int, EnsembleConfig, LatticeConfig, IntegratorConfig]) -> _ChunkOutput:
    start, stop, ecfg, cfg, icfg = task
    a0 = np.stack([draw_initial(ecfg, cfg.L, i).a for i in range(start, stop)])
    if ecfg.xi_site is not None and not icfg.store_amplitudes:
        icfg = dataclasses.replace(icfg, store_amplitudes=True)
    batch = propagate_batch(a0, cfg, icfg)
    xi = None
    if ecfg.xi_site is not None:
        xi = neighbor_sum(batch.amplitudes, ecfg.xi_site, cfg).T.copy()
    failures = [(start + row, time, message) for row, (time, message) in sorted(batch.failures.items())]
    return _ChunkOutput(start=start, occupations=batch.occupations, xi=xi, failures=failures)


class _CompensatedSum:
    """Kahan summation of equally shaped arrays, added in a fixed order."""

    def __init__(self, shape: tuple[int, ...]) -> None:
        self.total = np.zeros(shape)
        self._carry = np.zeros(shape)

    def add(self, x: np.ndarray) -> None:
        y = x - self._carry
        t = self.total + y
        self._carry = (t - self.total) - y
        self.total = t


def _chunks(n_traj: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk_size, n_traj)) for s in range(0, n_traj, chunk_size)]


def run_ensemble(
    ecfg: EnsembleConfig,
    cfg: LatticeConfig,
    icfg: IntegratorConfig,
    progress: bool = False,
) -> EnsembleResult:
    """Propagate ``ecfg.n_traj`` trajectories and reduce them to site occupations.

    Raises:
        EnsembleFailedError: If more than ``max_failure_fraction`` of the
            trajectories blow up.
    """
    if ecfg.xi_site is not None and not 0 <= ecfg.xi_site < cfg.L:
        raise EnsembleConfigError(f"xi_site must lie in [0, {cfg.L}), got {ecfg.xi_site}")
    spans = _chunks(ecfg.n_traj, ecfg.chunk_size)
    tasks = [(start, stop, ecfg, cfg, icfg) for start, stop in spans]
    shape = (icfg.n_samples + 1, cfg.L)
    sum_n = _CompensatedSum(shape)
    sum_n2 = _CompensatedSum(shape)
    n_groups = min(ecfg.n_groups, ecfg.n_traj)
    group_sums = [_CompensatedSum(shape) for _ in range(n_groups)]
    group_counts = np.zeros(n_groups, dtype=int)
    xi_rows: list[np.ndarray] = []
    failures: list[tuple[int, float, str]] = []

    logger.info(
        "Running %d trajectories (%s, L=%d) in %d chunks on %d worker(s)",
        ecfg.n_traj,
        ecfg.sampler,
        cfg.L,
        len(tasks),
        ecfg.workers,
    )

    def consume(outputs) -> None:
        for idx, out in enumerate(outputs, 1):
            failed = {index for index, _, _ in out.failures}
            failures.extend(out.failures)
            for row in range(out.occupations.shape[1]):
                index = out.start + row
                if index in failed:
                    continue
                occ = out.occupations[:, row, :]
                sum_n.add(occ)
                sum_n2.add(occ * occ)
                if n_groups:
                    group = index * n_groups // ecfg.n_traj
                    group_sums[group].add(occ)
                    group_counts[group] += 1
                if out.xi is not None:
                    xi_rows.append(out.xi[row])
            logger.debug("Chunk %d/%d reduced (start index %d)", idx, len(tasks), out.start)
            if progress:
                print(f"[{idx}/{len(tasks)}] trajectories {out.start}..{out.start + out.occupations.shape[1] - 1} done")

    if ecfg.workers == 1 or len(tasks) == 1:
        consume(map(_run_chunk, tasks))
    else:
        with ProcessPoolExecutor(max_workers=ecfg.workers) as pool:
            consume(pool.map(_run_chunk, tasks))

    n_ok = ecfg.n_traj - len(failures)
    if failures:
        logger.warning("%d of %d trajectories aborted", len(failures), ecfg.n_traj)
    if len(failures) > ecfg.max_failure_fraction * ecfg.n_traj or n_ok == 0:
        raise EnsembleFailedError(
            f"{len(failures)} of {ecfg.n_traj} trajectories aborted "
            f"(limit {ecfg.max_failure_fraction:.2%}); first: {failures[0][2]}",
            failures,
        )

    mean = sum_n.total / n_ok
    if n_ok > 1:
        var = np.maximum(sum_n2.total - n_ok * mean * mean, 0.0) / (n_ok - 1)
        stderr = np.sqrt(var / n_ok)
    else:
        stderr = np.zeros(shape)

    group_means = None
    if n_groups:
        counts = np.maximum(group_counts, 1)[:, np.newaxis, np.newaxis]
        group_means = np.stack([g.total for g in group_sums]) / counts

    return EnsembleResult(
        times=icfg.times,
        n=mean,
        stderr=stderr,
        n_traj=ecfg.n_traj,
        n_ok=n_ok,
        meta={
            "ensemble": dataclasses.asdict(ecfg),
            "lattice": dataclasses.asdict(cfg),
            "integrator": dataclasses.asdict(icfg),
        },
        failures=failures,
        group_means=group_means,
        xi=np.stack(xi_rows) if xi_rows else None,
    )
