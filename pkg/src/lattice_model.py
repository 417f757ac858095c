"""
Lattice Model Module
====================

Classical Bose-Hubbard chain with one lossy site.

Holds the model parameters, the phase-space state types, the Hamiltonian
and the right-hand sides of the (dissipative) equations of motion together
with their tangent-space linearization. Every array kernel works on arrays
of shape ``(..., L)`` so a whole batch of trajectories is evaluated in one
vectorised call.

Equations of motion (J = 1 sets the time unit)::

    i da_l/dt = (omega - i*gamma*delta_{l,d}) a_l
                - J/2 (b_l a_{l+1} + b_{l-1} a_{l-1})
                + g |a_l|^2 a_l

with ``b_l`` the per-bond hopping factors (1 = full bond, epsilon = weak link).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)


class ModelError(Exception):
    """Base exception for lattice model errors."""


class LatticeConfigError(ModelError):
    """Raised when lattice parameters violate the model invariants."""


class DimensionMismatchError(ModelError):
    """Raised when a state does not have one amplitude per lattice site."""


class Boundary(StrEnum):
    PERIODIC = "periodic"
    OPEN = "open"


@dataclass(frozen=True)
class LatticeConfig:
    """All parameters of the open Bose-Hubbard chain.

    Args:
        L: Number of sites (even, >= 2).
        J: Hopping energy; J = 1 defines the time unit.
        g: Macroscopic interaction constant (g = U * nbar).
        omega: On-site frequency. A global phase for uniform states.
        gamma: Loss rate of the dissipated site (>= 0).
        dissipation_site: Index of the lossy site. Defaults to ``L // 2``.
        bond_factors: Multiplier of J on bond ``l <-> l+1`` for each l.
            Defaults to all ones. Each factor must lie in (0, 1].
        boundary: ``periodic`` or ``open``. With ``open`` the bond
            ``L-1 <-> 0`` is ignored whatever its factor.
        nbar: Mean site occupation; sets the quantum fluctuation scale.
    """

    L: int = 20
    J: float = 1.0
    g: float = 4.0
    omega: float = 0.0
    gamma: float = 0.0
    dissipation_site: int | None = None
    bond_factors: tuple[float, ...] | None = None
    boundary: Boundary = Boundary.PERIODIC
    nbar: float = 700.0

    def __post_init__(self) -> None:
        problems = []
        if not isinstance(self.L, int | np.integer) or self.L < 2 or self.L % 2:
            problems.append(f"L must be an even integer >= 2, got {self.L!r}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if self.nbar <= 0:
            problems.append(f"nbar must be > 0, got {self.nbar}")
        try:
            boundary = Boundary(self.boundary)
        except ValueError:
            problems.append(f"boundary must be 'periodic' or 'open', got {self.boundary!r}")
            boundary = Boundary.PERIODIC
        object.__setattr__(self, "boundary", boundary)
        if problems:
            raise LatticeConfigError("; ".join(problems))

        site = self.L // 2 if self.dissipation_site is None else int(self.dissipation_site)
        if not 0 <= site < self.L:
            raise LatticeConfigError(f"dissipation_site must lie in [0, {self.L}), got {site}")
        object.__setattr__(self, "dissipation_site", site)

        factors = (1.0,) * self.L if self.bond_factors is None else tuple(float(b) for b in self.bond_factors)
        if len(factors) != self.L:
            raise LatticeConfigError(f"bond_factors needs {self.L} entries, got {len(factors)}")
        bad = [b for b in factors if not 0.0 < b <= 1.0]
        if bad:
            raise LatticeConfigError(f"bond_factors must lie in (0, 1], got {bad}")
        object.__setattr__(self, "bond_factors", factors)

    # -- derived arrays (cached, read-only) --

    @cached_property
    def bonds(self) -> np.ndarray:
        """Effective factor of bond ``l <-> l+1``; zero for the open-chain wrap bond."""
        b = np.asarray(self.bond_factors, dtype=float)
        if self.boundary is Boundary.OPEN:
            b[-1] = 0.0
        b.setflags(write=False)
        return b

    @cached_property
    def bonds_left(self) -> np.ndarray:
        """Factor of bond ``l-1 <-> l`` seen from site l."""
        b = np.roll(self.bonds, 1)
        b.setflags(write=False)
        return b

    @cached_property
    def right_index(self) -> np.ndarray:
        """Index of site l+1 (periodic wrap; the open-chain wrap bond is zeroed in ``bonds``)."""
        idx = (np.arange(self.L) + 1) % self.L
        idx.setflags(write=False)
        return idx

    @cached_property
    def left_index(self) -> np.ndarray:
        idx = (np.arange(self.L) - 1) % self.L
        idx.setflags(write=False)
        return idx

    @cached_property
    def onsite(self) -> np.ndarray:
        """Complex on-site coefficient ``omega - i*gamma*delta_{l,d}``."""
        c = np.full(self.L, self.omega, dtype=complex)
        c[self.dissipation_site] -= 1j * self.gamma
        c.setflags(write=False)
        return c

    def with_weak_links(self, distance: int, epsilon: float) -> LatticeConfig:
        """Return a copy with epsilon-bonds placed symmetrically around the lossy site.

        ``distance`` counts sites from the lossy well to the first site beyond
        the link: distance 1 weakens the two bonds touching the lossy site.
        """
        if distance < 1:
            raise LatticeConfigError(f"weak-link distance must be >= 1, got {distance}")
        factors = list(self.bond_factors)
        d = self.dissipation_site
        for index in ((d + distance - 1) % self.L, (d - distance) % self.L):
            factors[index] = float(epsilon)
        return LatticeConfig(
            L=self.L,
            J=self.J,
            g=self.g,
            omega=self.omega,
            gamma=self.gamma,
            dissipation_site=d,
            bond_factors=tuple(factors),
            boundary=self.boundary,
            nbar=self.nbar,
        )


@dataclass(frozen=True, eq=False)
class TrajectoryState:
    """Time stamp plus the L complex site amplitudes."""

    t: float
    a: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", np.asarray(self.a, dtype=complex))

    @property
    def occupations(self) -> np.ndarray:
        return self.a.real**2 + self.a.imag**2


@dataclass(frozen=True, eq=False)
class TangentState:
    """Tangent vector paired with a TrajectoryState."""

    da: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "da", np.asarray(self.da, dtype=complex))


def check_dimension(a: np.ndarray, cfg: LatticeConfig) -> None:
    """Raise DimensionMismatchError unless the last axis of *a* has L entries."""
    if a.ndim == 0 or a.shape[-1] != cfg.L:
        raise DimensionMismatchError(f"expected {cfg.L} amplitudes per state, got shape {a.shape}")


# ---------------------------------------------------------------------------
# Array kernels
# ---------------------------------------------------------------------------


def abs2(a: np.ndarray) -> np.ndarray:
    return a.real**2 + a.imag**2


def hop(a: np.ndarray, cfg: LatticeConfig) -> np.ndarray:
    """Neighbour sum ``b_l a_{l+1} + b_{l-1} a_{l-1}`` along the last axis."""
    return cfg.bonds * a[..., cfg.right_index] + cfg.bonds_left * a[..., cfg.left_index]


def lattice_rhs(a: np.ndarray, cfg: LatticeConfig) -> np.ndarray:
    """Time derivative of the amplitudes for a batch of states."""
    return -1j * (cfg.onsite * a - 0.5 * cfg.J * hop(a, cfg) + cfg.g * abs2(a) * a)


def lattice_tangent_rhs(a: np.ndarray, da: np.ndarray, cfg: LatticeConfig) -> np.ndarray:
    """Jacobian of :func:`lattice_rhs` at *a* applied to *da* (linear in da, da*)."""
    return -1j * (
        cfg.onsite * da - 0.5 * cfg.J * hop(da, cfg) + 2.0 * cfg.g * abs2(a) * da + cfg.g * a * a * np.conj(da)
    )


def energy(a: np.ndarray, cfg: LatticeConfig) -> np.ndarray:
    """Classical Hamiltonian for a batch of states (real, reduced over the last axis)."""
    n = abs2(a)
    hopping = np.sum(cfg.bonds * (np.conj(a[..., cfg.right_index]) * a).real, axis=-1)
    return cfg.omega * np.sum(n, axis=-1) - cfg.J * hopping + 0.5 * cfg.g * np.sum(n * n, axis=-1)


def total_norm(a: np.ndarray) -> np.ndarray:
    return np.sum(abs2(a), axis=-1)


# ---------------------------------------------------------------------------
# State-level operations
# ---------------------------------------------------------------------------


def hamiltonian_energy(state: TrajectoryState, cfg: LatticeConfig) -> float:
    """Energy of a single state."""
    check_dimension(state.a, cfg)
    return float(energy(state.a, cfg))


def eom_rhs(state: TrajectoryState, cfg: LatticeConfig) -> np.ndarray:
    """Right-hand side of the dissipative equations of motion for one state."""
    check_dimension(state.a, cfg)
    return lattice_rhs(state.a, cfg)


def tangent_rhs(state: TrajectoryState, tangent: TangentState, cfg: LatticeConfig) -> np.ndarray:
    """Linearized equations of motion about *state* applied to *tangent*."""
    check_dimension(state.a, cfg)
    check_dimension(tangent.da, cfg)
    return lattice_tangent_rhs(state.a, tangent.da, cfg)


def bloch_wave_state(k: int, cfg: LatticeConfig, t: float = 0.0) -> TrajectoryState:
    """Nonlinear Bloch wave ``a_l = exp(i*kappa*l)`` with ``kappa = 2*pi*k/L``."""
    kappa = 2.0 * np.pi * k / cfg.L
    return TrajectoryState(t=t, a=np.exp(1j * kappa * np.arange(cfg.L)))


def neighbor_sum(a: np.ndarray, site: int, cfg: LatticeConfig) -> np.ndarray:
    """Driving force ``a_{l+1} + a_{l-1}`` on *site*, along the last axis of *a*.

    Neighbours missing at the ends of an open chain contribute nothing.
    """
    right = int(cfg.right_index[site])
    left = int(cfg.left_index[site])
    total = np.zeros(a.shape[:-1], dtype=complex)
    if cfg.bonds[site] > 0:
        total = total + a[..., right]
    if cfg.bonds_left[site] > 0:
        total = total + a[..., left]
    return total
