"""Tests for the lattice model module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.lattice_model import (
    Boundary,
    DimensionMismatchError,
    LatticeConfig,
    LatticeConfigError,
    TangentState,
    TrajectoryState,
    bloch_wave_state,
    eom_rhs,
    hamiltonian_energy,
    lattice_rhs,
    neighbor_sum,
    tangent_rhs,
)

_finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)


def _random_state(L, seed=1):
    rng = np.random.default_rng(seed)
    return rng.normal(size=L) + 1j * rng.normal(size=L)


# ---------------------------------------------------------------------------
# LatticeConfig
# ---------------------------------------------------------------------------


class TestLatticeConfig:
    """Validation and derived arrays."""

    def test_defaults(self):
        cfg = LatticeConfig()
        assert cfg.L == 20
        assert cfg.dissipation_site == 10
        assert cfg.bond_factors == (1.0,) * 20
        assert cfg.boundary is Boundary.PERIODIC

    @pytest.mark.parametrize("L", [0, 1, 3, 21])
    def test_rejects_odd_or_tiny_L(self, L):
        with pytest.raises(LatticeConfigError, match="even integer"):
            LatticeConfig(L=L)

    def test_rejects_negative_gamma(self):
        with pytest.raises(LatticeConfigError, match="gamma"):
            LatticeConfig(gamma=-0.1)

    def test_rejects_dissipation_site_out_of_range(self):
        with pytest.raises(LatticeConfigError, match="dissipation_site"):
            LatticeConfig(L=4, dissipation_site=4)

    def test_rejects_bond_factor_outside_unit_interval(self):
        with pytest.raises(LatticeConfigError, match=r"\(0, 1\]"):
            LatticeConfig(L=4, bond_factors=(1.0, 0.0, 1.0, 1.0))

    def test_rejects_wrong_number_of_bond_factors(self):
        with pytest.raises(LatticeConfigError, match="needs 4 entries"):
            LatticeConfig(L=4, bond_factors=(1.0, 1.0))

    def test_boundary_accepts_string(self):
        cfg = LatticeConfig(L=4, boundary="open")
        assert cfg.boundary is Boundary.OPEN
        assert cfg.bonds[-1] == 0.0

    def test_derived_arrays_are_read_only(self):
        cfg = LatticeConfig(L=4)
        with pytest.raises(ValueError):
            cfg.bonds[0] = 0.5

    def test_onsite_carries_loss(self):
        cfg = LatticeConfig(L=4, omega=0.5, gamma=0.2, dissipation_site=1)
        np.testing.assert_allclose(cfg.onsite, [0.5, 0.5 - 0.2j, 0.5, 0.5])


class TestWeakLinks:
    """Symmetric epsilon-bond placement around the lossy site."""

    def test_distance_one_weakens_bonds_touching_lossy_site(self):
        cfg = LatticeConfig(L=20).with_weak_links(1, 0.3)
        weak = [i for i, b in enumerate(cfg.bond_factors) if b != 1.0]
        assert weak == [9, 10]

    def test_distance_four(self):
        cfg = LatticeConfig(L=20).with_weak_links(4, 0.3)
        weak = [i for i, b in enumerate(cfg.bond_factors) if b != 1.0]
        assert weak == [6, 13]

    def test_other_parameters_survive(self):
        base = LatticeConfig(L=8, g=2.0, gamma=0.1, nbar=50.0)
        cfg = base.with_weak_links(2, 0.5)
        assert (cfg.g, cfg.gamma, cfg.nbar, cfg.dissipation_site) == (2.0, 0.1, 50.0, 4)

    def test_rejects_zero_distance(self):
        with pytest.raises(LatticeConfigError):
            LatticeConfig(L=8).with_weak_links(0, 0.5)


# ---------------------------------------------------------------------------
# Energy and equations of motion
# ---------------------------------------------------------------------------


class TestHamiltonian:
    """Energy of simple states."""

    def test_uniform_state(self):
        cfg = LatticeConfig(L=4, g=4.0)
        state = TrajectoryState(t=0.0, a=np.ones(4))
        assert hamiltonian_energy(state, cfg) == pytest.approx(-4.0 + 8.0)

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_bloch_wave_energy(self, k):
        cfg = LatticeConfig(L=6, g=4.0)
        kappa = 2 * np.pi * k / 6
        expected = -6 * np.cos(kappa) + 0.5 * 4.0 * 6
        assert hamiltonian_energy(bloch_wave_state(k, cfg), cfg) == pytest.approx(expected)

    def test_energy_is_gauge_invariant(self):
        cfg = LatticeConfig(L=6, g=4.0)
        a = _random_state(6)
        e1 = hamiltonian_energy(TrajectoryState(0.0, a), cfg)
        e2 = hamiltonian_energy(TrajectoryState(0.0, a * np.exp(0.7j)), cfg)
        assert e1 == pytest.approx(e2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError, match="expected 4"):
            hamiltonian_energy(TrajectoryState(0.0, np.ones(6)), LatticeConfig(L=4))


class TestEquationsOfMotion:
    """Right-hand side and its linearization."""

    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_bloch_wave_is_an_eigenmode(self, k):
        cfg = LatticeConfig(L=6, g=4.0, omega=0.3)
        state = bloch_wave_state(k, cfg)
        kappa = 2 * np.pi * k / 6
        frequency = 0.3 - np.cos(kappa) + 4.0
        np.testing.assert_allclose(eom_rhs(state, cfg), -1j * frequency * state.a, atol=1e-12)

    def test_batched_rhs_matches_single_rows(self):
        cfg = LatticeConfig(L=6, g=4.0, gamma=0.1)
        batch = np.stack([_random_state(6, seed) for seed in range(3)])
        rhs = lattice_rhs(batch, cfg)
        for row in range(3):
            np.testing.assert_allclose(rhs[row], eom_rhs(TrajectoryState(0.0, batch[row]), cfg))

    def test_tangent_matches_finite_difference(self):
        cfg = LatticeConfig(L=6, g=4.0, gamma=0.1)
        a = _random_state(6, seed=2)
        da = _random_state(6, seed=3)
        eps = 1e-7
        numeric = (lattice_rhs(a + eps * da, cfg) - lattice_rhs(a - eps * da, cfg)) / (2 * eps)
        analytic = tangent_rhs(TrajectoryState(0.0, a), TangentState(da), cfg)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(
        re=arrays(np.float64, 6, elements=_finite),
        im=arrays(np.float64, 6, elements=_finite),
        gamma=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_norm_changes_only_through_lossy_site(self, re, im, gamma):
        cfg = LatticeConfig(L=6, g=4.0, gamma=gamma, dissipation_site=2)
        a = re + 1j * im
        d_norm = 2.0 * np.sum((np.conj(a) * lattice_rhs(a, cfg)).real)
        assert d_norm == pytest.approx(-2.0 * gamma * abs(a[2]) ** 2, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(re=arrays(np.float64, 6, elements=_finite), im=arrays(np.float64, 6, elements=_finite))
    def test_energy_is_conserved_without_loss(self, re, im):
        cfg = LatticeConfig(L=6, g=4.0)
        a = re + 1j * im
        da = lattice_rhs(a, cfg)
        eps = 1e-6
        e_plus = hamiltonian_energy(TrajectoryState(0.0, a + eps * da), cfg)
        e_minus = hamiltonian_energy(TrajectoryState(0.0, a - eps * da), cfg)
        scale = 1.0 + float(np.sum(np.abs(a) ** 4))
        assert abs(e_plus - e_minus) / (2 * eps) < 1e-5 * scale


class TestNeighborSum:
    """Driving force on a chosen site."""

    def test_periodic(self):
        cfg = LatticeConfig(L=4)
        a = np.array([1.0, 2.0, 3.0, 4.0], dtype=complex)
        assert neighbor_sum(a, 0, cfg) == pytest.approx(2.0 + 4.0)

    def test_open_chain_end_has_one_neighbour(self):
        cfg = LatticeConfig(L=4, boundary=Boundary.OPEN)
        a = np.array([1.0, 2.0, 3.0, 4.0], dtype=complex)
        assert neighbor_sum(a, 0, cfg) == pytest.approx(2.0)
        assert neighbor_sum(a, 3, cfg) == pytest.approx(3.0)

    def test_batched(self):
        cfg = LatticeConfig(L=4)
        a = np.arange(8, dtype=complex).reshape(2, 4)
        np.testing.assert_allclose(neighbor_sum(a, 2, cfg), [1.0 + 3.0, 5.0 + 7.0])
