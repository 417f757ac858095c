"""Tests for the fixed-step integrator and tangent propagation."""

import numpy as np
import pytest

from src.ensembles import sample_uniform_hypersphere, trajectory_stream
from src.integrator import (
    BlowUpError,
    IntegrationError,
    IntegratorConfig,
    IntegratorConfigError,
    TangentRangeError,
    _advance_tangent,
    propagate,
    propagate_batch,
    propagate_tangent_batch,
    propagate_with_tangent,
    rk4_step,
    separation_rate,
    time_reversal_error,
)
from src.lattice_model import (
    LatticeConfig,
    TangentState,
    TrajectoryState,
    bloch_wave_state,
    energy,
    total_norm,
)


def _random_state(L, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectoryState(t=0.0, a=rng.normal(size=L) + 1j * rng.normal(size=L))


class TestIntegratorConfig:
    """Grid validation."""

    def test_times(self):
        icfg = IntegratorConfig(step=0.01, sample_every=0.1, t_final=1.0)
        assert icfg.steps_per_sample == 10
        assert icfg.n_samples == 10
        np.testing.assert_allclose(icfg.times, np.linspace(0.0, 1.0, 11))

    def test_sample_every_must_be_multiple_of_step(self):
        with pytest.raises(IntegratorConfigError, match="integer multiple"):
            IntegratorConfig(step=0.03, sample_every=0.1, t_final=1.0)

    def test_t_final_must_be_multiple_of_sample_every(self):
        with pytest.raises(IntegratorConfigError, match="t_final"):
            IntegratorConfig(step=0.01, sample_every=0.1, t_final=1.05)

    def test_rejects_non_positive_step(self):
        with pytest.raises(IntegratorConfigError, match="step"):
            IntegratorConfig(step=0.0)

    def test_rejects_unknown_scheme(self):
        with pytest.raises(IntegratorConfigError, match="rk4"):
            IntegratorConfig(scheme="euler")


class TestRK4:
    """Fourth-order accuracy on a linear test equation."""

    def test_exponential_decay(self):
        a = np.array([1.0 + 0.0j])
        for _ in range(10):
            a = rk4_step(lambda x: -x, a, 0.1)
        assert a[0].real == pytest.approx(np.exp(-1.0), abs=1e-6)

    def test_error_scales_as_fourth_power(self):
        def run(h):
            a = np.array([1.0 + 0.0j])
            for _ in range(round(1.0 / h)):
                a = rk4_step(lambda x: -1j * 3.0 * x, a, h)
            return abs(a[0] - np.exp(-3.0j))

        ratio = run(0.1) / run(0.05)
        assert 12.0 < ratio < 20.0


class TestPropagate:
    """Single-trajectory and batch propagation."""

    @pytest.mark.parametrize("k", [0, 1])
    def test_bloch_wave_phase(self, k):
        cfg = LatticeConfig(L=6, g=4.0)
        icfg = IntegratorConfig(step=1e-3, sample_every=1.0, t_final=10.0, store_amplitudes=True)
        record = propagate(bloch_wave_state(k, cfg), cfg, icfg)
        frequency = -np.cos(2 * np.pi * k / 6) + 4.0
        expected = bloch_wave_state(k, cfg).a * np.exp(-1j * frequency * 10.0)
        np.testing.assert_allclose(record.amplitudes[-1], expected, atol=1e-8)

    def test_conserves_energy_and_norm_without_loss(self):
        cfg = LatticeConfig(L=6, g=4.0)
        initial = _random_state(6, seed=4)
        icfg = IntegratorConfig(step=1e-3, sample_every=1.0, t_final=10.0, store_amplitudes=True)
        record = propagate(initial, cfg, icfg)
        e0, e1 = energy(initial.a, cfg), energy(record.amplitudes[-1], cfg)
        assert abs(e1 - e0) / abs(e0) < 1e-5
        assert total_norm(record.amplitudes[-1]) == pytest.approx(total_norm(initial.a), rel=1e-5)

    def test_hypersphere_sample_conserves_energy_and_norm(self):
        cfg = LatticeConfig(L=6, g=4.0)
        initial = sample_uniform_hypersphere(6, trajectory_stream(0, 0))
        icfg = IntegratorConfig(step=1e-3, sample_every=10.0, t_final=100.0, store_amplitudes=True)
        record = propagate(initial, cfg, icfg)
        energies = energy(record.amplitudes, cfg)
        norms = total_norm(record.amplitudes)
        assert np.max(np.abs(energies / energy(initial.a, cfg) - 1.0)) < 1e-6
        assert np.max(np.abs(norms / 6.0 - 1.0)) < 1e-6

    def test_decoupled_lossy_site_decays_exponentially(self):
        cfg = LatticeConfig(L=2, J=0.0, g=4.0, gamma=0.1)
        icfg = IntegratorConfig(step=1e-3, sample_every=0.5, t_final=50.0)
        record = propagate(TrajectoryState(t=0.0, a=np.array([1.0 + 0j, 1.0 + 0j])), cfg, icfg)
        np.testing.assert_allclose(record.occupations[:, 1], np.exp(-0.2 * record.times), rtol=0, atol=1e-8)
        np.testing.assert_allclose(record.occupations[:, 0], 1.0, rtol=0, atol=1e-8)

    def test_loss_drains_norm(self):
        cfg = LatticeConfig(L=6, g=4.0, gamma=0.5)
        icfg = IntegratorConfig(step=1e-3, sample_every=0.5, t_final=5.0)
        record = propagate(_random_state(6, seed=5), cfg, icfg)
        norms = record.occupations.sum(axis=1)
        assert np.all(np.diff(norms) < 0)

    def test_occupations_only_by_default(self):
        cfg = LatticeConfig(L=4)
        icfg = IntegratorConfig(step=0.01, sample_every=0.1, t_final=1.0)
        record = propagate(bloch_wave_state(0, cfg), cfg, icfg)
        assert record.amplitudes is None
        assert record.occupations.shape == (11, 4)
        with pytest.raises(IntegrationError, match="stored amplitudes"):
            _ = record.final_state

    def test_times_start_at_initial_time(self):
        cfg = LatticeConfig(L=4)
        icfg = IntegratorConfig(step=0.01, sample_every=0.5, t_final=1.0)
        record = propagate(TrajectoryState(t=2.0, a=np.ones(4)), cfg, icfg)
        np.testing.assert_allclose(record.times, [2.0, 2.5, 3.0])

    def test_batch_rows_are_independent(self):
        cfg = LatticeConfig(L=6, g=4.0, gamma=0.1)
        icfg = IntegratorConfig(step=0.01, sample_every=0.5, t_final=2.0)
        states = [_random_state(6, seed) for seed in range(3)]
        batch = propagate_batch(np.stack([s.a for s in states]), cfg, icfg)
        for row, state in enumerate(states):
            single = propagate(state, cfg, icfg)
            np.testing.assert_allclose(batch.occupations[:, row, :], single.occupations, rtol=1e-12)


class TestBlowUp:
    """Runaway trajectories are caught."""

    def _runaway_batch(self):
        a0 = np.ones((2, 4), dtype=complex)
        a0[1, 0] = 100.0
        return a0

    def test_batch_records_failure_and_keeps_running(self):
        cfg = LatticeConfig(L=4, g=4.0)
        icfg = IntegratorConfig(step=0.1, sample_every=0.1, t_final=1.0)
        batch = propagate_batch(self._runaway_batch(), cfg, icfg)
        assert list(batch.failures) == [1]
        time, message = batch.failures[1]
        assert time == pytest.approx(0.1)
        assert "blow-up" in message
        assert np.all(batch.occupations[1:, 1, :] == 0.0)
        assert np.all(np.isfinite(batch.occupations[:, 0, :]))
        assert batch.occupations[-1, 0, :].sum() == pytest.approx(4.0, rel=1e-3)

    def test_single_trajectory_raises(self):
        cfg = LatticeConfig(L=4, g=4.0)
        icfg = IntegratorConfig(step=0.1, sample_every=0.1, t_final=1.0)
        with pytest.raises(BlowUpError) as exc_info:
            propagate(TrajectoryState(0.0, self._runaway_batch()[1]), cfg, icfg)
        assert exc_info.value.time == pytest.approx(0.1)


class TestTangent:
    """Tangent-space propagation and renormalization."""

    def test_decay_rate_of_lossy_mode(self):
        cfg = LatticeConfig(L=2, J=0.0, g=0.0, gamma=0.5)
        a0 = np.array([[1.0, 1.0]], dtype=complex)
        da0 = np.array([[0.0, 1.0]], dtype=complex)
        result = propagate_tangent_batch(a0, da0, cfg, step=0.01, t_final=4.0, renorm_interval=1.0)
        assert result.log_growth.shape == (4, 1)
        np.testing.assert_allclose(result.log_growth, -0.5, atol=1e-9)
        assert result.retries == 0

    def test_stable_bloch_wave_has_small_growth(self):
        cfg = LatticeConfig(L=6, g=4.0)
        rng = np.random.default_rng(1)
        tangent = TangentState(rng.normal(size=6) + 1j * rng.normal(size=6))
        icfg = IntegratorConfig(step=1e-2, sample_every=1.0, t_final=50.0)
        record, log_growth = propagate_with_tangent(bloch_wave_state(0, cfg), tangent, cfg, icfg, renorm_interval=1.0)
        assert record.occupations.shape == (51, 6)
        assert log_growth.sum() / 50.0 < 0.2

    def test_zero_tangent_rejected(self):
        cfg = LatticeConfig(L=4)
        with pytest.raises(IntegrationError, match="non-zero"):
            propagate_tangent_batch(np.ones(4), np.zeros(4), cfg, step=0.1, t_final=1.0, renorm_interval=0.5)

    def test_out_of_range_norm_in_single_step_raises(self):
        cfg = LatticeConfig(L=4, g=4.0)
        a = np.ones((1, 4), dtype=complex)
        da = np.full((1, 4), 1e160, dtype=complex)
        with pytest.raises(TangentRangeError, match="single step"):
            _advance_tangent(a, da, cfg, 0.01, 4)


class TestReferenceChecks:
    """Time reversal and two-trajectory separation."""

    def test_time_reversal_is_exact_to_rounding(self):
        cfg = LatticeConfig(L=6, g=4.0)
        icfg = IntegratorConfig(step=1e-3, sample_every=2.0, t_final=2.0)
        assert time_reversal_error(_random_state(6, seed=7), cfg, icfg) < 1e-6

    def test_linear_chain_does_not_separate(self):
        cfg = LatticeConfig(L=6, g=0.0)
        rate = separation_rate(_random_state(6, seed=8), cfg, delta=1e-6, t_final=5.0, window=(1.0, 5.0))
        assert abs(rate) < 1e-6

    def test_window_needs_samples(self):
        cfg = LatticeConfig(L=4, g=0.0)
        with pytest.raises(IntegrationError, match="fewer than 3"):
            separation_rate(bloch_wave_state(0, cfg), cfg, delta=1e-6, t_final=1.0, window=(5.0, 6.0))
