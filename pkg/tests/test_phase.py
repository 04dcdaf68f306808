import math
from dataclasses import replace

import numpy as np
import pytest

from qlink.phase import (
    PhaseEstimateUnavailable,
    PhaseProcess,
    StabilizationFailed,
    StabilizerConfig,
    coherence_factor,
    estimate_phase,
    evolve_phase,
    operating_residual_std,
    sample_interferometer_counts,
    stabilize,
    stabilized_phase_trajectory,
)

NOISELESS = StabilizerConfig(photon_budget=None, actuation_noise=0.0)


def quiet_process(theta=0.0):
    """No drift, no oscillation: only controller action moves the phase."""
    return PhaseProcess(theta=theta, diffusion=0.0, osc_amp=0.0)


class TestEvolvePhase:
    def test_zero_dt_unchanged(self):
        rng = np.random.default_rng(0)
        p = PhaseProcess(theta=0.5)
        assert evolve_phase(p, 0.0, rng) == p

    def test_noiseless_mean_decay(self):
        rng = np.random.default_rng(0)
        p = quiet_process(theta=0.3)
        for dt in (0.01, 0.1, 1.0):
            out = evolve_phase(p, dt, rng)
            assert out.theta == pytest.approx(0.3 * math.exp(-dt / p.tau_corr),
                                              rel=1e-12)
            assert out.time == pytest.approx(p.time + dt)

    def test_free_variance_matches_ou_formula(self):
        # Monte Carlo vs the exact OU step variance
        rng = np.random.default_rng(21)
        p = PhaseProcess(theta=0.0, osc_amp=0.0)
        dt = 0.05
        kicks = []
        for _ in range(20000):
            kicks.append(evolve_phase(p, dt, rng).theta)
        expected = p.diffusion * p.tau_corr / 2 * (
            1 - math.exp(-2 * dt / p.tau_corr))
        assert np.var(kicks) == pytest.approx(expected, rel=0.05)

    def test_oscillation_is_deterministic(self):
        rng = np.random.default_rng(2)
        p = PhaseProcess(theta=0.0, diffusion=0.0, osc_amp=0.2, osc_freq=50.0)
        out = evolve_phase(p, 0.013, rng)
        assert out.current_phase() == pytest.approx(
            0.2 * math.sin(2 * math.pi * 50.0 * 0.013), abs=1e-12)

    def test_wrapped_after_every_step(self):
        rng = np.random.default_rng(3)
        p = PhaseProcess(theta=3.0, diffusion=5.0)
        for _ in range(500):
            p = evolve_phase(p, 0.05, rng)
            assert -math.pi < p.theta <= math.pi
            assert -math.pi < p.current_phase() <= math.pi


class TestEstimatePhase:
    def test_balanced_ports(self):
        assert estimate_phase(100, 100) == pytest.approx(math.pi / 2)

    def test_all_in_port_zero(self):
        assert estimate_phase(57, 0) == 0.0

    def test_zero_counts_unavailable(self):
        with pytest.raises(PhaseEstimateUnavailable):
            estimate_phase(0, 0)

    def test_monte_carlo_bias_and_spread(self):
        theta = math.radians(30.0)
        budget = 10_000
        rng = np.random.default_rng(11)
        estimates = []
        for _ in range(3000):
            c0, c1 = sample_interferometer_counts(theta, budget, rng)
            estimates.append(estimate_phase(c0, c1))
        mean = float(np.mean(estimates))
        assert abs(mean - theta) < math.radians(1.0)
        # delta method: var(theta_hat) ~ 1/n for Poisson-binomial counts
        assert np.std(estimates) == pytest.approx(1 / math.sqrt(budget),
                                                  rel=0.15)

    def test_near_unbiased_for_large_budgets(self):
        rng = np.random.default_rng(5)
        budget = 1000
        theta = 0.8
        est = []
        for _ in range(4000):
            c0, c1 = sample_interferometer_counts(theta, budget, rng)
            est.append(estimate_phase(c0, c1))
        bias = abs(float(np.mean(est)) - theta)
        assert bias < 1 / math.sqrt(budget)


class TestStabilize:
    def test_one_noiseless_call_zeroes_exactly(self):
        rng = np.random.default_rng(0)
        for theta0 in (0.3, -0.3, 1.2, -2.8):
            out = stabilize(quiet_process(theta0), NOISELESS, rng)
            assert out.theta == pytest.approx(0.0, abs=1e-15)

    def test_wrong_sign_memory_recovers_in_one_call(self):
        rng = np.random.default_rng(0)
        p = replace(quiet_process(0.4), ctrl_sign=-1)
        out = stabilize(p, NOISELESS, rng)
        assert out.theta == pytest.approx(0.0, abs=1e-15)
        assert out.ctrl_sign == 1

    def test_gain_zero_leaves_process_untouched(self):
        rng = np.random.default_rng(1)
        p = quiet_process(0.7)
        out = stabilize(p, StabilizerConfig(photon_budget=None, gain=0.0,
                                            actuation_noise=0.0), rng)
        assert out.theta == 0.7

    def test_gain_zero_statistics_match_free_process(self):
        cfg = StabilizerConfig(gain=0.0, actuation_noise=0.0, photon_budget=10)
        p = PhaseProcess(osc_amp=0.0)
        rng = np.random.default_rng(9)
        _, thetas, events = stabilized_phase_trajectory(p, cfg, 3000, rng)
        samples = thetas[np.array([e == "sample" for e in events])][800:]
        free_std = p.stationary_std()
        # correlated samples: ~T/tau independent blocks, std known to ~7%
        assert float(np.std(samples)) == pytest.approx(free_std, rel=0.15)

    def test_stabilization_shrinks_residual_for_any_diffusion(self):
        cfg = StabilizerConfig()
        for diffusion in (0.05, 0.19, 1.0, 5.0):
            rng = np.random.default_rng(int(diffusion * 100))
            p = PhaseProcess(diffusion=diffusion).with_stationary_state(rng)
            on = operating_residual_std(p, cfg, 800, rng, burn_in=50)
            rng_off = np.random.default_rng(int(diffusion * 100) + 1)
            off = operating_residual_std(
                p, replace(cfg, gain=0.0, actuation_noise=0.0),
                800, rng_off, burn_in=50)
            assert on < off

    def test_calibrated_residual_hits_target(self):
        rng = np.random.default_rng(20240607)
        p = PhaseProcess().with_stationary_state(rng)
        std = operating_residual_std(p, StabilizerConfig(), 4000, rng)
        assert math.degrees(std) == pytest.approx(14.3, abs=1.0)

    def test_budget_one_can_fail_after_three_retries(self):
        cfg = StabilizerConfig(photon_budget=1)
        rng = np.random.default_rng(123)
        failures = 0
        for _ in range(300):
            try:
                stabilize(quiet_process(0.5), cfg, rng)
            except StabilizationFailed as err:
                failures += 1
                assert isinstance(err.process, PhaseProcess)
        # P(fail) = P(Poisson(1) = 0)^3 ~ 5%
        assert 0 < failures < 60


class TestCoherenceFactor:
    def test_zero_spread(self):
        assert coherence_factor(0.0) == 1.0

    def test_operating_point_value(self):
        assert coherence_factor(math.radians(14.3)) == pytest.approx(0.9693,
                                                                     abs=1e-4)

    def test_large_spread_vanishes(self):
        assert coherence_factor(50.0) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_decreasing(self):
        grid = np.linspace(0, 3, 40)
        vals = [coherence_factor(s) for s in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_matches_gaussian_average_of_cos(self):
        rng = np.random.default_rng(99)
        sigma = math.radians(14.3)
        samples = np.cos(rng.normal(0.0, sigma, size=1_000_000))
        se = float(np.std(samples)) / 1000.0
        assert abs(float(samples.mean()) - coherence_factor(sigma)) < 3 * se


class TestConfigValidation:
    def test_stabilizer_ranges(self):
        with pytest.raises(ValueError):
            StabilizerConfig(interval=0.0)
        with pytest.raises(ValueError):
            StabilizerConfig(photon_budget=0)
        with pytest.raises(ValueError):
            StabilizerConfig(gain=2.0)
        with pytest.raises(ValueError):
            StabilizerConfig(gain=-0.1)

    def test_process_ranges(self):
        with pytest.raises(ValueError):
            PhaseProcess(diffusion=-1.0)
        with pytest.raises(ValueError):
            PhaseProcess(tau_corr=0.0)
        with pytest.raises(ValueError):
            PhaseProcess(ctrl_sign=0)

    def test_theta_wrapped_on_construction(self):
        p = PhaseProcess(theta=3 * math.pi)
        assert p.theta == pytest.approx(math.pi)
