import itertools
import math

import numpy as np
import pytest

from qlink.states import (
    BellKind,
    BellVariant,
    DensityMatrix,
    NoiseModel,
    ReadoutBasis,
    apply_depolarizing_decay,
    apply_storage_decay,
    bell_state,
    correlator,
    fidelity,
    fidelity_from_correlators,
    heralded_state,
    no_detection_state,
    wrap_angle,
)

PSI_PLUS = BellKind(BellVariant.PSI_PLUS)
PSI_MINUS = BellKind(BellVariant.PSI_MINUS)


def random_density_matrix(rng):
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    m = a @ a.conj().T
    return DensityMatrix(m / m.trace())


def assert_valid(rho):
    m = rho.matrix
    assert np.abs(m - m.conj().T).max() <= 1e-12
    assert abs(m.trace().real - 1.0) <= 1e-12
    assert np.linalg.eigvalsh(m)[0] >= -1e-10


class TestBellState:
    def test_psi_plus_entries(self):
        m = bell_state(PSI_PLUS).matrix
        assert m[1, 1] == pytest.approx(0.5)
        assert m[2, 2] == pytest.approx(0.5)
        assert m[1, 2] == pytest.approx(0.5)
        assert m[0, 0] == m[3, 3] == 0.0
        assert abs(np.trace(m) - 1.0) < 1e-15

    def test_singlet_correlators(self):
        rho = bell_state(PSI_MINUS)
        assert correlator(rho, ReadoutBasis.X, ReadoutBasis.X) == pytest.approx(-1.0)
        assert correlator(rho, ReadoutBasis.Y, ReadoutBasis.Y) == pytest.approx(-1.0)
        assert correlator(rho, ReadoutBasis.Z, ReadoutBasis.Z) == pytest.approx(-1.0)

    def test_phase_pi_flips_variant(self):
        plus_pi = bell_state(BellKind(BellVariant.PSI_PLUS, phase=math.pi))
        minus = bell_state(PSI_MINUS)
        assert plus_pi.isclose(minus, tol=1e-12)

    def test_rank_one(self):
        eig = np.linalg.eigvalsh(bell_state(PSI_PLUS).matrix)
        assert eig[-1] == pytest.approx(1.0)
        assert np.abs(eig[:-1]).max() < 1e-12


class TestNoDetectionState:
    def test_alpha_zero_is_down_down(self):
        m = no_detection_state(0.0, 4e-4).matrix
        assert m[3, 3] == pytest.approx(1.0)

    def test_always_bright_never_detected(self):
        m = no_detection_state(1.0, 0.0).matrix
        assert m[0, 0] == pytest.approx(1.0)

    def test_brute_force_branch_enumeration(self):
        # Oracle: walk the four bright/dark emission branches by hand and
        # keep the no-click probability of each.
        alpha, p_det = 0.2, 4e-4
        weights = {}
        for bright_a, bright_b in itertools.product([True, False], repeat=2):
            p_branch = (alpha if bright_a else 1 - alpha) * (
                alpha if bright_b else 1 - alpha)
            p_no_click = (1 - p_det if bright_a else 1.0) * (
                1 - p_det if bright_b else 1.0)
            idx = (0 if bright_a else 2) + (0 if bright_b else 1)
            weights[idx] = p_branch * p_no_click
        total = sum(weights.values())
        expected = np.array([weights[i] / total for i in range(4)])

        rho = no_detection_state(alpha, p_det)
        np.testing.assert_allclose(np.diag(rho.matrix).real, expected,
                                   atol=1e-15)
        assert np.abs(rho.matrix - np.diag(np.diag(rho.matrix))).max() == 0.0
        # fidelity with the Bell target ~ alpha (1 - alpha) / norm
        f = fidelity(rho, PSI_PLUS)
        assert f == pytest.approx(alpha * (1 - alpha) * (1 - p_det) / total)
        assert f == pytest.approx(0.16, abs=5e-3)

    def test_impossible_conditioning_rejected(self):
        with pytest.raises(ValueError):
            no_detection_state(1.0, 1.0)


class TestHeraldedState:
    def test_ideal_fidelity_is_one_minus_alpha(self):
        rho = heralded_state(NoiseModel.ideal(0.05), detector=0)
        assert fidelity(rho, PSI_PLUS) == pytest.approx(0.95, abs=1e-12)

    def test_alpha_to_zero_fidelity_to_one(self):
        rho = heralded_state(NoiseModel(alpha=1e-9, p_dark=0.0, visibility=1.0,
                                        p_dbl=0.0, sigma_theta=0.0), detector=0)
        assert fidelity(rho, PSI_PLUS) == pytest.approx(1.0, abs=1e-8)

    def test_calibrated_defaults_hit_working_point(self):
        rho = heralded_state(NoiseModel(alpha=0.05), detector=0)
        assert fidelity(rho, PSI_PLUS) == pytest.approx(0.81, abs=0.02)

    def test_detector_one_heralds_psi_minus(self):
        rho = heralded_state(NoiseModel.ideal(0.1), detector=1)
        assert fidelity(rho, PSI_MINUS) == pytest.approx(0.9, abs=1e-12)
        assert fidelity(rho, PSI_PLUS) == pytest.approx(0.0, abs=1e-12)

    def test_exact_weight_flag(self):
        noise = NoiseModel.ideal(0.3)
        w_exact = 0.3 * (1 - noise.p_det) / (1 - 0.3 * noise.p_det)
        rho = heralded_state(noise, detector=0, exact_weight=True)
        assert rho.matrix[0, 0].real == pytest.approx(w_exact)
        assert fidelity(rho, PSI_PLUS) == pytest.approx(1 - w_exact)

    def test_delta_theta_rotates_coherence(self):
        theta = 0.7
        rho = heralded_state(NoiseModel.ideal(0.1), detector=0,
                             delta_theta=theta)
        coh = rho.matrix[1, 2]
        assert np.angle(coh) == pytest.approx(-theta)

    def test_invalid_alpha_rejected(self):
        with pytest.raises(ValueError):
            NoiseModel(alpha=1.2)
        with pytest.raises(ValueError):
            NoiseModel(alpha=-0.1)

    def test_fidelity_monotone_in_each_noise_knob(self):
        base = dict(alpha=0.1, p_det=4e-4, p_dark=5e-7, visibility=0.95,
                    p_dbl=0.05, sigma_theta=0.2)

        def f(**kw):
            return fidelity(heralded_state(NoiseModel(**{**base, **kw}),
                                           detector=0), PSI_PLUS)

        grids = {
            "p_dark": np.linspace(0.0, 1e-5, 12),
            "p_dbl": np.linspace(0.0, 0.4, 12),
            "sigma_theta": np.linspace(0.0, 1.0, 12),
        }
        for name, grid in grids.items():
            vals = [f(**{name: g}) for g in grid]
            assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:])), name
        vis_vals = [f(visibility=v) for v in np.linspace(0.5, 1.0, 12)]
        assert all(b >= a - 1e-12 for a, b in zip(vis_vals, vis_vals[1:]))
        # alpha direction: strictly decreasing once dark heralds are rare
        # (below that the curve turns over; see the fidelity/rate curve test),
        # and decreasing everywhere when there are no dark counts at all.
        high = [f(alpha=a) for a in np.linspace(0.08, 0.5, 12)]
        assert all(a >= b - 1e-12 for a, b in zip(high, high[1:]))
        clean = [f(alpha=a, p_dark=0.0) for a in np.linspace(1e-3, 0.5, 12)]
        assert all(a > b for a, b in zip(clean, clean[1:]))

    def test_xx_yy_equal_at_zero_phase(self):
        rho = heralded_state(NoiseModel(alpha=0.1), detector=0)
        xx = correlator(rho, ReadoutBasis.X, ReadoutBasis.X)
        yy = correlator(rho, ReadoutBasis.Y, ReadoutBasis.Y)
        assert xx == pytest.approx(yy, abs=1e-12)


class TestFidelity:
    def test_mixed_state_quarter(self):
        assert fidelity(DensityMatrix.maximally_mixed(), PSI_PLUS) == \
            pytest.approx(0.25)

    def test_orthogonal_populations(self):
        up_up = DensityMatrix.from_diagonal([1, 0, 0, 0])
        assert fidelity(up_up, PSI_PLUS) == 0.0


class TestCorrelator:
    def test_psi_plus_triple(self):
        rho = bell_state(PSI_PLUS)
        assert correlator(rho, ReadoutBasis.X, ReadoutBasis.X) == pytest.approx(1.0)
        assert correlator(rho, ReadoutBasis.Y, ReadoutBasis.Y) == pytest.approx(1.0)
        assert correlator(rho, ReadoutBasis.Z, ReadoutBasis.Z) == pytest.approx(-1.0)

    def test_swept_basis_traces_cosine(self):
        # <(cos phi X + sin phi Y) X> on a phase-rotated Bell state follows
        # cos(phi - phase): the readout sweep of the left tomography panel.
        for phase in (0.0, 0.4, -1.1):
            rho = bell_state(BellKind(BellVariant.PSI_PLUS, phase=phase))
            for phi in np.linspace(-math.pi, math.pi, 17):
                c = correlator(rho, ReadoutBasis.rotated(phi), ReadoutBasis.X)
                assert c == pytest.approx(math.cos(phi - phase), abs=1e-12)

    def test_mixed_state_vanishes(self):
        rho = DensityMatrix.maximally_mixed()
        for basis in (ReadoutBasis.X, ReadoutBasis.Y, ReadoutBasis.Z,
                      ReadoutBasis.rotated(0.3)):
            assert correlator(rho, basis, ReadoutBasis.X) == pytest.approx(0.0, abs=1e-15)


class TestFidelityFromCorrelators:
    def test_perfect_correlators(self):
        assert fidelity_from_correlators(1, 1, -1, PSI_PLUS) == 1.0

    def test_all_zero_is_quarter(self):
        assert fidelity_from_correlators(0, 0, 0, PSI_PLUS) == 0.25
        assert fidelity_from_correlators(0, 0, 0, PSI_MINUS) == 0.25

    def test_identity_on_random_states(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            rho = random_density_matrix(rng)
            xx = correlator(rho, ReadoutBasis.X, ReadoutBasis.X)
            yy = correlator(rho, ReadoutBasis.Y, ReadoutBasis.Y)
            zz = correlator(rho, ReadoutBasis.Z, ReadoutBasis.Z)
            for kind in (PSI_PLUS, PSI_MINUS):
                assert abs(fidelity_from_correlators(xx, yy, zz, kind)
                           - fidelity(rho, kind)) <= 1e-12

    def test_rejects_phased_target(self):
        with pytest.raises(ValueError):
            fidelity_from_correlators(0, 0, 0, BellKind(BellVariant.PSI_PLUS,
                                                        phase=0.5))


class TestStorageDecay:
    def test_zero_duration_identity(self):
        rng = np.random.default_rng(3)
        rho = random_density_matrix(rng)
        assert apply_storage_decay(rho, 0.0, 0.29, 0.68).isclose(rho)

    def test_combined_coherence_time(self):
        tau_a, tau_b = 0.290, 0.680
        tau_eff = 1.0 / (1.0 / tau_a + 1.0 / tau_b)
        assert tau_eff == pytest.approx(0.2034, abs=5e-4)
        rho = bell_state(PSI_PLUS)
        for t in (0.05, 0.2, 0.5):
            out = apply_storage_decay(rho, t, tau_a, tau_b)
            ratio = out.matrix[1, 2].real / rho.matrix[1, 2].real
            assert ratio == pytest.approx(math.exp(-t / tau_eff), rel=1e-12)
            np.testing.assert_allclose(np.diag(out.matrix), np.diag(rho.matrix),
                                       atol=1e-15)

    def test_diagonal_states_are_fixed_points(self):
        rho = DensityMatrix.from_diagonal([0.4, 0.3, 0.2, 0.1])
        for t in (0.0, 0.1, 10.0):
            assert apply_storage_decay(rho, t, 0.29, 0.68).isclose(rho)

    def test_composition(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            rho = random_density_matrix(rng)
            t1, t2 = rng.uniform(0, 0.5, size=2)
            once = apply_storage_decay(rho, t1 + t2, 0.29, 0.68)
            twice = apply_storage_decay(
                apply_storage_decay(rho, t1, 0.29, 0.68), t2, 0.29, 0.68)
            assert once.isclose(twice, tol=1e-12)

    def test_depolarizing_goes_to_quarter(self):
        rho = bell_state(PSI_PLUS)
        rate = 5.0
        for t in (0.0, 0.1, 0.4):
            out = apply_depolarizing_decay(rho, t, rate)
            expect = 0.25 + 0.75 * math.exp(-rate * t)
            assert fidelity(out, PSI_PLUS) == pytest.approx(expect, rel=1e-12)
        far = apply_depolarizing_decay(rho, 100.0, rate)
        assert far.isclose(DensityMatrix.maximally_mixed(), tol=1e-12)


class TestInvariants:
    def test_channel_outputs_valid_over_random_draws(self):
        rng = np.random.default_rng(2024)
        n = 10_000
        for _ in range(n // 4):
            alpha = rng.uniform(0.0, 1.0)
            noise = NoiseModel(
                alpha=alpha,
                p_det=rng.uniform(0.0, 1.0),
                p_dark=rng.uniform(0.0, 0.1),
                visibility=rng.uniform(0.0, 1.0),
                p_dbl=rng.uniform(0.0, 1.0),
                sigma_theta=rng.uniform(0.0, 2.0),
            )
            detector = int(rng.integers(2))
            rho = heralded_state(noise, detector,
                                 delta_theta=rng.uniform(-4, 4),
                                 exact_weight=bool(rng.integers(2)))
            assert_valid(rho)
            stored = apply_storage_decay(rho, rng.uniform(0, 1),
                                         rng.uniform(0.01, 1),
                                         rng.uniform(0.01, 1))
            assert_valid(stored)
            depol = apply_depolarizing_decay(rho, rng.uniform(0, 1),
                                             rng.uniform(0, 20))
            assert_valid(depol)
            if alpha < 1.0 or rng.uniform() < 0.5:
                nd = no_detection_state(min(alpha, 0.999), rng.uniform(0, 1))
                assert_valid(nd)

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rho = random_density_matrix(rng)
            again = DensityMatrix.from_flat(rho.to_flat())
            assert again.isclose(rho, tol=0.0)

    def test_flat_layout_row_major_interleaved(self):
        rho = bell_state(BellKind(BellVariant.PSI_PLUS, phase=0.5))
        flat = rho.to_flat()
        # element (1, 2) sits at flat index 2 * (1 * 4 + 2)
        assert flat[12] == pytest.approx(rho.matrix[1, 2].real)
        assert flat[13] == pytest.approx(rho.matrix[1, 2].imag)

    def test_invalid_matrices_rejected(self):
        with pytest.raises(ValueError):
            DensityMatrix(np.eye(4))  # trace 4
        bad = np.eye(4, dtype=complex) / 4
        bad[0, 1] = 0.5  # not Hermitian
        with pytest.raises(ValueError):
            DensityMatrix(bad)
        neg = np.diag([0.6, 0.5, -0.05, -0.05]).astype(complex)
        with pytest.raises(ValueError):
            DensityMatrix(neg)


def test_wrap_angle_interval():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.0) == 0.0
    for x in np.linspace(-20, 20, 101):
        w = wrap_angle(x)
        assert -math.pi < w <= math.pi
        assert math.cos(w) == pytest.approx(math.cos(x), abs=1e-12)
        assert math.sin(w) == pytest.approx(math.sin(x), abs=1e-12)
