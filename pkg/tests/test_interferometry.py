import math

import numpy as np
import pytest

from oracles import kron_parity_stats, random_state
from spincat.dynamics import DriveParams, evolve
from spincat.errors import ResamplingCapExceeded
from spincat.interferometry import (
    NoiseSpec,
    draw_noise_ensemble,
    fringe_analytic,
    fringe_exact,
    fringe_experiment,
    fringe_mixed,
    physical_time,
    protocol_thetas,
    spectral_sigma,
    spectrum_analytic,
    spectrum_discrete,
    FringeCurve,
)
from spincat.spin import CatParams, SpinState, css_state, mss_state


class TestFringe:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_kronecker_oracle(self, n):
        rng = np.random.default_rng(10 + n)
        thetas = np.linspace(-1.5, 1.5, 7)
        for _ in range(100):
            amps = random_state(rng, n + 1)
            _, ref = kron_parity_stats(amps, thetas)
            np.testing.assert_allclose(fringe_exact(SpinState(n / 2, amps), thetas).variance, ref, atol=1e-12)

    def test_parity_eigenstate_zero_at_origin(self):
        assert fringe_exact(mss_state(7, CatParams(0.3, 0.5, 0.0)), [0.0]).variance[0] == pytest.approx(0.0, abs=1e-12)
        assert fringe_exact(mss_state(7, CatParams(0.3, 0.5, math.pi)), [0.0]).variance[0] == pytest.approx(0.0, abs=1e-12)

    def test_analytic_origin(self):
        assert fringe_analytic(10, 0.4, 0.0, [0.0]).variance[0] == 0.0

    def test_analytic_close_to_exact_large_J(self):
        p = CatParams(0.1, 0.6, 0.0)
        thetas = np.linspace(-10, 10, 401) * spectral_sigma(74.5, p.beta)
        gap = fringe_exact(mss_state(74.5, p), thetas).variance - fringe_analytic(74.5, p.beta, p.gamma_prime, thetas).variance
        assert np.max(np.abs(gap)) < 0.02

    def test_mixed_examples(self):
        assert fringe_mixed(100, 0.3, 0.2 * math.pi, 0.0, np.linspace(-1, 1, 21)).variance == pytest.approx(1.0, abs=1e-10)
        assert fringe_mixed(1, 0.0, math.pi / 2, 0.0, [0.0]).variance[0] == pytest.approx(0.5)
        th = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(fringe_mixed(3, 0.3, 1.0, 0.2, th).variance, fringe_mixed(3, 0.3, 1.0, 0.2, th + math.pi).variance, atol=1e-14)

    def test_curve_rows(self):
        rows = list(fringe_exact(css_state(2, 0, 1.0), [0.0, 0.1]).rows())
        assert len(rows) == 2 and len(rows[0]) == 4


class TestNoise:
    def test_zero_width(self):
        np.testing.assert_array_equal(draw_noise_ensemble(NoiseSpec(sigma_rel=0.0, trials=20), 149), 149)
        np.testing.assert_array_equal(draw_noise_ensemble(NoiseSpec("drive_strength", 0.0, trials=20), 1.0), 1.0)

    def test_batch_constraints(self):
        draws = draw_noise_ensemble(NoiseSpec(sigma_rel=0.05, trials=250, seed=0), 149)
        assert abs(draws.mean() - 149) <= 1.49
        assert abs(draws.std() - 0.05 * 149) <= 0.1 * 0.05 * 149
        assert np.all(draws == np.rint(draws)) and draws.min() >= 1

    def test_uniform_bounds(self):
        draws = draw_noise_ensemble(NoiseSpec("nonlinear_energy", 0.1, trials=100, seed=4), 1.0)
        assert draws.min() >= 0.9 and draws.max() <= 1.1

    def test_deterministic(self):
        spec = NoiseSpec(sigma_rel=0.1, trials=50, seed=7)
        np.testing.assert_array_equal(draw_noise_ensemble(spec, 149), draw_noise_ensemble(spec, 149))
        other = draw_noise_ensemble(NoiseSpec(sigma_rel=0.1, trials=50, seed=8), 149)
        assert not np.array_equal(other, draw_noise_ensemble(spec, 149))

    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            NoiseSpec("spin_number", shape="uniform")
        with pytest.raises(ValueError):
            NoiseSpec("temperature")

    def test_resampling_cap(self):
        with pytest.raises(ResamplingCapExceeded):
            draw_noise_ensemble(NoiseSpec(sigma_rel=0.5, trials=2, max_batches=1, seed=1), 2)

    def test_zero_noise_experiment_matches_clean(self):
        drive = DriveParams(10, 0.06, 0.07)
        thetas = np.linspace(0, 0.3, 13)
        clean = fringe_exact(evolve(drive, 5.0), thetas).variance
        for target in ("spin_number", "drive_strength", "nonlinear_energy"):
            curve = fringe_experiment(drive, 5.0, NoiseSpec(target, 0.0, trials=5), thetas)
            np.testing.assert_allclose(curve.variance, clean, atol=1e-12)
            np.testing.assert_allclose(curve.stds, 0.0, atol=1e-12)

    def test_noise_experiment_reproducible(self):
        drive = DriveParams(10, 0.06, 0.07)
        spec = NoiseSpec(sigma_rel=0.1, trials=20, seed=2)
        a = fringe_experiment(drive, 5.0, spec, [0.0, 0.1])
        b = fringe_experiment(drive, 5.0, spec, [0.0, 0.1])
        np.testing.assert_array_equal(a.variance, b.variance)
        assert a.meta["prng"] == "MT19937" and a.meta["seed"] == 2


class TestSpectrum:
    def test_analytic_dip_values(self):
        J, beta = 74.5, 0.6
        s = spectral_sigma(J, beta)
        wbar = 4 * J * math.cos(beta)
        assert spectrum_analytic(J, beta, [wbar])[0] == pytest.approx(-s / 4, rel=1e-6)
        assert spectrum_analytic(J, beta, [0.0])[0] == pytest.approx(-s / 2, rel=1e-6)
        w = np.linspace(-50, 50, 11)
        np.testing.assert_allclose(spectrum_analytic(J, beta, w), spectrum_analytic(J, beta, -w))

    def test_equator_merges(self):
        with pytest.raises(ValueError):
            protocol_thetas(10, math.pi / 2)
        v = spectrum_analytic(10, math.pi / 2, [0.0])[0]
        assert v == pytest.approx(-spectral_sigma(10, math.pi / 2), rel=1e-12)

    def test_zero_input(self):
        th = protocol_thetas(20, 0.5)
        res = spectrum_discrete(FringeCurve(th, np.ones_like(th)), 20, 0.5)
        np.testing.assert_array_equal(res.values, 0.0)
        assert res.on_protocol

    def test_linear_and_even(self):
        th = np.linspace(0, 1, 50)
        rng = np.random.default_rng(0)
        a, b = rng.uniform(size=50), rng.uniform(size=50)
        w = np.linspace(-30, 30, 61)
        sa = spectrum_discrete(FringeCurve(th, a), 5, omegas=w).values
        sb = spectrum_discrete(FringeCurve(th, b), 5, omegas=w).values
        sab = spectrum_discrete(FringeCurve(th, a + b - 1), 5, omegas=w).values
        np.testing.assert_allclose(sab, sa + sb, atol=1e-12)
        np.testing.assert_allclose(sa, sa[::-1], atol=1e-12)

    def test_off_protocol_flagged(self):
        th = np.linspace(0, 0.1, 10)
        res = spectrum_discrete(FringeCurve(th, np.ones(10)), 20, 0.5)
        assert not res.on_protocol

    def test_nonuniform_rejected(self):
        with pytest.raises(ValueError):
            spectrum_discrete(FringeCurve(np.array([0, 0.1, 0.3]), np.ones(3)), 5, omegas=[0.0])

    def test_perfect_cat_dips(self):
        J, p = 74.5, CatParams(0.1, 0.6, 0.0)
        th = protocol_thetas(J, p.beta)
        res = spectrum_discrete(fringe_exact(mss_state(J, p), th), J, p.beta)
        for found, expected in zip(res.dips_found, res.dip_frequencies):
            assert abs(found - expected) <= res.bin_width
        for depth in res.dip_depths():
            assert depth == pytest.approx(-spectral_sigma(J, p.beta) / 4, rel=0.05)


class TestPhysicalTime:
    def test_identity(self):
        assert physical_time(1.0, 1.0, 0.5).seconds == pytest.approx(1.0)

    def test_oat_time(self):
        assert physical_time(1.0, 0.44, 74.5).oat_seconds == pytest.approx(math.pi / 0.44)

    def test_rejects_nonpositive_chi(self):
        with pytest.raises(ValueError):
            physical_time(1.0, 0.0, 1)
