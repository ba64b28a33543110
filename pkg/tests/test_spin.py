import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bloch_angle, dicke_embedding, kron_parity_stats, parity_full, random_state
from spincat.spin import (
    CatParams,
    SpinState,
    TotalSpin,
    build_operators,
    css_amplitudes,
    css_state,
    displacement_angle,
    gamma_prime_of,
    mss_norm,
    mss_state,
    parity_stats,
    q_function,
    relative_phase_profile,
    rotate_z,
    two_j_of,
    wrap_angle,
)


class TestTotalSpin:
    def test_half_integers(self):
        assert two_j_of("149/2") == 149
        assert two_j_of(Fraction(5, 2)) == 5
        assert two_j_of(74.5) == 149
        assert TotalSpin.of(2.5).dim == 6
        assert str(TotalSpin.of(74.5)) == "149/2"

    @pytest.mark.parametrize("bad", [0.3, -1, "1/3", 2.25])
    def test_rejects_non_half_integers(self, bad):
        with pytest.raises(ValueError):
            two_j_of(bad)


class TestOperators:
    def test_spin_half(self):
        ops = build_operators(0.5)
        np.testing.assert_array_equal(ops.jx, [[0, 0.5], [0.5, 0]])
        np.testing.assert_array_equal(ops.jz, np.diag([0.5, -0.5]))

    def test_spin_one(self):
        ops = build_operators(1)
        np.testing.assert_allclose(np.diag(ops.jx, 1), [1 / math.sqrt(2)] * 2, rtol=1e-15)
        np.testing.assert_array_equal(np.diag(ops.jz), [1, 0, -1])

    def test_rejects_zero_spin(self):
        with pytest.raises(ValueError):
            build_operators(0)

    @pytest.mark.parametrize("two_j", range(1, 41))
    def test_parity_algebra_exact(self, two_j):
        ops = build_operators(two_j / 2)
        x = ops.parity
        np.testing.assert_array_equal(x @ x, np.eye(ops.dim))
        np.testing.assert_array_equal(x @ ops.jz @ x, -ops.jz)
        np.testing.assert_array_equal(x @ ops.jx @ x, ops.jx)
        np.testing.assert_array_equal(ops.jx, ops.jx.T)

    def test_commutator_closes(self):
        # [Jz, Jx] = i Jy with Jy Hermitian; check [Jx, [Jz, Jx]] against Jz via the Casimir-free identity
        ops = build_operators(3.5)
        jp = np.diag(np.diag(ops.jx, 1) * 2, 1)  # raising operator J+ in M-descending order
        jy = (jp - jp.T) / (2j)
        np.testing.assert_allclose(ops.jx @ jy - jy @ ops.jx, 1j * ops.jz, atol=1e-12)
        casimir = ops.jx @ ops.jx + jy @ jy + ops.jz @ ops.jz
        np.testing.assert_allclose(casimir, 3.5 * 4.5 * np.eye(ops.dim), atol=1e-12)

    def test_parity_matches_kronecker_at_n4(self):
        ops = build_operators(2)
        emb = dicke_embedding(4)
        reduced = emb.T @ parity_full(4) @ emb
        np.testing.assert_allclose(reduced, ops.parity, atol=1e-14)
        e0 = np.zeros(5)
        e0[0] = 1
        np.testing.assert_array_equal(ops.parity @ e0, np.eye(5)[4])


class TestCoherentStates:
    def test_equator_spin_one(self):
        np.testing.assert_allclose(css_state(1, 0, math.pi / 2).amps, [0.5, 1 / math.sqrt(2), 0.5], atol=1e-15)

    def test_south_pole_phase(self):
        np.testing.assert_allclose(css_state(0.5, math.pi / 2, math.pi).amps, [0, 1j], atol=1e-15)

    @pytest.mark.parametrize("J", [20, 100, 250, 500])
    def test_norm_large_J(self, J):
        assert abs(np.linalg.norm(css_amplitudes(J, 0.3, 0.6)) - 1) < 1e-10

    def test_log_space_against_exact_arithmetic(self):
        # J=20: exact binomials and powers in double precision are still finite
        J, a, b = 20, 0.3, 0.6
        n = np.arange(41)
        direct = np.array([math.sqrt(math.comb(40, k)) for k in n]) * np.cos(b / 2) ** (40 - n) * np.sin(b / 2) ** n * np.exp(1j * n * a)
        np.testing.assert_allclose(css_amplitudes(J, a, b), direct, rtol=1e-12, atol=1e-300)

    def test_matches_product_state(self):
        a, b = 0.7, 1.1
        single = np.array([math.cos(b / 2), np.exp(1j * a) * math.sin(b / 2)])
        full = np.kron(np.kron(single, single), single)
        np.testing.assert_allclose(dicke_embedding(3).T @ full, css_amplitudes(1.5, a, b), atol=1e-14)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            css_state(2, 0.0, 4.0)


class TestCatStates:
    def test_norm_examples(self):
        assert mss_norm(1, 0, math.pi / 4, 0) == pytest.approx(math.sqrt(3), abs=1e-15)
        for g in (0.0, 1.0, 2.5):
            assert mss_norm(1, math.pi / 2, math.pi / 2, g) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_norm_against_overlap_oracle(self):
        J, a, b, g = 5, 0.2, 0.7, 0.5
        c1, c2 = css_state(J, a, b), css_state(J, -a, math.pi - b)
        v = c1.amps + np.exp(1j * g) * c2.amps
        assert mss_norm(J, a, b, g) == pytest.approx(np.linalg.norm(v), abs=1e-13)

    def test_equatorial_pair(self):
        s = mss_state(1, CatParams(math.pi / 2, math.pi / 2, 0.0))
        ref = (css_state(1, math.pi / 2, math.pi / 2).amps + np.exp(1j * 2 * math.pi / 2) * css_state(1, -math.pi / 2, math.pi / 2).amps) / math.sqrt(2)
        np.testing.assert_allclose(s.amps, ref, atol=1e-15)

    @pytest.mark.parametrize("two_j", range(1, 41))
    def test_component_form_matches_css_sum(self, two_j):
        J = two_j / 2
        rng = np.random.default_rng(two_j)
        a, b, gp = rng.uniform(-3, 3), rng.uniform(0.1, 3.0), rng.uniform(-3, 3)
        s = mss_state(J, CatParams(a, b, gp))
        gamma = gp + 2 * J * a
        v = css_state(J, a, b).amps + np.exp(1j * gamma) * css_state(J, -a, math.pi - b).amps
        np.testing.assert_allclose(s.amps, v / np.linalg.norm(v), atol=1e-12)

    def test_relative_phase_between_mirror_components(self):
        J, a, b, gp = 2, 0.4, 0.6, 1.0
        s = mss_state(J, CatParams(a, b, gp))
        # amplitude on |J, -J+n> is amplitude on |J, J-n> of the mirrored branch times e^{i gamma'}
        c = css_amplitudes(J, a, b)
        for n in range(5):
            np.testing.assert_allclose(s.amps[4 - n] * mss_norm(J, a, b, gp + 2 * J * a), c[4 - n] + np.exp(1j * gp) * c[n], atol=1e-14)

    @pytest.mark.parametrize("a", [0.0, math.pi])
    def test_excluded_points(self, a):
        with pytest.raises(ValueError):
            CatParams(a, math.pi / 2, 0.0)

    def test_mirrored_is_same_state(self):
        p = CatParams(0.4, 0.6, 0.3)
        s1, s2 = mss_state(7, p), mss_state(7, p.mirrored())
        assert abs(abs(s1.overlap(s2)) - 1) < 1e-12

    def test_gamma_prime_conversion(self):
        assert gamma_prime_of(2, 0.25, 1.0) == pytest.approx(0.0)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)


class TestDisplacementAngle:
    def test_examples(self):
        assert displacement_angle(math.pi / 2, math.pi / 2) == pytest.approx(math.pi)
        assert displacement_angle(0, math.pi / 4) == pytest.approx(math.pi / 2)

    def test_bloch_oracle_random(self):
        rng = np.random.default_rng(1)
        for a, b in zip(rng.uniform(-math.pi, math.pi, 1000), rng.uniform(0, math.pi, 1000)):
            assert displacement_angle(a, b) == pytest.approx(bloch_angle(a, b, -a, math.pi - b), abs=1e-7)

    def test_bloch_oracle_tight_away_from_endpoints(self):
        # arccos loses digits near 0 and pi; compare at 1e-12 where the argument is well inside (-1, 1)
        rng = np.random.default_rng(2)
        a = rng.uniform(-math.pi, math.pi, 1000)
        b = rng.uniform(0, math.pi, 1000)
        for ai, bi in zip(a, b):
            d = displacement_angle(ai, bi)
            if 0.05 < d < math.pi - 0.05:
                assert d == pytest.approx(bloch_angle(ai, bi, -ai, math.pi - bi), abs=1e-12)


class TestRotationAndParity:
    def test_rotation_identity_and_periodicity(self):
        s = css_state(3, 0.2, 0.9)
        np.testing.assert_array_equal(rotate_z(s, 0.0).amps, s.amps)
        np.testing.assert_allclose(rotate_z(s, 2 * math.pi).amps, s.amps, atol=1e-13)
        h = css_state(2.5, 0.2, 0.9)
        np.testing.assert_allclose(rotate_z(h, 2 * math.pi).amps, -h.amps, atol=1e-13)

    def test_jx_vanishes_after_quarter_turn(self):
        ops = build_operators(4)
        s = rotate_z(css_state(4, 0, math.pi / 2), math.pi / 2)
        assert abs(np.vdot(s.amps, ops.jx @ s.amps)) < 1e-13

    def test_parity_examples(self):
        assert parity_stats(css_state(6, 0, math.pi / 2)) == pytest.approx((1.0, 0.0), abs=1e-13)
        v = np.zeros(11, complex)
        v[0] = v[-1] = 1 / math.sqrt(2)
        assert parity_stats(SpinState(5, v))[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_kronecker_oracle(self, n):
        rng = np.random.default_rng(n)
        for _ in range(100):
            amps = random_state(rng, n + 1)
            mean, var = parity_stats(SpinState(n / 2, amps))
            ref_mean, ref_var = kron_parity_stats(amps)
            assert abs(mean - ref_mean[0]) < 1e-12
            assert abs(var - ref_var[0]) < 1e-12


class TestSpinState:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError):
            SpinState(1, np.array([1, 1, 0], complex))
        with pytest.raises(ValueError):
            SpinState(1, np.array([1, 0], complex))

    def test_immutable(self):
        s = css_state(2, 0.1, 0.2)
        with pytest.raises(ValueError):
            s.amps[0] = 0

    def test_json_roundtrip(self):
        s = mss_state(74.5, CatParams(0.1, 0.6, 0.0))
        d = s.to_dict()
        assert d["J"] == "149/2"
        back = SpinState.from_dict(d)
        np.testing.assert_array_equal(back.amps, s.amps)
        assert back.J == s.J


class TestQFunction:
    def test_normalization_j10(self):
        grid = q_function(mss_state(10, CatParams(0.4, 0.6, 0.0)))
        assert grid.integral() == pytest.approx(1.0, abs=1e-3)
        assert np.all(grid.values >= 0)

    def test_peak_at_css(self):
        a0, b0 = math.pi / 2, math.pi / 4
        grid = q_function(css_state(10, a0, b0), n_alpha=201, n_beta=101)
        a, b, q = grid.peak()
        assert (a, b) == pytest.approx((a0, b0), abs=1e-12)
        assert q == pytest.approx(21 / (4 * math.pi), rel=1e-12)

    def test_two_lobes_for_cat(self):
        p = CatParams(0.3, 0.6, 0.0)
        grid = q_function(mss_state(50, p), n_alpha=201, n_beta=201)
        v = grid.values
        top = np.argsort(v, axis=None)[::-1]
        i, j = np.unravel_index(top[0], v.shape)
        lobes = {(round(grid.alphas[j], 1), round(grid.betas[i], 1))}
        # the mirrored lobe carries the same weight
        j2 = int(np.argmin(np.abs(grid.alphas + grid.alphas[j])))
        i2 = int(np.argmin(np.abs(grid.betas - (math.pi - grid.betas[i]))))
        assert v[i2, j2] == pytest.approx(v[i, j], rel=1e-6)
        assert {abs(grid.alphas[j] - 0.3) < 0.05 or abs(grid.alphas[j] + 0.3) < 0.05} == {True}
        assert lobes

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            q_function(css_state(1, 0, 1), alphas=[])


class TestRelativePhase:
    def test_symmetric_and_antisymmetric(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=9) + 1j * rng.normal(size=9)
        even = (v + v[::-1]) / np.linalg.norm(v + v[::-1])
        odd = (v - v[::-1]) / np.linalg.norm(v - v[::-1])
        assert all(e.gamma_prime == 0 for e in relative_phase_profile(SpinState(4, even)) if e.defined)
        prof = relative_phase_profile(SpinState(4, odd))
        assert all(abs(abs(e.gamma_prime) - math.pi) < 1e-12 for e in prof if e.defined)
        assert not prof[-1].defined  # M = 0 has no partner amplitude in an odd state

    def test_threshold_flags(self):
        v = np.zeros(5, complex)
        v[1] = v[3] = 1 / math.sqrt(2)
        prof = relative_phase_profile(SpinState(2, v))
        assert [e.defined for e in prof] == [False, True, False]


@settings(max_examples=60, deadline=None)
@given(
    two_j=st.integers(1, 60),
    a=st.floats(-math.pi + 1e-3, math.pi),
    b=st.floats(0.01, math.pi - 0.01),
    g=st.floats(-math.pi + 1e-3, math.pi),
)
def test_cat_state_normalized_property(two_j, a, b, g):
    if abs(b - math.pi / 2) < 1e-3 and (abs(a) < 1e-3 or abs(abs(a) - math.pi) < 1e-3):
        return
    s = mss_state(two_j / 2, CatParams(a, b, g))
    assert abs(s.norm() - 1) < 1e-10
