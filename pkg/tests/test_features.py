import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from k2ie.features import (
    FeatureMap,
    KernelParams,
    build_feature_map,
    features,
    halton_normal,
    kernel_approx,
    kernel_exact,
)


class TestKernelParams:
    @pytest.mark.parametrize("beta", [[0.0], [-1.0], [np.nan], []])
    def test_invalid(self, beta):
        with pytest.raises(ValueError):
            KernelParams(beta)

    def test_round_trip(self):
        p = KernelParams([2.0, 0.5])
        assert KernelParams.from_dict(p.to_dict()) == p


class TestKernelExact:
    def test_diagonal(self):
        assert kernel_exact(KernelParams([1.7]), [0.3], [0.3])[0, 0] == 1.0

    def test_1d(self):
        assert kernel_exact(KernelParams([1.0]), [0.0], [1.0])[0, 0] == pytest.approx(0.367879, abs=1e-6)

    def test_2d(self):
        val = kernel_exact(KernelParams([1.0, 2.0]), [[1.0, 1.0]], [[0.0, 0.0]])[0, 0]
        assert val == pytest.approx(np.exp(-5.0), rel=1e-14)


class TestBuildFeatureMap:
    def test_structure_m1(self):
        fm = build_feature_map(KernelParams([1.0]), 1, seed=3)
        assert fm.omega.shape == (2, 1)
        assert fm.omega[0, 0] == fm.omega[1, 0]
        np.testing.assert_array_equal(fm.theta, [0.0, -np.pi / 2])

    @pytest.mark.parametrize("qmc", [True, False])
    def test_blocks_share_frequencies(self, qmc):
        fm = build_feature_map(KernelParams([1.0, 2.0]), 50, seed=1, qmc=qmc)
        np.testing.assert_array_equal(fm.omega[:50], fm.omega[50:])
        assert np.all(fm.theta[:50] == 0) and np.all(fm.theta[50:] == -np.pi / 2)

    def test_variance_1d(self):
        fm = build_feature_map(KernelParams([1.0]), 250, seed=0, qmc=True)
        assert fm.base_omega.var() == pytest.approx(2.0, abs=0.1)

    def test_variance_per_axis(self):
        fm = build_feature_map(KernelParams([2.0, 0.5]), 250, seed=0, qmc=True)
        v = fm.base_omega.var(axis=0)
        np.testing.assert_allclose(v, [8.0, 0.5], rtol=0.05)

    def test_determinism(self):
        a = build_feature_map(KernelParams([1.0, 1.0]), 100, seed=7)
        b = build_feature_map(KernelParams([1.0, 1.0]), 100, seed=7)
        np.testing.assert_array_equal(a.omega, b.omega)
        c = build_feature_map(KernelParams([1.0, 1.0]), 100, seed=8)
        assert not np.array_equal(a.omega, c.omega)

    def test_read_only(self):
        fm = build_feature_map(KernelParams([1.0]), 5)
        with pytest.raises(ValueError):
            fm.omega[0, 0] = 1.0

    def test_rejects_broken_structure(self):
        p = KernelParams([1.0])
        with pytest.raises(ValueError):
            FeatureMap(p, 1, np.array([[1.0], [2.0]]), np.array([0.0, -np.pi / 2]))
        with pytest.raises(ValueError):
            FeatureMap(p, 1, np.array([[1.0], [1.0]]), np.array([0.0, 0.0]))

    def test_halton_skips_origin(self):
        z = halton_normal(16, 2, scramble=False)
        assert np.all(np.isfinite(z))

    def test_m_positive(self):
        with pytest.raises(ValueError):
            build_feature_map(KernelParams([1.0]), 0)


class TestFeatures:
    def test_origin(self):
        fm = build_feature_map(KernelParams([1.0, 1.0]), 40)
        phi = features(fm, np.zeros(2))[0]
        np.testing.assert_allclose(phi[:40], 1 / np.sqrt(40))
        np.testing.assert_allclose(phi[40:], 0.0)

    def test_matches_phase_formula(self, rng):
        fm = build_feature_map(KernelParams([0.7, 1.3]), 30)
        x = rng.uniform(-3, 3, size=(5, 2))
        direct = np.cos(x @ fm.omega.T + fm.theta) / np.sqrt(fm.M)
        np.testing.assert_allclose(features(fm, x), direct, atol=1e-14)

    def test_unit_norm(self, rng):
        fm = build_feature_map(KernelParams([1.0, 1.0, 1.0]), 100)
        phi = features(fm, rng.normal(size=(20, 3)))
        np.testing.assert_allclose((phi**2).sum(axis=1), 1.0, atol=1e-12)

    def test_approximates_kernel(self):
        fm = build_feature_map(KernelParams([1.0, 1.0]), 250)
        val = kernel_approx(fm, [[1.0, 0.0]], [[0.0, 0.0]])[0, 0]
        assert abs(val - np.exp(-1.0)) <= 0.05

    def test_dimension_mismatch(self):
        fm = build_feature_map(KernelParams([1.0, 1.0]), 5)
        with pytest.raises(ValueError):
            features(fm, np.zeros((3, 3)))

    def test_outside_any_window(self):
        fm = build_feature_map(KernelParams([1.0]), 5)
        assert np.all(np.isfinite(features(fm, [1e3, -1e3])))


class TestApproximationInvariants:
    # accuracy at beta = 1 degrades with dimension; see the decisions ledger
    @pytest.mark.parametrize("d,beta", [(1, 1.0), (2, 0.25), (3, 0.25)])
    def test_uniform_error(self, d, beta):
        fm = build_feature_map(KernelParams([beta] * d), 250, seed=0)
        rng = np.random.default_rng(d)
        x = rng.uniform(-2, 2, size=(100, d))
        y = rng.uniform(-2, 2, size=(100, d))
        approx = np.sum(features(fm, x) * features(fm, y), axis=1)
        exact = np.exp(-np.sum((beta * (x - y)) ** 2, axis=1))
        assert np.max(np.abs(approx - exact)) <= 0.05

    @given(st.integers(1, 3), st.integers(0, 1000))
    def test_symmetric_exactly(self, d, seed):
        fm = build_feature_map(KernelParams([1.0] * d), 20, seed=seed)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(4, d)), rng.normal(size=(6, d))
        np.testing.assert_array_equal(kernel_approx(fm, x, y), kernel_approx(fm, y, x).T)

    @given(st.integers(1, 3), st.integers(0, 1000))
    def test_gram_psd(self, d, seed):
        fm = build_feature_map(KernelParams([1.0] * d), 20, seed=seed)
        x = np.random.default_rng(seed).normal(size=(30, d))
        G = kernel_approx(fm, x, x)
        assert np.linalg.eigvalsh(0.5 * (G + G.T)).min() >= -1e-10

    @given(st.integers(1, 3), st.integers(0, 1000), st.floats(-10, 10))
    def test_shift_invariance(self, d, seed, shift):
        fm = build_feature_map(KernelParams([1.0] * d), 30, seed=seed)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(5, d)), rng.normal(size=(5, d))
        t = np.full(d, shift)
        np.testing.assert_allclose(kernel_approx(fm, x + t, y + t), kernel_approx(fm, x, y), atol=1e-12)
