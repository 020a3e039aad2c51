import numpy as np
import pytest

import multicurve as mc
from multicurve.kernels import NormForms, rkhs_norm_forms, scalar_gram

# frozen from an independent 50-digit evaluation of the closed form
K_GOLDEN_005_1_2 = 37.90247097390642
K_GOLDEN_005_3_5 = 261.26186580331987


class TestScalarKernel:
    def test_golden_values(self):
        params = mc.ScalarKernelParams(alpha=0.05)
        assert mc.scalar_kernel_eval(params, 1.0, 2.0) == pytest.approx(
            K_GOLDEN_005_1_2, rel=1e-12)
        assert mc.scalar_kernel_eval(params, 3.0, 5.0) == pytest.approx(
            K_GOLDEN_005_3_5, rel=1e-12)

    def test_zero_boundary(self):
        params = mc.ScalarKernelParams(alpha=0.05)
        for y in (0.0, 0.3, 7.3, 50.0, 2000.0):
            assert mc.scalar_kernel_eval(params, 0.0, y) == 0.0

    def test_symmetry(self):
        params = mc.ScalarKernelParams(alpha=0.11)
        rng = np.random.default_rng(3)
        xs = rng.uniform(0.0, 60.0, size=200)
        ys = rng.uniform(0.0, 60.0, size=200)
        np.testing.assert_array_equal(
            mc.scalar_kernel_eval(params, xs, ys),
            mc.scalar_kernel_eval(params, ys, xs))

    def test_example_pair_symmetry(self):
        params = mc.ScalarKernelParams(alpha=0.05)
        assert (mc.scalar_kernel_eval(params, 3.0, 5.0)
                == mc.scalar_kernel_eval(params, 5.0, 3.0))

    def test_exp_flush_guard(self):
        params = mc.ScalarKernelParams(alpha=50.0)
        val = mc.scalar_kernel_eval(params, 20.0, 20.0)  # alpha * max = 1000
        assert np.isfinite(val)
        # third term is flushed: value equals the first two terms alone
        expected = 2.0 / 50.0**3
        assert val == pytest.approx(expected, rel=1e-12)

    def test_rejects_bad_inputs(self):
        params = mc.ScalarKernelParams(alpha=0.05)
        with pytest.raises(ValueError):
            mc.scalar_kernel_eval(params, -1.0, 2.0)
        with pytest.raises(ValueError):
            mc.scalar_kernel_eval(params, np.nan, 2.0)
        with pytest.raises(ValueError):
            mc.ScalarKernelParams(alpha=0.0)

    def test_derivative_matches_finite_differences(self):
        params = mc.ScalarKernelParams(alpha=0.07)
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(100):
            x, y = rng.uniform(0.1, 40.0, size=2)
            fd = (mc.scalar_kernel_eval(params, x + h, y)
                  - mc.scalar_kernel_eval(params, x - h, y)) / (2 * h)
            assert mc.scalar_kernel_dx(params, x, y) == pytest.approx(fd, rel=1e-5)

    def test_derivative_continuous_across_diagonal(self):
        params = mc.ScalarKernelParams(alpha=0.3)
        y = 4.0
        left = mc.scalar_kernel_dx(params, y - 1e-10, y)
        right = mc.scalar_kernel_dx(params, y + 1e-10, y)
        assert left == pytest.approx(right, rel=1e-6)


class TestTaskMatrices:
    def test_uncoupled_is_diagonal(self):
        tm = mc.build_task_matrices(
            mc.GraphRegularization(gammas=[1.0, 1.0], thetas=np.zeros((2, 2))))
        np.testing.assert_array_equal(tm.Q, np.eye(2))
        np.testing.assert_allclose(tm.B, np.eye(2), atol=1e-15)

    def test_hand_inverted_two_class_case(self):
        thetas = np.array([[0.0, 3.0], [3.0, 0.0]])
        tm = mc.build_task_matrices(
            mc.GraphRegularization(gammas=[1.0, 2.0], thetas=thetas))
        np.testing.assert_array_equal(tm.Q, [[4.0, -3.0], [-3.0, 5.0]])
        np.testing.assert_allclose(
            tm.B, np.array([[5.0, 3.0], [3.0, 4.0]]) / 11.0, rtol=1e-14)

    def test_three_class_uncoupled_identity(self):
        tm = mc.build_task_matrices(
            mc.GraphRegularization(gammas=[1.0, 1.0, 1.0], thetas=np.zeros((3, 3))))
        np.testing.assert_allclose(tm.B, np.eye(3), atol=1e-15)

    def test_inverse_identity_and_spd(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            a = int(rng.integers(1, 7))
            gammas = 10.0 ** rng.uniform(-4, 1, a)
            thetas = np.zeros((a, a))
            for i in range(a):
                for j in range(i + 1, a):
                    thetas[i, j] = thetas[j, i] = rng.uniform(0, 5) * (rng.random() < 0.5)
            tm = mc.build_task_matrices(
                mc.GraphRegularization(gammas=gammas, thetas=thetas))
            np.testing.assert_allclose(tm.Q @ tm.B, np.eye(a), atol=1e-10)
            assert np.all(np.linalg.eigvalsh(tm.B) > 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            mc.GraphRegularization(gammas=[1.0, -1.0], thetas=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            mc.GraphRegularization(gammas=[1.0, 1.0],
                                   thetas=np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(ValueError):
            mc.GraphRegularization(gammas=[1.0, 1.0],
                                   thetas=np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestKernelGram:
    def test_scalar_case_scales_by_inverse_gamma(self):
        gamma = 2.5
        kernel = mc.make_kernel(0.05, [gamma])
        xs = np.array([1.0, 2.0])
        gram = mc.kernel_gram(kernel, xs)
        expected = scalar_gram(kernel.params, xs) / gamma
        np.testing.assert_allclose(gram, expected, rtol=1e-14)

    def test_matches_blockwise_construction(self):
        kernel = mc.make_kernel(0.08, [1.0, 2.0], np.array([[0.0, 3.0], [3.0, 0.0]]))
        xs = np.array([0.7, 2.0, 5.5])
        gram = mc.kernel_gram(kernel, xs)
        b = kernel.tasks.B
        n = xs.size
        for a in range(2):
            for c in range(2):
                for i in range(n):
                    for j in range(n):
                        expected = b[a, c] * mc.scalar_kernel_eval(
                            kernel.params, xs[i], xs[j])
                        assert gram[a * n + i, c * n + j] == pytest.approx(
                            expected, rel=1e-14, abs=1e-14)

    def test_positive_semidefinite_on_random_sets(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            a = int(rng.integers(1, 4))
            kernel = mc.make_kernel(rng.uniform(0.02, 0.5),
                                    10.0 ** rng.uniform(-3, 0, a),
                                    float(rng.uniform(0, 1)))
            xs = np.sort(rng.uniform(0.01, 40.0, size=int(rng.integers(2, 9))))
            gram = mc.kernel_gram(kernel, xs)
            eigs = np.linalg.eigvalsh(gram)
            assert eigs.min() >= -1e-10 * np.trace(gram)

    def test_repeated_maturities_allowed(self):
        kernel = mc.make_kernel(0.05, [1.0])
        gram = mc.kernel_gram(kernel, np.array([1.0, 1.0, 3.0]))
        eigs = np.linalg.eigvalsh(gram)
        assert eigs.min() >= -1e-10 * np.trace(gram)


class TestRKHSNorm:
    def test_zero_function(self):
        kernel = mc.make_kernel(0.05, [1.0, 1.0], 0.5)
        assert mc.rkhs_norm_of_span(kernel, [1.0, 2.0], np.zeros((2, 2))) == 0.0

    def test_scalar_reproducing_property(self):
        gamma = 3.0
        kernel = mc.make_kernel(0.05, [gamma])
        y = 4.2
        norm_sq = mc.rkhs_norm_of_span(kernel, [y], [[1.0]])
        assert norm_sq == pytest.approx(
            mc.scalar_kernel_eval(kernel.params, y, y) / gamma, rel=1e-14)

    def _component_inner_products(self, kernel, anchors, coefs):
        """Independent route: expand h_a in the scalar RKHS and pair through
        the scalar Gram matrix."""
        km = scalar_gram(kernel.params, anchors)
        w = coefs @ kernel.tasks.B  # scalar-kernel coefficients of each h_a
        return w.T @ km @ w

    def test_three_forms_agree(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            kernel = mc.make_kernel(rng.uniform(0.05, 0.8),
                                    rng.uniform(0.1, 2.0, 2),
                                    float(rng.uniform(0.0, 3.0)))
            anchors = np.sort(rng.uniform(0.1, 10.0, 3))
            coefs = rng.standard_normal((3, 2))
            forms = rkhs_norm_forms(kernel, anchors, coefs)
            assert isinstance(forms, NormForms)
            scale = max(abs(forms.gram), 1e-30)
            assert abs(forms.q_form - forms.gram) <= 1e-8 * scale
            assert abs(forms.spread_form - forms.gram) <= 1e-8 * scale

            # assemble the Q-form independently from component inner products
            inner = self._component_inner_products(kernel, anchors, coefs)
            q_indep = float(np.sum(kernel.tasks.Q * inner))
            assert forms.q_form == pytest.approx(q_indep, rel=1e-9, abs=1e-12)

    def test_spread_form_gammas_are_q_row_sums(self):
        kernel = mc.make_kernel(0.05, [0.1, 0.7, 1.3], 0.3)
        forms = rkhs_norm_forms(kernel, [1.0, 4.0], np.ones((2, 3)))
        np.testing.assert_array_equal(forms.row_sum_gammas,
                                      kernel.tasks.Q.sum(axis=1))


class TestNormalization:
    def test_identity_stays_identity(self):
        kernel = mc.make_kernel(0.05, [1.0, 1.0])
        corr, _ = mc.normalize_kernel(kernel)
        np.testing.assert_allclose(corr, np.eye(2), atol=1e-15)

    def test_hand_case(self):
        kernel = mc.make_kernel(0.05, [1.0, 1.0], 0.5)
        # overwrite-free check on a synthetic covariance via the same formula
        b = np.array([[4.0, 1.0], [1.0, 1.0]])
        d = np.sqrt(np.diag(b))
        expected = b / np.outer(d, d)
        np.testing.assert_allclose(expected, [[1.0, 0.5], [0.5, 1.0]], rtol=1e-15)
        # and the packaged computation on an actual kernel's covariance
        corr, _ = mc.normalize_kernel(kernel)
        bk = kernel.tasks.B
        assert corr[0, 1] == pytest.approx(bk[0, 1] / np.sqrt(bk[0, 0] * bk[1, 1]),
                                           rel=1e-14)
        np.testing.assert_array_equal(np.diag(corr), [1.0, 1.0])

    def test_rho_conventions(self):
        kernel = mc.make_kernel(0.05, [1.0])
        _, rho = mc.normalize_kernel(kernel)
        for x in (0.5, 1.0, 17.0):
            assert rho(x, x) == 1.0
        assert rho(0.0, 0.0) == 1.0       # equal arguments convention
        assert rho(0.0, 3.0) == 0.0       # zero variance at x = 0
        assert rho(1.0, 3.0) == pytest.approx(
            mc.scalar_kernel_eval(kernel.params, 1.0, 3.0)
            / np.sqrt(mc.scalar_kernel_eval(kernel.params, 1.0, 1.0)
                      * mc.scalar_kernel_eval(kernel.params, 3.0, 3.0)),
            rel=1e-14)

    def test_correlation_bounds(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = int(rng.integers(2, 5))
            kernel = mc.make_kernel(0.05, rng.uniform(0.01, 2.0, a),
                                    float(rng.uniform(0.0, 4.0)))
            corr, _ = mc.normalize_kernel(kernel)
            assert np.all(np.abs(corr) <= 1.0 + 1e-12)
