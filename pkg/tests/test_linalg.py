import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nystromnet.linalg import NotPSDError, fwht, hadamard, inv_sqrt_psd, next_pow2, sym_eig

H4 = np.array([[1, 1, 1, 1],
               [1, -1, 1, -1],
               [1, 1, -1, -1],
               [1, -1, -1, 1]], dtype=float)


class TestSymEig:
    def test_identity(self):
        lam, u = sym_eig(np.eye(3))
        np.testing.assert_allclose(lam, [1, 1, 1])
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)

    def test_diagonal_sorted_descending(self):
        lam, u = sym_eig(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(lam, [9, 4])
        np.testing.assert_allclose(np.abs(u), [[0, 1], [1, 0]], atol=1e-15)

    def test_reconstruction_random(self, rng):
        a = rng.standard_normal((8, 8))
        a = a + a.T
        lam, u = sym_eig(a)
        assert np.abs(u @ np.diag(lam) @ u.T - a).max() <= 1e-8 * np.abs(a).max()
        np.testing.assert_allclose(u.T @ u, np.eye(8), atol=1e-8)
        assert np.all(np.diff(lam) <= 0)

    def test_2x2_characteristic_roots(self):
        a, b, c = 2.0, 0.5, -1.0
        # roots of t^2 - (a+c) t + (ac - b^2)
        tr, det = a + c, a * c - b * b
        roots = sorted([(tr + np.sqrt(tr * tr - 4 * det)) / 2, (tr - np.sqrt(tr * tr - 4 * det)) / 2], reverse=True)
        lam, _ = sym_eig(np.array([[a, b], [b, c]]))
        np.testing.assert_allclose(lam, roots, atol=1e-10)

    def test_3x3_characteristic_roots(self):
        # tridiagonal [[2,-1,0],[-1,2,-1],[0,-1,2]] has eigenvalues 2 - 2 cos(k pi / 4)
        a = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
        expected = sorted([2 - 2 * np.cos(k * np.pi / 4) for k in (1, 2, 3)], reverse=True)
        np.testing.assert_allclose(sym_eig(a)[0], expected, atol=1e-10)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            sym_eig(np.ones((2, 3)))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestInvSqrtPsd:
    def test_identity(self):
        np.testing.assert_allclose(inv_sqrt_psd(np.eye(4)), np.eye(4), atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(inv_sqrt_psd(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-14)

    def test_clamps_null_space(self):
        np.testing.assert_allclose(inv_sqrt_psd(np.diag([4.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-14)

    def test_whitening_well_conditioned(self, rng):
        b = rng.standard_normal((6, 6))
        a = b @ b.T + 6 * np.eye(6)
        w = inv_sqrt_psd(a)
        np.testing.assert_allclose(w, w.T, atol=0)
        np.testing.assert_allclose(w @ a @ w, np.eye(6), atol=1e-8)

    def test_projection_on_rank_deficient(self, rng):
        b = rng.standard_normal((6, 3))
        a = b @ b.T
        w = inv_sqrt_psd(a)
        p = w @ a @ w
        # idempotent projection of rank 3 onto the column space of b
        np.testing.assert_allclose(p @ p, p, atol=1e-8)
        assert round(np.trace(p)) == 3
        np.testing.assert_allclose(p @ b, b, atol=1e-8)

    def test_not_psd(self):
        with pytest.raises(NotPSDError):
            inv_sqrt_psd(np.diag([1.0, -0.5]))


class TestFwht:
    def test_examples(self):
        np.testing.assert_array_equal(fwht([1, 0, 0, 0]), [1, 1, 1, 1])
        np.testing.assert_array_equal(fwht([1, 1, 1, 1]), [4, 0, 0, 0])
        np.testing.assert_array_equal(fwht([1, 2, 3, 4]), H4 @ [1, 2, 3, 4])
        np.testing.assert_array_equal(fwht([1, 2, 3, 4]), [10, -2, -4, 0])

    def test_matches_dense_batch(self, rng):
        v = rng.standard_normal((5, 64))
        np.testing.assert_allclose(fwht(v), v @ hadamard(64).T, atol=1e-12)

    def test_hadamard_oracle(self):
        np.testing.assert_array_equal(hadamard(4), H4)

    @pytest.mark.parametrize("n", [0, 3, 6, 12])
    def test_rejects_non_power_of_two(self, n):
        with pytest.raises(ValueError):
            fwht(np.ones(n))

    @settings(max_examples=50, deadline=None)
    @given(k=st.integers(0, 10), data=st.data())
    def test_involution(self, k, data):
        n = 1 << k
        v = data.draw(arrays(np.float64, n, elements=st.floats(-1e3, 1e3)))
        back = fwht(fwht(v))
        assert np.abs(back - n * v).max() <= 1e-10 * max(1.0, n * np.abs(v).max())

    def test_input_untouched(self):
        v = np.arange(8.0)
        fwht(v)
        np.testing.assert_array_equal(v, np.arange(8.0))

    def test_faster_than_dense(self, rng):
        n = 1 << 12
        h = hadamard(n)
        v = rng.standard_normal(n)
        t0 = time.perf_counter()
        for _ in range(5):
            fwht(v)
        t_fast = time.perf_counter() - t0
        t0 = time.perf_counter()
        for _ in range(5):
            h @ v
        t_dense = time.perf_counter() - t0
        assert t_fast < t_dense


def test_next_pow2():
    assert [next_pow2(n) for n in (1, 2, 3, 5, 64, 65)] == [1, 2, 4, 8, 64, 128]
