"""Core numerics against independent oracles: triple-loop matmul, direct
O(n^2) circular convolution, and row-reduction rank."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixerkit.core import (Rng, circular_conv_fft, flip_seq, linear_conv_fft,
                           matmul, numerical_rank, rel_error, shift_right,
                           softmax_rows)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def matmul_triple_loop(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def circular_conv_direct(x, h):
    n = len(x)
    out = np.zeros(n)
    for i in range(n):
        for j in range(n):
            out[i] += x[j] * h[(i - j) % n]
    return out


def row_reduction_rank(m, tol=1e-8):
    """Gaussian elimination with partial pivoting; counts pivots above
    tol relative to the largest entry."""
    a = np.array(m, dtype=np.float64)
    scale = np.max(np.abs(a)) or 1.0
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = int(np.argmax(np.abs(a[r:, c]))) + r
        if abs(a[piv, c]) <= tol * scale:
            continue
        a[[r, piv]] = a[[piv, r]]
        a[r] = a[r] / a[r, c]
        for rr in range(rows):
            if rr != r:
                a[rr] -= a[rr, c] * a[r]
        r += 1
    return r


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

class TestMatmul:
    def test_identity_neutral(self):
        b = Rng(0).normal((3, 5))
        assert np.array_equal(matmul(np.eye(3), b), b)

    def test_hand_computed(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b), [[3.0], [7.0]])

    def test_against_triple_loop(self):
        rng = Rng(1)
        a = rng.normal((8, 8))
        b = rng.normal((8, 8))
        assert rel_error(matmul(a, b), matmul_triple_loop(a, b)) <= 1e-14

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_associativity(self, seed):
        rng = Rng(seed)
        a, b, c = rng.normal((4, 5)), rng.normal((5, 3)), rng.normal((3, 6))
        assert rel_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


# ---------------------------------------------------------------------------
# circular convolution
# ---------------------------------------------------------------------------

class TestCircularConv:
    def test_impulse_kernel(self):
        x = Rng(2).normal((9,))
        h = np.zeros(9)
        h[0] = 1.0
        assert rel_error(circular_conv_fft(x, h), x) <= 1e-14

    def test_length_one(self):
        assert circular_conv_fft([3.0], [4.0]) == pytest.approx([12.0])

    def test_against_direct_sum_n16(self):
        rng = Rng(3)
        x, h = rng.normal((16,)), rng.normal((16,))
        assert rel_error(circular_conv_fft(x, h), circular_conv_direct(x, h)) <= 1e-12

    def test_all_lengths_to_64(self):
        rng = Rng(4)
        for n in range(1, 65):
            x, h = rng.normal((n,)), rng.normal((n,))
            assert rel_error(circular_conv_fft(x, h),
                             circular_conv_direct(x, h)) <= 1e-12, f"n={n}"

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            circular_conv_fft(np.ones(4), np.ones(5))

    def test_linear_conv_against_np_convolve(self):
        rng = Rng(30)
        for nx, nh in ((1, 1), (5, 3), (8, 15), (13, 13)):
            x, h = rng.normal((nx,)), rng.normal((nh,))
            assert rel_error(linear_conv_fft(x, h), np.convolve(x, h)) <= 1e-12

    def test_linear_conv_broadcasts(self):
        rng = Rng(31)
        x = rng.normal((2, 3, 6))
        h = rng.normal((3, 4))
        out = linear_conv_fft(x, h[None])
        assert out.shape == (2, 3, 9)
        for b in range(2):
            for c in range(3):
                assert rel_error(out[b, c], np.convolve(x[b, c], h[c])) <= 1e-12


# ---------------------------------------------------------------------------
# numerical rank
# ---------------------------------------------------------------------------

class TestNumericalRank:
    def test_outer_product_rank_one(self):
        rng = Rng(5)
        q, k = rng.normal((6,)), rng.normal((7,))
        assert numerical_rank(np.outer(q, k)) == 1

    def test_zero_matrix(self):
        assert numerical_rank(np.zeros((4, 4))) == 0

    def test_sum_of_outer_products(self):
        rng = Rng(6)
        m = sum(np.outer(rng.normal((8,)), rng.normal((8,))) for _ in range(3))
        assert numerical_rank(m, 1e-8) == 3
        assert row_reduction_rank(m) == 3

    def test_agrees_with_row_reduction(self):
        rng = Rng(7)
        for r in (1, 2, 4, 6):
            u, v = rng.normal((8, r)), rng.normal((r, 8))
            m = u @ v
            assert numerical_rank(m) == row_reduction_rank(m) == r

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_monotone_under_appending(self, seed):
        rng = Rng(seed)
        m = rng.normal((5, 4))
        r = numerical_rank(m)
        extra_row = np.vstack([m, rng.normal((1, 4))])
        extra_col = np.hstack([m, rng.normal((5, 1))])
        assert numerical_rank(extra_row) >= r
        assert numerical_rank(extra_col) >= r

    def test_invariant_under_row_permutation(self):
        rng = Rng(8)
        m = rng.normal((6, 3)) @ rng.normal((3, 6))
        perm = np.array([3, 0, 5, 1, 4, 2])
        assert numerical_rank(m[perm]) == numerical_rank(m)

    def test_rel_tol_validation(self):
        with pytest.raises(ValueError):
            numerical_rank(np.eye(3), rel_tol=2.0)


# ---------------------------------------------------------------------------
# sequence primitives
# ---------------------------------------------------------------------------

class TestFlipShift:
    def test_flip_hand(self):
        x = np.array([[1.0], [2.0], [3.0]])
        assert np.array_equal(flip_seq(x), [[3.0], [2.0], [1.0]])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    @settings(max_examples=20, deadline=None)
    def test_flip_involution(self, seed, length):
        x = Rng(seed).normal((length, 3))
        assert np.array_equal(flip_seq(flip_seq(x)), x)

    def test_flip_length_one(self):
        x = Rng(9).normal((1, 4))
        assert np.array_equal(flip_seq(x), x)

    def test_shift_hand(self):
        x = np.array([[1.0], [2.0], [3.0]])
        assert np.array_equal(shift_right(x), [[0.0], [1.0], [2.0]])

    def test_shift_length_one(self):
        assert np.array_equal(shift_right(np.array([[5.0]])), [[0.0]])

    def test_shift_nilpotent(self):
        x = Rng(10).normal((5, 2))
        for _ in range(5):
            x = shift_right(x)
        assert np.array_equal(x, np.zeros((5, 2)))

    def test_flip_shift_flip_is_left_shift(self):
        x = Rng(11).normal((6, 3))
        left = np.zeros_like(x)
        left[:-1] = x[1:]
        assert np.array_equal(flip_seq(shift_right(flip_seq(x))), left)

    def test_batched_axis(self):
        x = Rng(12).normal((2, 4, 3))
        assert np.array_equal(flip_seq(x)[0], flip_seq(x[0]))
        assert np.array_equal(shift_right(x)[1], shift_right(x[1]))


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

class TestSoftmaxRows:
    def test_constant_row_uniform(self):
        out = softmax_rows(np.full((2, 5), 3.7))
        assert np.allclose(out, 0.2, atol=1e-15)

    def test_closed_form(self):
        out = softmax_rows(np.array([[0.0, np.log(3.0)]]))
        assert np.allclose(out, [[0.25, 0.75]], atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_shift_invariance_and_normalization(self, seed):
        rng = Rng(seed)
        m = rng.normal((3, 6), std=5.0)
        out = softmax_rows(m)
        shifted = softmax_rows(m + rng.normal() * np.ones((3, 6)))
        assert np.max(np.abs(out - shifted)) <= 1e-12
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12
        assert np.all(out >= 0)


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------

class TestRng:
    def test_same_seed_bit_identical(self):
        a = Rng(1234)
        b = Rng(1234)
        assert np.array_equal(a.normal((100,)), b.normal((100,)))
        assert np.array_equal(a.uniform((50,)), b.uniform((50,)))
        assert np.array_equal(a.integers(0, 10, (20,)), b.integers(0, 10, (20,)))

    def test_children_are_independent_streams(self):
        base = Rng(7)
        x = base.child(0).normal((10,))
        y = base.child(1).normal((10,))
        assert not np.array_equal(x, y)
        assert np.array_equal(x, Rng(7).child(0).normal((10,)))

    def test_gaussian_moments(self):
        z = Rng(42).normal((200_000,))
        assert abs(float(z.mean())) < 0.01
        assert abs(float(z.std()) - 1.0) < 0.01
