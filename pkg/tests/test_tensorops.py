"""Kernel-level tests: every op checked against a hand-rolled oracle."""

import numpy as np
import pytest

from sparsecut import tensorops as T
from sparsecut.errors import ShapeError


def matmul_oracle(a, b):
    # deliberately dumb triple loop, independent of BLAS
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 4))
        assert np.allclose(T.matmul(a, np.eye(4)), a, atol=1e-12)
        assert np.allclose(T.matmul(np.eye(4), a), a, atol=1e-12)

    def test_hand_worked_2x2(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expect = np.array([[19.0, 22.0], [43.0, 50.0]])
        assert np.array_equal(T.matmul(a, b), expect)

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        got = T.matmul(a, b)
        want = matmul_oracle(a, b)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_non_2d_raises(self):
        with pytest.raises(ShapeError):
            T.matmul(np.zeros(3), np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            T.matmul(np.zeros((2, 3)), np.zeros((3, 2, 1)))

    def test_associativity_within_tolerance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.standard_normal((4, 6))
            b = rng.standard_normal((6, 5))
            c = rng.standard_normal((5, 3))
            left = T.matmul(T.matmul(a, b), c)
            right = T.matmul(a, T.matmul(b, c))
            assert np.max(np.abs(left - right)) < 1e-9


class TestMacCounter:
    def test_exact_count_single_product(self):
        with T.counting() as counter:
            T.matmul(np.zeros((5, 7)), np.zeros((7, 3)))
        assert counter.count == 5 * 7 * 3

    def test_accumulates_across_ops(self):
        with T.counting() as counter:
            T.matmul(np.zeros((2, 3)), np.zeros((3, 4)))
            T.matmul(np.zeros((4, 4)), np.zeros((4, 4)))
        assert counter.count == 2 * 3 * 4 + 4 * 4 * 4

    def test_disabled_counter_counts_nothing(self):
        counter = T.MacCounter(enabled=False)
        with T.counting(counter):
            T.matmul(np.zeros((5, 5)), np.zeros((5, 5)))
        assert counter.count == 0

    def test_reset(self):
        counter = T.MacCounter()
        with T.counting(counter):
            T.matmul(np.zeros((2, 2)), np.zeros((2, 2)))
        counter.reset()
        assert counter.count == 0

    def test_no_active_counter_is_fine(self):
        assert T.active_counter() is None
        T.matmul(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_nested_contexts_isolate(self):
        with T.counting() as outer:
            T.matmul(np.zeros((2, 2)), np.zeros((2, 2)))
            with T.counting() as inner:
                T.matmul(np.zeros((3, 3)), np.zeros((3, 3)))
            T.matmul(np.zeros((2, 2)), np.zeros((2, 2)))
        assert inner.count == 27
        assert outer.count == 16

    def test_attention_count_covers_projection_free_kernel(self):
        # scores m*d*m plus weighted sum m*m*d, nothing for softmax
        m, d = 6, 4
        rng = np.random.default_rng(3)
        q, k, v = (rng.standard_normal((m, d)) for _ in range(3))
        with T.counting() as counter:
            T.scaled_dot_attention(q, k, v)
        assert counter.count == 2 * m * m * d


class TestSoftmaxRows:
    def test_uniform_logits(self):
        out = T.softmax_rows(np.zeros((1, 3)))
        assert np.allclose(out, np.full((1, 3), 1.0 / 3.0), atol=1e-15)

    def test_large_gap_saturates(self):
        out = T.softmax_rows(np.array([[1000.0, 0.0]]))
        assert abs(out[0, 0] - 1.0) < 1e-12
        assert out[0, 1] < 1e-12

    def test_against_direct_formula(self):
        a = np.array([[1.0, 2.0, 3.0]])
        e = np.exp(a[0])
        assert np.allclose(T.softmax_rows(a)[0], e / e.sum(), atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.standard_normal((5, 8)) * 10.0
            out = T.softmax_rows(a)
            assert np.all(out >= 0.0)
            assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_column_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 6))
        perm = rng.permutation(6)
        direct = T.softmax_rows(a[:, perm])
        permuted = T.softmax_rows(a)[:, perm]
        assert np.allclose(direct, permuted, atol=1e-15)

    def test_huge_inputs_stay_finite(self):
        out = T.softmax_rows(np.array([[1e300, 1e300, -1e300]]))
        assert np.all(np.isfinite(out))
        assert abs(out[0, :2].sum() - 1.0) < 1e-12


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        gain = np.ones(4)
        bias = np.zeros(4)
        out = T.layer_norm(np.full((2, 4), 3.7), gain, bias)
        assert np.allclose(out, 0.0, atol=1e-6)

    def test_two_point_row(self):
        out = T.layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-12)
        assert np.allclose(out, [[-1.0, 1.0]], atol=1e-6)

    def test_against_direct_formula(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((4, 9)) * 3.0 + 1.0
        gain = rng.standard_normal(9)
        bias = rng.standard_normal(9)
        eps = 1e-12
        mean = a.mean(axis=1, keepdims=True)
        var = a.var(axis=1, keepdims=True)
        want = (a - mean) / np.sqrt(var + eps) * gain + bias
        assert np.allclose(T.layer_norm(a, gain, bias, eps=eps), want, atol=1e-12)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((6, 16)) * 5.0
        out = T.layer_norm(a, np.ones(16), np.zeros(16), eps=1e-12)
        assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
        assert np.allclose(out.var(axis=1), 1.0, atol=1e-9)

    def test_bad_gain_shape_raises(self):
        with pytest.raises(ShapeError):
            T.layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(4))


class TestScaledDotAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(8)
        q = rng.standard_normal((5, 3))
        k = rng.standard_normal((1, 3))
        v = rng.standard_normal((1, 4))
        out = T.scaled_dot_attention(q, k, v)
        assert np.allclose(out, np.repeat(v, 5, axis=0), atol=1e-12)

    def test_causal_first_row_sees_only_first_value(self):
        rng = np.random.default_rng(9)
        q, k = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        v = rng.standard_normal((4, 5))
        out = T.scaled_dot_attention(q, k, v, causal=True)
        assert np.array_equal(out[0], v[0])

    def test_against_per_row_oracle(self):
        rng = np.random.default_rng(10)
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((6, 4))
        v = rng.standard_normal((6, 2))
        out = T.scaled_dot_attention(q, k, v)
        for i in range(3):
            scores = np.array([q[i] @ k[j] for j in range(6)]) / np.sqrt(4)
            w = np.exp(scores - scores.max())
            w /= w.sum()
            want = sum(w[j] * v[j] for j in range(6))
            assert np.allclose(out[i], want, atol=1e-12)

    def test_causal_requires_square_scores(self):
        with pytest.raises(ShapeError):
            T.scaled_dot_attention(np.zeros((3, 2)), np.zeros((4, 2)),
                                   np.zeros((4, 2)), causal=True)

    def test_convex_hull_of_values(self):
        # each output row is a convex combination of value rows, so it must
        # stay inside the per-coordinate min/max envelope
        rng = np.random.default_rng(11)
        for _ in range(10):
            q = rng.standard_normal((4, 3)) * 4.0
            k = rng.standard_normal((7, 3)) * 4.0
            v = rng.standard_normal((7, 5))
            out = T.scaled_dot_attention(q, k, v)
            lo, hi = v.min(axis=0), v.max(axis=0)
            assert np.all(out >= lo - 1e-9)
            assert np.all(out <= hi + 1e-9)

    def test_causal_exactness_bitwise(self):
        # changing the future must not change the past at all
        rng = np.random.default_rng(12)
        q, k = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        v = rng.standard_normal((5, 3))
        base = T.scaled_dot_attention(q, k, v, causal=True)
        k2, v2 = k.copy(), v.copy()
        k2[3:] += 100.0
        v2[3:] -= 50.0
        q2 = q.copy()
        q2[3:] *= -2.0
        perturbed = T.scaled_dot_attention(q2, k2, v2, causal=True)
        assert np.array_equal(base[:3], perturbed[:3])


class TestGelu:
    def test_fixed_points(self):
        assert T.gelu(0.0) == 0.0
        assert abs(T.gelu(1.0) - 0.8413447460685429) < 1e-12

    def test_grad_matches_finite_difference(self):
        xs = np.linspace(-3.0, 3.0, 25)
        eps = 1e-6
        num = (T.gelu(xs + eps) - T.gelu(xs - eps)) / (2 * eps)
        assert np.max(np.abs(num - T.gelu_grad(xs))) < 1e-9


class TestMultiHeadAttention:
    def test_single_head_reduces_to_plain_attention(self):
        rng = np.random.default_rng(13)
        d = 6
        x = rng.standard_normal((5, d))
        wq, wk, wv = (rng.standard_normal((d, d)) for _ in range(3))
        got = T.multi_head_attention(x, x, wq, wk, wv, np.eye(d), heads=1)
        want = T.scaled_dot_attention(x @ wq, x @ wk, x @ wv)
        assert np.allclose(got, want, atol=1e-12)

    def test_head_split_matches_manual_slices(self):
        rng = np.random.default_rng(14)
        d, heads = 8, 2
        x = rng.standard_normal((4, d))
        wq, wk, wv, wo = (rng.standard_normal((d, d)) for _ in range(4))
        got = T.multi_head_attention(x, x, wq, wk, wv, wo, heads=heads)
        q, k, v = x @ wq, x @ wk, x @ wv
        pieces = [
            T.scaled_dot_attention(q[:, s], k[:, s], v[:, s])
            for s in (slice(0, 4), slice(4, 8))
        ]
        assert np.allclose(got, np.concatenate(pieces, axis=1) @ wo, atol=1e-12)

    def test_indivisible_heads_raise(self):
        x = np.zeros((3, 6))
        w = np.zeros((6, 6))
        with pytest.raises(ShapeError):
            T.multi_head_attention(x, x, w, w, w, w, heads=4)

    def test_mac_count_matches_closed_form(self):
        rng = np.random.default_rng(15)
        m, mk, d, heads = 5, 7, 8, 2
        xq = rng.standard_normal((m, d))
        xc = rng.standard_normal((mk, d))
        ws = [rng.standard_normal((d, d)) for _ in range(4)]
        with T.counting() as counter:
            T.multi_head_attention(xq, xc, *ws, heads=heads)
        want = m * d * d + 2 * mk * d * d + 2 * m * mk * d + m * d * d
        assert counter.count == want


class TestSeededRng:
    def test_same_path_same_stream(self):
        a = T.seeded_rng(7, "encoder", 3).standard_normal(5)
        b = T.seeded_rng(7, "encoder", 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_different_path_different_stream(self):
        a = T.seeded_rng(7, "encoder", 3).standard_normal(5)
        b = T.seeded_rng(7, "encoder", 4).standard_normal(5)
        c = T.seeded_rng(8, "encoder", 3).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_pathless_root_stream(self):
        a = T.seeded_rng(0).standard_normal(3)
        b = T.seeded_rng(0).standard_normal(3)
        assert np.array_equal(a, b)
