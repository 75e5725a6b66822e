"""Occupancy-keyed attention and the parallel-ray overlap identity."""

import numpy as np
import pytest

from frustumocc.geometry import OrientedBox3D
from frustumocc.lifting import FeatureMap
from frustumocc.propagation import (
    AttentionConfig,
    OccupancyTokenSet,
    analytic_overlap,
    empirical_overlap,
    occupancy_attention,
    occupancy_attention_grad,
    overlap_sweep,
    stable_softmax,
)


def rng(stream=0):
    return np.random.Generator(np.random.Philox(key=np.array([505, stream], dtype=np.uint64)))


def row_tokens(tok):
    tok = np.asarray(tok)
    return OccupancyTokenSet(tok, np.arange(tok.shape[0], dtype=np.int64))


def row_features(vals):
    vals = np.asarray(vals, dtype=np.float64)  # (C, n)
    return FeatureMap(vals[:, None, :])


def attention_oracle(tokens, values, factor):
    """Scalar-loop reference: out_i = sum_j softmax(<t_i, t_j>) v_j."""
    n = tokens.shape[0]
    out = np.zeros_like(values)
    for i in range(n):
        logits = np.array([factor * float(tokens[i] @ tokens[j]) for j in range(n)])
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        for j in range(n):
            out[i] += weights[j] * values[j]
    return out


class TestSoftmax:
    def test_rows_sum_to_one(self):
        probs = stable_softmax(rng(1).standard_normal((30, 7)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_shift_invariance(self):
        """Adding one constant to every logit of a row leaves softmax fixed."""
        logits = rng(2).standard_normal((10, 5))
        np.testing.assert_allclose(
            stable_softmax(logits + 123.456), stable_softmax(logits), atol=1e-12
        )


class TestAttention:
    def test_identical_tokens_average(self):
        """Uniform attention: every output is the scope mean of the values."""
        g = rng(3)
        tokens = row_tokens(np.tile(g.uniform(0, 1, size=6), (5, 1)))
        values = row_features(g.standard_normal((3, 5)))
        out = occupancy_attention(tokens, values, AttentionConfig(scope="row"))
        mean = values.values.mean(axis=2, keepdims=True)
        np.testing.assert_allclose(out.values, np.broadcast_to(mean, out.values.shape), atol=1e-12)

    def test_single_token_identity(self):
        values = row_features([[2.5], [-1.0]])
        out = occupancy_attention(row_tokens([[0.3, 0.7]]), values)
        np.testing.assert_array_equal(out.values, values.values)

    def test_one_hot_hand_case(self):
        """Tokens e1, e2, e1: the first row's logits are (1, 0, 1), giving
        weights (e, 1, e)/(2e + 1)."""
        tokens = row_tokens([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        values = row_features([[1.0, 2.0, 4.0]])
        cfg = AttentionConfig(scope="row", scale="none", temperature=1.0)
        out = occupancy_attention(tokens, values, cfg)
        e = np.e
        w_same, w_other = e / (2 * e + 1), 1 / (2 * e + 1)
        assert abs(w_same - 0.4223187982515182) < 1e-15
        expected_first = w_same * 1.0 + w_other * 2.0 + w_same * 4.0
        np.testing.assert_allclose(out.values[0, 0, 0], expected_first, rtol=1e-12)
        oracle = attention_oracle(tokens.tokens.astype(float), values.values[:, 0, :].T, 1.0)
        np.testing.assert_allclose(out.values[:, 0, :], oracle.T, rtol=1e-6)

    def test_matches_oracle_random(self):
        g = rng(4)
        tokens = row_tokens(g.uniform(0, 1, size=(7, 4)))
        values = row_features(g.standard_normal((3, 7)))
        cfg = AttentionConfig(scope="row", scale="rsqrt", temperature=1.3)
        out = occupancy_attention(tokens, values, cfg)
        oracle = attention_oracle(
            tokens.tokens.astype(float), values.values[:, 0, :].T, (1 / np.sqrt(4)) / 1.3
        )
        np.testing.assert_allclose(out.values[:, 0, :], oracle.T, rtol=1e-6, atol=1e-9)

    def test_permutation_of_storage_order(self):
        """Token storage order is irrelevant; the pixel map ties them down."""
        g = rng(5)
        toks = g.uniform(0, 1, size=(6, 3))
        values = row_features(g.standard_normal((2, 6)))
        base = occupancy_attention(row_tokens(toks), values)
        perm = g.permutation(6)
        shuffled = OccupancyTokenSet(toks[perm], np.arange(6, dtype=np.int64)[perm])
        np.testing.assert_array_equal(
            occupancy_attention(shuffled, values).values, base.values
        )

    def test_permutation_equivariance(self):
        """Permuting (token, value) pairs permutes the outputs identically."""
        g = rng(6)
        toks = g.uniform(0, 1, size=(6, 3))
        vals = g.standard_normal((2, 6))
        base = occupancy_attention(row_tokens(toks), row_features(vals))
        perm = g.permutation(6)
        permuted = occupancy_attention(row_tokens(toks[perm]), row_features(vals[:, perm]))
        np.testing.assert_allclose(
            permuted.values[:, 0, :], base.values[:, 0, :][:, perm], atol=1e-12
        )

    def test_row_scope_blocks_cross_row_mixing(self):
        g = rng(7)
        toks = g.uniform(0, 1, size=(8, 3))
        vals = g.standard_normal((2, 2, 4))  # two rows of four pixels
        tokens = OccupancyTokenSet(toks, np.arange(8, dtype=np.int64))
        out = occupancy_attention(tokens, FeatureMap(vals), AttentionConfig(scope="row"))
        top = occupancy_attention(
            OccupancyTokenSet(toks[:4], np.arange(4, dtype=np.int64)),
            FeatureMap(vals[:, :1, :]),
            AttentionConfig(scope="row"),
        )
        np.testing.assert_array_equal(out.values[:, :1, :], top.values)

    def test_window_one_is_identity(self):
        g = rng(8)
        tokens = row_tokens(g.uniform(0, 1, size=(5, 3)))
        values = row_features(g.standard_normal((2, 5)))
        out = occupancy_attention(tokens, values, AttentionConfig(scope="window", window=1))
        np.testing.assert_allclose(out.values, values.values, atol=1e-12)

    def test_global_equals_row_for_single_row(self):
        g = rng(9)
        tokens = row_tokens(g.uniform(0, 1, size=(6, 3)))
        values = row_features(g.standard_normal((2, 6)))
        a = occupancy_attention(tokens, values, AttentionConfig(scope="global"))
        b = occupancy_attention(tokens, values, AttentionConfig(scope="row"))
        np.testing.assert_array_equal(a.values, b.values)

    def test_validation(self):
        with pytest.raises(ValueError):
            AttentionConfig(scope="window", window=4)
        with pytest.raises(ValueError):
            AttentionConfig(temperature=0.0)
        with pytest.raises(ValueError):
            OccupancyTokenSet(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError):
            occupancy_attention(
                row_tokens(np.zeros((3, 2))), FeatureMap(np.zeros((1, 2, 2), dtype=np.float32))
            )


class TestAttentionGrad:
    def test_uniform_tokens_average_value_grad(self):
        """With identical tokens the value gradient is the scope average of
        the upstream gradient."""
        g = rng(10)
        tokens = row_tokens(np.tile(g.uniform(0, 1, size=4), (6, 1)))
        values = row_features(g.standard_normal((2, 6)))
        up = g.standard_normal((2, 1, 6))
        _, d_val = occupancy_attention_grad(tokens, values, up)
        mean = up.mean(axis=2, keepdims=True)
        np.testing.assert_allclose(d_val, np.broadcast_to(mean, d_val.shape), atol=1e-12)

    def test_zero_upstream(self):
        g = rng(11)
        tokens = row_tokens(g.uniform(0, 1, size=(5, 3)))
        values = row_features(g.standard_normal((2, 5)))
        d_tok, d_val = occupancy_attention_grad(tokens, values, np.zeros((2, 1, 5)))
        assert not d_tok.any() and not d_val.any()

    def test_finite_differences(self):
        g = rng(12)
        tokens = row_tokens(g.uniform(0.1, 0.9, size=(6, 4)))
        values = row_features(g.standard_normal((3, 6)))
        cfg = AttentionConfig(scope="row")
        up = g.standard_normal((3, 1, 6))
        d_tok, d_val = occupancy_attention_grad(tokens, values, up, cfg)

        def loss():
            return float(np.sum(up * occupancy_attention(tokens, values, cfg).values))

        h = 1e-5
        flat = tokens.tokens.reshape(-1)
        for idx in g.choice(flat.size, size=8, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss()
            flat[idx] = orig - h
            minus = loss()
            flat[idx] = orig
            fd = (plus - minus) / (2 * h)
            analytic = d_tok.reshape(-1)[idx]
            assert abs(fd - analytic) <= 1e-4 * max(abs(fd), abs(analytic), 1e-8)


class TestAnalyticOverlap:
    def test_normal_incidence(self):
        assert analytic_overlap(2.0, 0.0, 0.0) == 2.0

    def test_oblique_value(self):
        # 2 / cos(30 deg) - tan(30 deg) = sqrt(3)
        got = analytic_overlap(2.0, np.pi / 6, 1.0)
        assert abs(got - 1.7320508075688772) < 1e-12

    def test_clamped_to_zero(self):
        assert analytic_overlap(1.0, np.pi / 4, 10.0) == 0.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            analytic_overlap(1.0, np.pi / 2, 0.0)
        with pytest.raises(ValueError):
            analytic_overlap(-1.0, 0.1, 0.0)
        with pytest.raises(ValueError):
            analytic_overlap(1.0, 0.1, -0.5)


class TestEmpiricalOverlap:
    def test_full_overlap_through_cube(self):
        box = OrientedBox3D(np.zeros(3), np.ones(3), -np.pi / 2)
        ray = (np.array([-5.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        got = empirical_overlap(box, ray, ray, 0.01)
        assert abs(got - 1.0) <= 0.01

    def test_rejects_nonparallel(self):
        box = OrientedBox3D(np.zeros(3), np.ones(3), 0.0)
        ray_i = (np.array([-5.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        ray_j = (np.array([-5.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            empirical_overlap(box, ray_i, ray_j, 0.01)
        ray_k = (np.array([-5.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            empirical_overlap(box, ray_i, ray_k, 0.01)

    def test_disjoint_rays_zero(self):
        box = OrientedBox3D(np.zeros(3), np.ones(3), -np.pi / 2)
        ray_i = (np.array([-5.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        ray_j = (np.array([-5.0, 50.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert empirical_overlap(box, ray_i, ray_j, 0.01) == 0.0

    def test_sweep_matches_analytic(self):
        """Grid sweep: discretization error within two bin spacings, and
        halving the spacing at least halves the worst error."""
        coarse = overlap_sweep(spacing_factor=0.01)
        assert all(s.abs_error <= 2.0 * s.spacing for s in coarse)
        fine = overlap_sweep(spacing_factor=0.005)
        assert max(s.abs_error for s in fine) <= 0.5 * max(s.abs_error for s in coarse)

    def test_sweep_grid_cardinality(self):
        assert len(overlap_sweep()) == 3 * 5 * 3
