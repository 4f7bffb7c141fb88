"""Tests for the sparse attention primitives."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparseattn.attention import (
    PER_HEAD,
    PER_LAYER_BATCH,
    HeadDims,
    apply_sparsity_mask,
    raw_scores,
    select_threshold,
    sparse_attention_backward,
    sparse_attention_forward,
    sparse_softmax,
)
from sparseattn.errors import (
    ConfigError,
    DimensionError,
    InvariantError,
    StateError,
    ValidityError,
)

from .oracles import (
    central_difference,
    dense_attention,
    dense_attention_grads,
    max_rel_error,
    topk_keep_oracle,
)


def qkv(rng, b=2, h=2, n=4, dk=3):
    return tuple(rng.normal(size=(b, h, n, dk)) for _ in range(3))


class TestHeadDims:
    def test_valid(self):
        dims = HeadDims(n=8, d_k=4, h=3, d=12)
        assert dims.d == dims.h * dims.d_k

    @pytest.mark.parametrize("kwargs", [
        dict(n=0, d_k=4, h=3, d=12),
        dict(n=8, d_k=4, h=3, d=13),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            HeadDims(**kwargs)


class TestRawScores:
    def test_identity_rows(self):
        q = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        s = raw_scores(q, q)
        np.testing.assert_array_equal(s[0, 0], np.eye(2))

    def test_hand_dot_products_match_triple_loop(self):
        q = np.array([[[[1.0, 2.0], [1.0, 2.0]]]])
        k = np.array([[[[3.0, 4.0], [5.0, 6.0]]]])
        s = raw_scores(q, k)
        np.testing.assert_allclose(s[0, 0, 0], [11.0, 17.0])
        brute = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                brute[i, j] = sum(q[0, 0, i, c] * k[0, 0, j, c] for c in range(2))
        np.testing.assert_array_equal(s[0, 0], brute)

    def test_zero_queries(self):
        rng = np.random.default_rng(0)
        k = rng.normal(size=(1, 1, 3, 2))
        s = raw_scores(np.zeros_like(k), k)
        np.testing.assert_array_equal(s, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            raw_scores(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2)))


class TestSelectThreshold:
    def test_four_entry_half_sparsity(self):
        s = np.array([[[[3.0, 1.0], [2.0, 4.0]]]])
        spec = select_threshold(s, 0.5)
        kept_values = s[spec.keep]
        assert sorted(kept_values.tolist()) == [3.0, 4.0]
        assert spec.threshold_value[0, 0] == 3.0
        assert spec.achieved_sparsity == 0.5
        assert not spec.forced.any()

    def test_zero_sparsity_keeps_everything(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=(2, 2, 3, 3))
        spec = select_threshold(s, 0.0)
        assert spec.keep.all()
        assert spec.achieved_sparsity == 0.0

    def test_row_guarantee_keeps_row_maximum(self):
        # one row far below everything else still keeps its own maximum
        s = np.arange(16.0).reshape(1, 1, 4, 4).copy()
        s[0, 0, 0] = [-40.0, -30.0, -20.0, -10.0]
        spec = select_threshold(s, 0.9)
        assert spec.keep[0, 0, 0, 3]
        assert spec.forced[0, 0, 0, 3]
        assert spec.achieved_sparsity < 0.9
        oracle = topk_keep_oracle(s, 0.9)
        np.testing.assert_array_equal(spec.keep, oracle)

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(7)
        for trial in range(25):
            b, h, n = rng.integers(1, 3), rng.integers(1, 3), int(rng.integers(2, 6))
            s = rng.normal(size=(b, h, n, n))
            sp = float(rng.uniform(0, 0.95))
            valid = rng.random((b, n)) > 0.25
            valid[:, 0] = True
            pool = PER_HEAD if trial % 2 else PER_LAYER_BATCH
            spec = select_threshold(s, sp, valid=valid, pool=pool)
            oracle = topk_keep_oracle(s, sp, valid=valid, pool=pool)
            np.testing.assert_array_equal(spec.keep, oracle)

    def test_matches_oracle_with_ties(self):
        # integer-valued scores force heavy ties; the flat-index rule decides
        rng = np.random.default_rng(11)
        for pool in (PER_HEAD, PER_LAYER_BATCH):
            s = rng.integers(0, 3, size=(2, 2, 4, 4)).astype(float)
            spec = select_threshold(s, 0.6, pool=pool)
            oracle = topk_keep_oracle(s, 0.6, pool=pool)
            np.testing.assert_array_equal(spec.keep, oracle)

    def test_padded_keys_never_kept(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=(1, 2, 4, 4))
        valid = np.array([[True, True, False, True]])
        spec = select_threshold(s, 0.3, valid=valid)
        assert not spec.keep[:, :, :, 2].any()
        assert not spec.keep[:, :, 2, :].any()

    def test_monotone_support_before_guarantee(self):
        rng = np.random.default_rng(5)
        s = rng.normal(size=(2, 2, 5, 5))
        prev = None
        for sparsity in (0.2, 0.5, 0.8):
            spec = select_threshold(s, sparsity)
            base = spec.keep & ~spec.forced
            if prev is not None:
                assert (base <= prev).all()  # kept set shrinks as s grows
            prev = base

    def test_errors(self):
        s = np.zeros((1, 1, 2, 2))
        with pytest.raises(ConfigError):
            select_threshold(s, 1.0)
        with pytest.raises(ConfigError):
            select_threshold(s, -0.1)
        with pytest.raises(ValidityError):
            select_threshold(s, 0.5, valid=np.array([[False, False]]))
        with pytest.raises(InvariantError):
            select_threshold(np.full((1, 1, 2, 2), np.nan), 0.5)


class TestApplyMask:
    def test_masks_complement(self):
        s = np.array([[[[3.0, 1.0], [2.0, 4.0]]]])
        spec = select_threshold(s, 0.5)
        masked = apply_sparsity_mask(s, spec)
        np.testing.assert_array_equal(masked[0, 0, 0], [3.0, -np.inf])
        np.testing.assert_array_equal(masked[0, 0, 1], [-np.inf, 4.0])

    def test_keep_all_is_identity(self):
        rng = np.random.default_rng(2)
        s = rng.normal(size=(1, 2, 3, 3))
        spec = select_threshold(s, 0.0)
        np.testing.assert_array_equal(apply_sparsity_mask(s, spec), s)

    def test_padded_column_fully_masked(self):
        rng = np.random.default_rng(4)
        s = rng.normal(size=(1, 1, 3, 3))
        valid = np.array([[True, True, False]])
        spec = select_threshold(s, 0.0, valid=valid)
        masked = apply_sparsity_mask(s, spec)
        assert np.isneginf(masked[0, 0, :, 2]).all()

    def test_misaligned_spec(self):
        s = np.zeros((1, 1, 3, 3))
        spec = select_threshold(np.zeros((1, 1, 2, 2)), 0.0)
        with pytest.raises(DimensionError):
            apply_sparsity_mask(s, spec)


class TestSparseSoftmax:
    def test_symmetric_pair(self):
        masked = np.zeros((1, 1, 1, 2))
        w = sparse_softmax(masked, d_k=1)
        np.testing.assert_allclose(w[0, 0, 0], [0.5, 0.5])

    def test_single_survivor(self):
        masked = np.array([[[[3.0, -np.inf]]]])
        w = sparse_softmax(masked, d_k=1)
        np.testing.assert_array_equal(w[0, 0, 0], [1.0, 0.0])

    def test_scaled_row_against_scalar_computation(self):
        masked = np.array([[[[1.0, 2.0, 3.0]] * 3]])
        w = sparse_softmax(masked, d_k=4)
        z = np.array([0.5, 1.0, 1.5])
        expected = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(w[0, 0, 0], expected, atol=1e-15)

    def test_dropped_entries_exactly_zero(self):
        rng = np.random.default_rng(6)
        s = rng.normal(size=(2, 2, 4, 4))
        spec = select_threshold(s, 0.7)
        w = sparse_softmax(apply_sparsity_mask(s, spec), d_k=3)
        assert (w[~spec.keep] == 0.0).all()
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)

    def test_starved_valid_row_raises(self):
        masked = np.full((1, 1, 2, 2), -np.inf)
        with pytest.raises(InvariantError):
            sparse_softmax(masked, d_k=1, valid_query=np.array([[True, True]]))

    def test_padded_rows_all_zero(self):
        masked = np.array([[[[1.0, -np.inf], [-np.inf, -np.inf]]]])
        w = sparse_softmax(masked, d_k=1, valid_query=np.array([[True, False]]))
        np.testing.assert_array_equal(w[0, 0, 1], [0.0, 0.0])


class TestForward:
    def test_dense_equivalence_at_zero_sparsity(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            q, k, v = qkv(rng, b=1, h=2, n=5, dk=4)
            out = sparse_attention_forward(q, k, v, 0.0)
            ref_w, ref_ctx = dense_attention(q, k, v)
            assert np.abs(out.weights - ref_w).max() < 1e-12
            assert np.abs(out.context - ref_ctx).max() < 1e-12

    def test_forced_top1_reads_single_value_row(self):
        # scores engineered so query 0 keeps only key 0
        q = np.array([[[[10.0], [0.1]]]])
        k = np.array([[[[1.0], [-1.0]]]])
        v = np.array([[[[1.0], [0.0]]]])
        out = sparse_attention_forward(q, k, v, 0.5)
        np.testing.assert_allclose(out.context[0, 0, 0], [1.0])
        np.testing.assert_array_equal(out.weights[0, 0, 0], [1.0, 0.0])

    def test_batch_determinism(self):
        rng = np.random.default_rng(9)
        q, k, v = qkv(rng, b=1, h=1, n=4, dk=2)
        q2, k2, v2 = (np.concatenate([a, a]) for a in (q, k, v))
        out = sparse_attention_forward(q2, k2, v2, 0.5)
        np.testing.assert_array_equal(out.context[0], out.context[1])
        np.testing.assert_array_equal(out.weights[0], out.weights[1])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(10)
        q, k, v = qkv(rng, b=1, h=2, n=6, dk=3)
        perm = rng.permutation(6)
        out = sparse_attention_forward(q, k, v, 0.4)
        out_p = sparse_attention_forward(q, k[:, :, perm], v[:, :, perm], 0.4)
        np.testing.assert_allclose(out_p.weights, out.weights[:, :, :, perm], atol=1e-15)
        np.testing.assert_allclose(out_p.context, out.context, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            sparse_attention_forward(
                np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2)), 0.0
            )


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(12)
        q, k, v = qkv(rng)
        out = sparse_attention_forward(q, k, v, 0.5)
        gq, gk, gv = sparse_attention_backward(np.zeros_like(q), q, k, v, out)
        for g in (gq, gk, gv):
            np.testing.assert_array_equal(g, 0.0)

    def test_dense_grads_at_zero_sparsity(self):
        rng = np.random.default_rng(13)
        q, k, v = qkv(rng, b=1, h=1, n=4, dk=3)
        upstream = rng.normal(size=q.shape)
        out = sparse_attention_forward(q, k, v, 0.0)
        gq, gk, gv = sparse_attention_backward(upstream, q, k, v, out)
        rq, rk, rv = dense_attention_grads(upstream, q, k, v)
        for got, ref in ((gq, rq), (gk, rk), (gv, rv)):
            assert np.abs(got - ref).max() < 1e-12

    def test_finite_differences_at_half_sparsity(self):
        rng = np.random.default_rng(14)
        q, k, v = qkv(rng, b=1, h=1, n=3, dk=2)
        upstream = rng.normal(size=q.shape)

        def loss():
            out = sparse_attention_forward(q, k, v, 0.5)
            return float((out.context * upstream).sum())

        out = sparse_attention_forward(q, k, v, 0.5)
        gq, gk, gv = sparse_attention_backward(upstream, q, k, v, out)
        for arr, grad in ((q, gq), (k, gk), (v, gv)):
            fd = central_difference(loss, arr)
            assert max_rel_error(fd, grad) < 1e-4

    def test_missing_cache(self):
        q = np.zeros((1, 1, 2, 2))
        with pytest.raises(StateError):
            sparse_attention_backward(q, q, q, q, None)


@st.composite
def score_tensors(draw):
    b = draw(st.integers(1, 2))
    h = draw(st.integers(1, 2))
    n = draw(st.integers(2, 6))
    flat = draw(
        st.lists(
            st.floats(-50, 50, allow_nan=False, width=64),
            min_size=b * h * n * n,
            max_size=b * h * n * n,
        )
    )
    return np.array(flat).reshape(b, h, n, n)


@given(scores=score_tensors(), sparsity=st.floats(0, 0.9), dk=st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_property_renormalization_and_support(scores, sparsity, dk):
    spec = select_threshold(scores, sparsity)
    w = sparse_softmax(apply_sparsity_mask(scores, spec), d_k=dk)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    assert (w[~spec.keep] == 0.0).all()
    assert (w >= 0.0).all()


@given(scores=score_tensors(), s1=st.floats(0, 0.9), s2=st.floats(0, 0.9))
@settings(max_examples=40, deadline=None)
def test_property_monotone_base_support(scores, s1, s2):
    lo, hi = sorted((s1, s2))
    spec_lo = select_threshold(scores, lo)
    spec_hi = select_threshold(scores, hi)
    base_lo = spec_lo.keep & ~spec_lo.forced
    base_hi = spec_hi.keep & ~spec_hi.forced
    assert (base_hi <= base_lo).all()
