import numpy as np
import pytest
from scipy.special import erf

from motionkit.errors import ValidationError
from motionkit.fusion import (
    cross_attention_fuse,
    encoder_block,
    fd_input_gradient,
    init_trimodal_weights,
    init_unit_weights,
    load_weights,
    read_features_csv,
    record_attention,
    save_weights,
    scaled_dot_attention,
    trimodal_fuse,
    write_features_csv,
    zero_output_trimodal,
    zero_output_weights,
)

# Standalone reference pieces for the transcription oracle.


def ref_softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ref_attention(q, k, v):
    return ref_softmax(q @ k.T / np.sqrt(q.shape[1])) @ v


def ref_layernorm(x, g, b):
    mu = x.mean(1, keepdims=True)
    var = x.var(1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-8) * g + b


def ref_gelu(x):
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def ref_encoder(x, w):
    h = ref_layernorm(x, w.norm1_gain, w.norm1_bias)
    x = x + ref_attention(h @ w.attn.wq, h @ w.attn.wk, h @ w.attn.wv) @ w.attn.wo
    h = ref_layernorm(x, w.norm2_gain, w.norm2_bias)
    return x + ref_gelu(h @ w.w1 + w.b1) @ w.w2 + w.b2


def ref_unit(p, s, w):
    ep = ref_encoder(p, w.enc_primary)
    es = ref_encoder(s, w.enc_secondary)
    l1 = ref_attention(ep @ w.cross1.wq, es @ w.cross1.wk, es @ w.cross1.wv) @ w.cross1.wo
    l2 = ref_attention(ep @ w.cross2.wq, l1 @ w.cross2.wk, es @ w.cross2.wv) @ w.cross2.wo
    return p + l2


class TestAttention:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(1, 4))
        v = rng.normal(size=(1, 4))
        out = scaled_dot_attention(q, k, v)
        assert np.allclose(out, np.tile(v, (5, 1)), atol=1e-15)

    def test_zero_queries_average_values(self):
        rng = np.random.default_rng(1)
        k = rng.normal(size=(7, 3))
        v = rng.normal(size=(7, 3))
        out = scaled_dot_attention(np.zeros((2, 3)), k, v)
        assert np.allclose(out, np.tile(v.mean(0), (2, 1)), atol=1e-12)

    def test_matches_formula(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(6, 4))
        v = rng.normal(size=(6, 4))
        assert np.allclose(scaled_dot_attention(q, k, v), ref_attention(q, k, v), atol=1e-12)

    def test_rows_are_convex_combinations(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(4, 5)) * 3
        k = rng.normal(size=(9, 5))
        v = rng.normal(size=(9, 5))
        out = scaled_dot_attention(q, k, v)
        assert np.all(out.min(0) >= v.min(0) - 1e-12)
        assert np.all(out.max(0) <= v.max(0) + 1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))
        with pytest.raises(ValidationError):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3)))

    def test_softmax_row_sums_recorded(self):
        rng = np.random.default_rng(4)
        with record_attention() as rows:
            scaled_dot_attention(rng.normal(size=(4, 6)), rng.normal(size=(5, 6)),
                                 rng.normal(size=(5, 6)))
        assert len(rows) == 1
        assert np.allclose(rows[0].sum(axis=1), 1.0, atol=1e-9)


class TestEncoderBlock:
    def test_zero_outputs_give_identity(self):
        w = zero_output_weights(init_unit_weights(8, 11)).enc_primary
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 8))
        assert np.array_equal(encoder_block(x, w), x)

    def test_shape_preserved(self):
        w = init_unit_weights(8, 12).enc_primary
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 8))
        assert encoder_block(x, w).shape == (10, 8)

    def test_deterministic_across_runs(self):
        w1 = init_unit_weights(8, 13).enc_primary
        w2 = init_unit_weights(8, 13).enc_primary
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 8))
        out1 = encoder_block(x, w1)
        out2 = encoder_block(x, w2)
        assert np.array_equal(out1, out2)

    def test_matches_reference(self):
        w = init_unit_weights(8, 14).enc_primary
        rng = np.random.default_rng(8)
        x = rng.normal(size=(5, 8))
        assert np.allclose(encoder_block(x, w), ref_encoder(x, w), atol=1e-12)


class TestCrossAttentionUnit:
    def test_zero_final_projection_is_identity(self):
        w = init_unit_weights(8, 15)
        from motionkit.fusion import AttentionWeights, FusionUnitWeights

        w = FusionUnitWeights(
            w.enc_primary,
            w.enc_secondary,
            w.cross1,
            AttentionWeights(w.cross2.wq, w.cross2.wk, w.cross2.wv, np.zeros((8, 8))),
        )
        rng = np.random.default_rng(9)
        p = rng.normal(size=(6, 8))
        s = rng.normal(size=(6, 8))
        assert np.array_equal(cross_attention_fuse(p, s, w), p)

    def test_step_by_step_transcription(self):
        w = init_unit_weights(8, 16)
        rng = np.random.default_rng(10)
        p = rng.normal(size=(4, 8))
        s = rng.normal(size=(4, 8))
        assert np.allclose(cross_attention_fuse(p, s, w), ref_unit(p, s, w), atol=1e-12)

    def test_fd_gradient_self_consistency(self):
        # Central differences are second order: halving the step must shrink
        # the defect about 4x, and adjacent-step gradients agree to 1e-4.
        w = init_unit_weights(6, 17)
        rng = np.random.default_rng(11)
        p = rng.normal(size=(3, 6))
        s = rng.normal(size=(3, 6))

        def head(x):
            return float(np.sum(cross_attention_fuse(x, s, w)))

        g1 = fd_input_gradient(head, p, 1e-4)
        g2 = fd_input_gradient(head, p, 5e-5)
        g3 = fd_input_gradient(head, p, 2.5e-5)
        assert np.max(np.abs(g1 - g2)) / np.max(np.abs(g2)) < 1e-4
        d12 = np.max(np.abs(g1 - g2))
        d23 = np.max(np.abs(g2 - g3))
        assert d23 < d12  # defect shrinks with the step

    def test_frame_permutation_equivariance(self):
        w = init_unit_weights(8, 18)
        rng = np.random.default_rng(12)
        p = rng.normal(size=(7, 8))
        s = rng.normal(size=(7, 8))
        perm = rng.permutation(7)
        out = cross_attention_fuse(p, s, w)
        out_p = cross_attention_fuse(p[perm], s[perm], w)
        assert np.allclose(out_p, out[perm], atol=1e-12)

    def test_shape_mismatch_rejected(self):
        w = init_unit_weights(8, 19)
        with pytest.raises(ValidationError):
            cross_attention_fuse(np.zeros((3, 8)), np.zeros((4, 8)), w)
        with pytest.raises(ValidationError):
            cross_attention_fuse(np.zeros((3, 4)), np.zeros((3, 4)), w)


class TestTrimodal:
    def test_residual_chain_identity(self):
        w = zero_output_trimodal(init_trimodal_weights(8, 20))
        rng = np.random.default_rng(13)
        fl = rng.normal(size=(5, 8))
        assert np.array_equal(
            trimodal_fuse(fl, rng.normal(size=(5, 8)), rng.normal(size=(5, 8)), w), fl
        )

    def test_compositional_oracle(self):
        w = init_trimodal_weights(16, 21)
        rng = np.random.default_rng(14)
        fl = rng.normal(size=(6, 16))
        fr = rng.normal(size=(6, 16))
        fe = rng.normal(size=(6, 16))
        a = ref_unit(fl, fr, w.lidar_rgb)
        b = ref_unit(fl, fe, w.lidar_event)
        expected = ref_unit(a, b, w.merge)
        assert np.allclose(trimodal_fuse(fl, fr, fe, w), expected, atol=1e-11)

    def test_softmax_rows_in_full_run(self):
        w = init_trimodal_weights(8, 22)
        rng = np.random.default_rng(15)
        with record_attention() as rows:
            trimodal_fuse(rng.normal(size=(4, 8)), rng.normal(size=(4, 8)),
                          rng.normal(size=(4, 8)), w)
        # 3 units x (2 encoders + 2 cross layers) attention calls.
        assert len(rows) == 12
        for mat in rows:
            assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-9)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_unit_weights(8, 23)
        b = init_unit_weights(8, 23)
        assert np.array_equal(a.enc_primary.attn.wq, b.enc_primary.attn.wq)
        assert np.array_equal(a.cross2.wo, b.cross2.wo)

    def test_different_seeds_differ(self):
        a = init_unit_weights(8, 24)
        b = init_unit_weights(8, 25)
        assert not np.array_equal(a.enc_primary.attn.wq, b.enc_primary.attn.wq)

    def test_entry_statistics(self):
        # Pool all random matrices from several units: mean 0, variance 1/d.
        d = 64
        entries = []
        for seed in range(8):
            u = init_unit_weights(d, seed)
            for enc in (u.enc_primary, u.enc_secondary):
                entries += [enc.attn.wq, enc.attn.wk, enc.attn.wv, enc.attn.wo, enc.w1, enc.w2]
            for cr in (u.cross1, u.cross2):
                entries += [cr.wq, cr.wk, cr.wv, cr.wo]
        pool = np.concatenate([e.ravel() for e in entries])
        assert pool.size >= 1_000_000
        se = 1.0 / np.sqrt(d * pool.size)  # standard error of the mean
        assert abs(pool.mean()) < 3 * se
        var = pool.var()
        var_se = (1.0 / d) * np.sqrt(2.0 / pool.size)
        assert abs(var - 1.0 / d) < 3 * var_se

    def test_invalid_dim(self):
        with pytest.raises(ValidationError):
            init_unit_weights(0, 1)


class TestSerialization:
    def test_unit_roundtrip(self, tmp_path):
        w = init_unit_weights(8, 26)
        path = tmp_path / "unit.bin"
        save_weights([w], path)
        back = load_weights(path)
        assert len(back) == 1
        rng = np.random.default_rng(16)
        p = rng.normal(size=(4, 8))
        s = rng.normal(size=(4, 8))
        assert np.array_equal(
            cross_attention_fuse(p, s, w), cross_attention_fuse(p, s, back[0])
        )

    def test_trimodal_roundtrip_bitexact(self, tmp_path):
        w = init_trimodal_weights(8, 27)
        path = tmp_path / "tri.bin"
        save_weights(w, path)
        back = load_weights(path)
        assert len(back) == 3
        assert np.array_equal(back[0].enc_primary.w1, w.lidar_rgb.enc_primary.w1)
        assert np.array_equal(back[2].cross2.wo, w.merge.cross2.wo)

    def test_corrupt_files_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValidationError):
            load_weights(path)
        w = init_unit_weights(4, 28)
        good = tmp_path / "good.bin"
        save_weights([w], good)
        data = good.read_bytes()
        (tmp_path / "trunc.bin").write_bytes(data[:-16])
        with pytest.raises(ValidationError):
            load_weights(tmp_path / "trunc.bin")


class TestFeatureCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        feats = rng.normal(size=(9, 5))
        path = tmp_path / "f.csv"
        write_features_csv(feats, path)
        assert np.array_equal(read_features_csv(path), feats)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValidationError):
            read_features_csv(path)
