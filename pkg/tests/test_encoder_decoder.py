"""Stack behavior and the parameter-count oracle."""

import numpy as np
import pytest

from workflow_intention import encoder_decoder as ed
from workflow_intention import numerics as nm
from workflow_intention.attention import multi_head
from gradcheck import fd_gradcheck, random_weighted_sum

TOY = ed.StackConfig(n_layers=2, d_model=8, n_heads_self=2, d_ffn_inner=16)
TOY_DEC = ed.StackConfig(n_layers=2, d_model=8, n_heads_self=2, d_ffn_inner=16,
                         n_heads_cross=2)


def _encoder(seed=0, cfg=TOY):
    return ed.make_encoder({}, np.random.default_rng(seed), "enc", cfg)


def _decoder(seed=0, cfg=TOY_DEC):
    return ed.make_decoder({}, np.random.default_rng(seed), "dec", cfg)


class TestEncode:
    def test_shape_preserved(self):
        p = _encoder()
        for n in (1, 3, 7):
            x = np.random.default_rng(n).standard_normal((8, n))
            assert ed.encode(nm.constant(x), p).shape == (8, n)

    def test_one_layer_equals_manual_composition(self):
        cfg = ed.StackConfig(1, 8, 2, 16)
        p = _encoder(3, cfg)
        layer = p.layers[0]
        x = np.random.default_rng(4).standard_normal((8, 5))
        t = nm.constant(x)
        h = nm.layer_norm(nm.add(t, multi_head(t, layer.attn)),
                          layer.ln_attn.gamma, layer.ln_attn.beta, cfg.layer_norm_epsilon)
        manual = nm.layer_norm(nm.add(h, nm.mlp(h, layer.ffn)),
                               layer.ln_ffn.gamma, layer.ln_ffn.beta, cfg.layer_norm_epsilon)
        np.testing.assert_allclose(ed.encode(nm.constant(x), p).value, manual.value,
                                   atol=1e-12)

    def test_permutation_equivariance(self):
        p = _encoder(5)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 6))
        perm = rng.permutation(6)
        a = ed.encode(nm.constant(x[:, perm]), p).value
        b = ed.encode(nm.constant(x), p).value[:, perm]
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_row_mismatch_rejected(self):
        with pytest.raises(nm.ShapeError):
            ed.encode(nm.constant(np.zeros((7, 2))), _encoder())


class TestDecodeStep:
    def test_single_column(self):
        p = _decoder()
        ctx = np.random.default_rng(1).standard_normal((8, 4))
        s = np.random.default_rng(2).standard_normal((8, 1))
        out = ed.decode_step(nm.constant(s), nm.constant(ctx), p)
        assert out.shape == (8, 1)

    def test_extension_preserves_prefix(self):
        p = _decoder(7)
        rng = np.random.default_rng(8)
        ctx = rng.standard_normal((8, 5))
        s = rng.standard_normal((8, 4))
        full = ed.decode_step(nm.constant(s), nm.constant(ctx), p).value
        for t in range(1, 4):
            part = ed.decode_step(nm.constant(s[:, :t]), nm.constant(ctx), p).value
            np.testing.assert_allclose(part, full[:, :t], atol=1e-12)

    def test_one_layer_equals_manual_composition(self):
        cfg = ed.StackConfig(1, 8, 2, 16, n_heads_cross=2)
        p = _decoder(9, cfg)
        layer = p.layers[0]
        rng = np.random.default_rng(10)
        s, ctx = rng.standard_normal((8, 3)), rng.standard_normal((8, 4))
        t, c = nm.constant(s), nm.constant(ctx)
        eps = cfg.layer_norm_epsilon
        h = nm.layer_norm(nm.add(t, multi_head(t, layer.self_attn, masked=True)),
                          layer.ln_self.gamma, layer.ln_self.beta, eps)
        h = nm.layer_norm(nm.add(h, multi_head(h, layer.cross_attn, context=c)),
                          layer.ln_cross.gamma, layer.ln_cross.beta, eps)
        manual = nm.layer_norm(nm.add(h, nm.mlp(h, layer.ffn)),
                               layer.ln_ffn.gamma, layer.ln_ffn.beta, eps)
        out = ed.decode_step(nm.constant(s), nm.constant(ctx), p)
        np.testing.assert_allclose(out.value, manual.value, atol=1e-12)

    def test_missing_cross_heads_rejected(self):
        with pytest.raises(nm.ShapeError):
            ed.make_decoder({}, np.random.default_rng(0), "d", TOY)


class TestParamCount:
    def test_hand_case(self):
        cfg = ed.StackConfig(1, 2, 1, 2)
        assert ed.param_count(cfg, "encoder") == 1 * 3 * 2 * 2 + 4 + 2 * 2 * 2

    def test_text_encoder_full(self):
        assert ed.param_count(ed.TEXT_ENCODER_FULL, "encoder") == 301_989_888

    def test_fusion_encoder_full(self):
        assert ed.param_count(ed.FUSION_ENCODER_FULL, "encoder") == 3_321_888_768

    def test_image_encoder_full_within_3pct(self):
        report = ed.full_scale_report()
        assert abs(report["image_encoder"] - 5.5e9) / 5.5e9 < 0.03

    def test_decoder_full_within_3pct(self):
        report = ed.full_scale_report()
        assert abs(report["intention_decoder"] - 3.5e9) / 3.5e9 < 0.03

    def test_grand_total_within_3pct(self):
        report = ed.full_scale_report()
        assert abs(report["total"] - 27.5e9) / 27.5e9 < 0.03

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            ed.param_count(TOY, "both")


def test_encoder_matches_toy_parameter_total():
    # every matrix in the bank minus biases/LN scalars equals param_count
    bank = {}
    cfg = ed.StackConfig(2, 8, 2, 16)
    ed.make_encoder(bank, np.random.default_rng(0), "e", cfg)
    counted = sum(p.value.size for n, p in bank.items()
                  if not (n.endswith(".b") or n.endswith(".gamma") or n.endswith(".beta")))
    assert counted == ed.param_count(cfg, "encoder")


def test_full_stack_gradients_match_finite_differences():
    bank = {}
    rng = np.random.default_rng(0)
    enc = ed.make_encoder(bank, rng, "e", ed.StackConfig(2, 8, 2, 8))
    dec = ed.make_decoder(bank, rng, "d", ed.StackConfig(2, 8, 2, 8, n_heads_cross=2))
    x = rng.standard_normal((8, 3))
    s = rng.standard_normal((8, 2))
    params = list(bank.values())

    def build():
        ctx = ed.encode(nm.constant(x), enc)
        out = ed.decode_step(nm.constant(s), ctx, dec)
        return random_weighted_sum(out, np.random.default_rng(1))

    check_rng = np.random.default_rng(2)
    fd_gradcheck(build, params, rng=check_rng, max_coords=4)
