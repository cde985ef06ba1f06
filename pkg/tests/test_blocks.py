"""Building blocks: identity at init, gates, attention, composition oracles."""

import numpy as np
import pytest

from demoire import tensor as T
from demoire import blocks as B
from demoire.gradcheck import grad_check
from demoire.nn import init_rng
from demoire.tensor import Tensor

import oracles


def rng(seed=0):
    return np.random.default_rng(seed)


def feature(seed, shape=(1, 8, 6, 6)):
    return Tensor(rng(seed).normal(size=shape).astype(np.float32))


def randomize(module, seed=99, std=0.05):
    """Overwrite every parameter with small random values (kills zero-init)."""
    r = rng(seed)
    for _, p in module.named_parameters():
        p.data = r.normal(scale=std, size=p.data.shape).astype(np.float32)
    return module


def copy_params(src, dst):
    for (_, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()):
        b.data = a.data.copy()


def weighted_sum(out, weights):
    return T.sum_all(out * Tensor(weights))


class TestGatedMlp:
    def test_identity_at_init(self):
        blk = B.GatedMlp(init_rng(0), 8)
        x = feature(1)
        np.testing.assert_array_equal(blk(x).data, x.data)

    def test_zero_dconv_kernel_gives_identity(self):
        # Zero depthwise kernel and bias kill the gated product, so the
        # random output weight sees only zeros; its bias must stay zero.
        blk = B.GatedMlp(init_rng(0), 8)
        randomize(blk)
        blk.dconv.w.data[:] = 0.0
        blk.dconv.b.data[:] = 0.0
        blk.out.b.data[:] = 0.0
        x = feature(2)
        np.testing.assert_array_equal(blk(x).data, x.data)

    def test_composition_oracle(self):
        blk = randomize(B.GatedMlp(init_rng(0), 8), seed=3)
        x = feature(4, (1, 8, 4, 4))
        got = blk(x).data
        z = T.layer_norm_channels(x, blk.norm.gamma, blk.norm.beta)
        z = T.conv1x1(z, blk.expand.w, blk.expand.b)
        f1, f2 = T.split_channels(z, 2)
        f2 = T.dwconv3x3(f2, blk.dconv.w, blk.dconv.b)
        want = (x + T.conv1x1(f1 * f2, blk.out.w, blk.out.b)).data
        np.testing.assert_array_equal(got, want)


class TestDirectionalScan:
    def test_identity_at_init(self):
        blk = B.DirectionalScan(init_rng(0), 6, state_dim=4)
        x = feature(5, (2, 6, 3, 5))
        np.testing.assert_array_equal(blk(x).data, x.data)

    def test_sequence_reorder_round_trip(self):
        x = feature(6, (2, 3, 4, 5))
        for d in range(4):
            seq = B._to_sequence(x, d)
            assert seq.data.shape == (2, 1, 3, 20)
            back = B._from_sequence(seq, d, 4, 5)
            np.testing.assert_array_equal(back.data, x.data)

    def test_directions_differ(self):
        x = feature(7, (1, 2, 3, 3))
        seqs = [B._to_sequence(x, d).data for d in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.array_equal(seqs[i], seqs[j])

    def test_single_pixel_is_four_times_one_scan(self):
        # With all four direction projections tied, a 1x1 image makes the
        # four scans coincide, so the pre-projection sum is 4x one scan.
        blk = B.DirectionalScan(init_rng(1), 4, state_dim=3)
        r = rng(8)
        for d in range(1, 4):
            copy_params(blk.delta_proj[0], blk.delta_proj[d])
            copy_params(blk.b_proj[0], blk.b_proj[d])
            copy_params(blk.c_proj[0], blk.c_proj[d])
        blk.a_log.data[:] = blk.a_log.data[0]
        blk.out.w.data = np.eye(4, dtype=np.float32)  # expose the sum
        x = feature(9, (1, 4, 1, 1))
        got = blk(x).data - x.data

        z = T.layer_norm_channels(x, blk.norm.gamma, blk.norm.beta)
        delta = T.softplus(T.conv1x1(z, blk.delta_proj[0].w,
                                     blk.delta_proj[0].b))
        bm = T.conv1x1(z, blk.b_proj[0].w)
        cm = T.conv1x1(z, blk.c_proj[0].w)
        one = oracles.selective_scan_loop(
            z.data.reshape(1, 1, 4, 1), delta.data.reshape(1, 1, 4, 1),
            -np.exp(blk.a_log.data[:1]), bm.data.reshape(1, 1, 3, 1),
            cm.data.reshape(1, 1, 3, 1))
        np.testing.assert_allclose(got, 4.0 * one.reshape(1, 4, 1, 1),
                                   rtol=1e-5, atol=1e-6)

    def test_composition_oracle(self):
        blk = B.DirectionalScan(init_rng(2), 3, state_dim=4)
        blk.out.w.data = rng(10).normal(scale=0.1, size=(3, 3)) \
            .astype(np.float32)
        x = feature(11, (1, 3, 3, 4))
        got = blk(x).data

        z = T.layer_norm_channels(x, blk.norm.gamma, blk.norm.beta).data
        n, c, h, w = z.shape
        total = np.zeros_like(z)
        for d in range(4):
            delta = np.log1p(np.exp(
                T.conv1x1(Tensor(z), blk.delta_proj[d].w,
                          blk.delta_proj[d].b).data))
            bm = T.conv1x1(Tensor(z), blk.b_proj[d].w).data
            cm = T.conv1x1(Tensor(z), blk.c_proj[d].w).data

            def ordered(arr):
                a = arr.transpose(0, 1, 3, 2) if d >= 2 else arr
                a = a.reshape(n, 1, a.shape[1], h * w)
                return a[..., ::-1] if d % 2 else a

            y = oracles.selective_scan_loop(
                ordered(z), ordered(delta), -np.exp(blk.a_log.data[d:d + 1]),
                ordered(bm), ordered(cm))
            y = y[..., ::-1] if d % 2 else y
            y = y.reshape(n, c, w, h).transpose(0, 1, 3, 2) if d >= 2 \
                else y.reshape(n, c, h, w)
            total += y
        want = x.data + T.conv1x1(Tensor(total.astype(np.float32)),
                                  blk.out.w, blk.out.b).data
        np.testing.assert_allclose(got, want, rtol=2e-4, atol=1e-5)

    def test_grad_check_tiny(self):
        # c >= 4 keeps the per-pixel channel variance away from the norm's
        # eps clamp, where finite differences cannot track the curvature.
        blk = B.DirectionalScan(init_rng(3), 4, state_dim=2)
        blk.out.w.data = rng(12).normal(scale=0.1, size=(4, 4)) \
            .astype(np.float32)
        x = T.Parameter(rng(13).normal(size=(1, 4, 2, 3)).astype(np.float32))
        weights = rng(14).normal(size=(1, 4, 2, 3)).astype(np.float32)
        params = [x] + blk.parameters()
        report = grad_check(lambda: weighted_sum(blk(x), weights), params,
                            tol=1e-3, max_probes=400)
        assert report.passed, str(report)


class TestMixerBlock:
    def test_identity_at_init(self):
        blk = B.MixerBlock(init_rng(0), 6, state_dim=4)
        x = feature(15, (1, 6, 4, 4))
        np.testing.assert_array_equal(blk(x).data, x.data)

    def test_equals_sequential_calls(self):
        blk = randomize(B.MixerBlock(init_rng(0), 6, state_dim=4), seed=16)
        x = feature(17, (1, 6, 4, 4))
        np.testing.assert_array_equal(blk(x).data,
                                      blk.mlp(blk.scan(x)).data)


class TestDilatedChannelBlock:
    def test_identity_at_init(self):
        blk = B.DilatedChannelBlock(init_rng(0), 8)
        x = feature(18)
        np.testing.assert_array_equal(blk(x).data, x.data)

    def test_channel_weights_in_unit_interval(self):
        blk = randomize(B.DilatedChannelBlock(init_rng(0), 8), seed=19)
        blk(feature(20))
        w = blk.last_weights
        assert w.shape == (1, 8, 1, 1)
        assert np.all(w > 0.0) and np.all(w < 1.0)

    def test_composition_oracle(self):
        blk = randomize(B.DilatedChannelBlock(init_rng(0), 4), seed=21)
        x = feature(22, (1, 4, 6, 6))
        got = blk(x).data
        z = T.layer_norm_channels(x, blk.norm.gamma, blk.norm.beta)
        cat = T.concat_channels([
            T.dwconv3x3(z, blk.d1.w, blk.d1.b, dilation=1),
            T.dwconv3x3(z, blk.d2.w, blk.d2.b, dilation=2),
            T.dwconv3x3(z, blk.d3.w, blk.d3.b, dilation=3)])
        fused = T.conv1x1(cat, blk.fuse.w, blk.fuse.b)
        gate = T.sigmoid(T.conv1x1(T.relu(T.conv1x1(
            T.spatial_mean(fused), blk.att1.w, blk.att1.b)),
            blk.att2.w, blk.att2.b))
        want = (x + T.repeat_spatial(gate, 6, 6) * fused).data
        np.testing.assert_array_equal(got, want)


class TestCrossChannelAttention:
    def test_single_channel_heads_return_values(self):
        # One channel per head: each attention matrix is 1x1 softmax = 1.
        attn = B.CrossChannelAttention(init_rng(0), 4, heads=4)
        q = feature(23, (1, 4, 6, 6))
        k = feature(24, (1, 4, 6, 6))
        v = feature(25, (1, 4, 6, 6))
        out = attn(q, k, v)
        np.testing.assert_allclose(out.data,
                                   T.conv1x1(v, attn.wv.w).data,
                                   rtol=1e-6, atol=1e-7)

    def test_rows_sum_to_one(self):
        attn = B.CrossChannelAttention(init_rng(1), 8, heads=2)
        attn.tau.data[:] = [0.5, 2.0]
        attn(feature(26), feature(27), feature(28))
        sums = attn.last_attn.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_dense_oracle_one_head(self):
        attn = B.CrossChannelAttention(init_rng(2), 4, heads=1)
        attn.tau.data[:] = 1.7
        x = feature(29, (1, 4, 2, 2))
        y = feature(30, (1, 4, 2, 2))
        out = attn(x, y, y).data
        q = T.conv1x1(x, attn.wq.w).data.reshape(4, 4)
        k = T.conv1x1(y, attn.wk.w).data.reshape(4, 4)
        v = T.conv1x1(y, attn.wv.w).data.reshape(4, 4)
        want, attn_mat = oracles.channel_attention_dense(q, k, v, 1.7, 4)
        np.testing.assert_allclose(out.reshape(4, 4), want, rtol=1e-5,
                                   atol=1e-6)
        np.testing.assert_allclose(attn.last_attn.reshape(4, 4), attn_mat,
                                   rtol=1e-5, atol=1e-6)

    def test_head_divisibility_error(self):
        with pytest.raises(ValueError):
            B.CrossChannelAttention(init_rng(0), 6, heads=4)


class TestBlendGate:
    def test_zero_final_conv_gives_half(self):
        gate = B.BlendGate(init_rng(0), 8)
        gate.c2.w.data[:] = 0.0
        out = gate(feature(31), feature(32))
        np.testing.assert_array_equal(out.data,
                                      np.full((1, 1, 6, 6), 0.5, np.float32))

    def test_saturated_bias_gives_one(self):
        gate = B.BlendGate(init_rng(1), 8)
        gate.c2.b.data[:] = 20.0
        out = gate(feature(33), feature(34))
        np.testing.assert_allclose(out.data, 1.0, atol=1e-6)

    def test_open_interval(self):
        gate = randomize(B.BlendGate(init_rng(2), 8), seed=35, std=0.5)
        out = gate(feature(36), feature(37)).data
        assert out.shape == (1, 1, 6, 6)
        assert np.all(out > 0.0) and np.all(out < 1.0)


class TestDualStreamFusion:
    def make(self, seed=0, c=8, heads=2, live=False):
        blk = B.DualStreamFusion(init_rng(seed), c, heads)
        if live:
            r = rng(seed + 100)
            blk.out_a.w.data = r.normal(scale=0.1, size=(c, c)) \
                .astype(np.float32)
            blk.out_b.w.data = r.normal(scale=0.1, size=(c, c)) \
                .astype(np.float32)
        return blk

    def test_identity_both_streams_at_init(self):
        blk = self.make()
        fa, fb = feature(38), feature(39)
        oa, ob = blk(fa, fb)
        np.testing.assert_array_equal(oa.data, fa.data)
        np.testing.assert_array_equal(ob.data, fb.data)

    def test_tied_attention_is_alpha_independent(self):
        # Same input on both streams + tied projections make the two
        # attention outputs equal, so the blend weight cannot matter.
        blk = self.make(seed=1, live=True)
        copy_params(blk.attn_ab, blk.attn_ba)
        x = feature(40)
        blk.gate.c2.b.data[:] = 40.0   # alpha ~ 1
        hi_a, hi_b = blk(x, x)
        blk.gate.c2.b.data[:] = -40.0  # alpha ~ 0
        lo_a, lo_b = blk(x, x)
        np.testing.assert_allclose(hi_a.data, lo_a.data, atol=1e-6)
        np.testing.assert_allclose(hi_b.data, lo_b.data, atol=1e-6)

    def test_blend_is_convex_combination(self):
        blk = self.make(seed=2, live=True)
        fa, fb = feature(41), feature(42)
        blk(fa, fb)
        ln_a = blk.norm_a(fa)
        ln_b = blk.norm_b(fb)
        a_ab = blk.attn_ab(ln_a, ln_b, ln_b).data
        a_ba = blk.attn_ba(ln_b, ln_a, ln_a).data
        alpha = np.repeat(blk.last_alpha, 8, axis=1)
        mixed = alpha * a_ba + (1.0 - alpha) * a_ab
        lo = np.minimum(a_ab, a_ba)
        hi = np.maximum(a_ab, a_ba)
        assert np.all(mixed >= lo - 1e-6) and np.all(mixed <= hi + 1e-6)

    def test_alpha_and_masks_in_unit_interval(self):
        blk = self.make(seed=3, live=True)
        blk(feature(43), feature(44))
        a = blk.last_alpha
        assert np.all(a > 0.0) and np.all(a < 1.0)
        for attn in (blk.attn_ab, blk.attn_ba):
            np.testing.assert_allclose(attn.last_attn.sum(axis=-1), 1.0,
                                       atol=1e-6)

    def test_composition_oracle(self):
        blk = self.make(seed=4, live=True)
        fa, fb = feature(45), feature(46)
        oa, ob = blk(fa, fb)

        ln_a = blk.norm_a(fa)
        ln_b = blk.norm_b(fb)
        attn_ab = blk.attn_ab(ln_a, ln_b, ln_b)
        attn_ba = blk.attn_ba(ln_b, ln_a, ln_a)
        alpha = T.repeat_channel(blk.gate(ln_a, ln_b), 8)
        mixed = alpha * attn_ba + ((-alpha) + 1.0) * attn_ab
        fused = mixed + blk.ffn(blk.proj(mixed))
        mask_a = T.sigmoid(blk.mod_a2(T.relu(blk.mod_a1(fused))))
        mask_b = T.sigmoid(blk.mod_b2(T.relu(blk.mod_b1(fused))))
        want_a = fa + blk.out_a(ln_a * mask_a + fused)
        want_b = fb + blk.out_b(ln_b * mask_b + fused)
        np.testing.assert_array_equal(oa.data, want_a.data)
        np.testing.assert_array_equal(ob.data, want_b.data)

    def test_grad_check_full_block(self):
        blk = self.make(seed=5, c=8, heads=2, live=True)
        fa = T.Parameter(rng(47).normal(size=(1, 8, 8, 8))
                         .astype(np.float32))
        fb = T.Parameter(rng(48).normal(size=(1, 8, 8, 8))
                         .astype(np.float32))
        wa = rng(49).normal(size=(1, 8, 8, 8)).astype(np.float32)
        wb = rng(50).normal(size=(1, 8, 8, 8)).astype(np.float32)

        # Keep ReLU pre-activations away from the kink, where central
        # differences disagree with the subgradient by construction.
        blk.mod_a1.b.data[:] = 0.5
        blk.mod_b1.b.data[:] = 0.5

        def loss():
            oa, ob = blk(fa, fb)
            return weighted_sum(oa, wa) + weighted_sum(ob, wb)

        params = [fa, fb] + blk.parameters()
        report = grad_check(loss, params, tol=1e-3, max_probes=400)
        assert report.passed, str(report)


class TestGuidedAttentionBlock:
    def make(self, seed=0, c=8, heads=2, live=False):
        blk = B.GuidedAttentionBlock(init_rng(seed), c, heads)
        if live:
            blk.attn_out.w.data = rng(seed + 100).normal(
                scale=0.1, size=(c, c)).astype(np.float32)
        return blk

    def test_identity_at_init(self):
        blk = self.make()
        x = feature(51)
        np.testing.assert_array_equal(blk(x, feature(52)).data, x.data)

    def test_closed_gate_ignores_guidance(self):
        blk = self.make(seed=1, live=True)
        blk.g2.b.data[:] = -30.0
        x = feature(53)
        out1 = blk(x, feature(54)).data
        out2 = blk(x, feature(55)).data
        np.testing.assert_allclose(out1, out2, atol=1e-6)

    def test_gate_and_rows(self):
        blk = self.make(seed=2, live=True)
        blk(feature(56), feature(57))
        g = blk.last_gate
        assert np.all(g > 0.0) and np.all(g < 1.0)
        np.testing.assert_allclose(blk.attn.last_attn.sum(axis=-1), 1.0,
                                   atol=1e-6)

    def test_composition_oracle(self):
        blk = self.make(seed=3, live=True)
        fp, fg = feature(58, (1, 8, 4, 4)), feature(59, (1, 8, 4, 4))
        got = blk(fp, fg).data
        ln_p = blk.norm_p(fp)
        ln_g = blk.norm_g(fg)
        gate = T.sigmoid(blk.g2(T.relu(blk.g1(ln_p))))
        mixed = ln_g * gate + ln_p
        a = fp + blk.attn_out(blk.attn(mixed, mixed, ln_p))
        want = (a + blk.ffn(blk.norm_ffn(a))).data
        np.testing.assert_array_equal(got, want)

    def test_grad_check_full_block(self):
        blk = self.make(seed=4, live=True)
        fp = T.Parameter(rng(60).normal(size=(1, 8, 4, 4))
                         .astype(np.float32))
        fg = T.Parameter(rng(61).normal(size=(1, 8, 4, 4))
                         .astype(np.float32))
        w = rng(62).normal(size=(1, 8, 4, 4)).astype(np.float32)
        blk.g1.b.data[:] = 0.5  # keep ReLU pre-activations off the kink
        params = [fp, fg] + blk.parameters()
        report = grad_check(lambda: weighted_sum(blk(fp, fg), w), params,
                            tol=1e-3, max_probes=400)
        assert report.passed, str(report)


class TestParameterNaming:
    def test_unique_names_and_exact_enumeration(self):
        blk = B.DualStreamFusion(init_rng(0), 8, 2)
        names = blk.assign_names(prefix="fusion.")
        assert len(names) == len(set(names))
        assert len(names) == len(list(blk.named_parameters()))
        assert all(n.startswith("fusion.") for n in names)
