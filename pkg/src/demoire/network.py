"""Two-stream multi-scale restoration network.

A packed raw mosaic and a half-resolution luma/chroma guidance image are
encoded in parallel streams that exchange information at every scale; the
decoder reconstructs a full-resolution sRGB image plus an auxiliary
guidance-domain output used for supervision.
"""

from dataclasses import dataclass

import numpy as np

from functools import lru_cache

from . import tensor as T
from .blocks import (Conv1x1, DilatedChannelBlock, DualStreamFusion,
                     GuidedAttentionBlock, MixerBlock)
from .color import _DEMOSAIC_QUAD, _DEMOSAIC_QUINCUNX
from .nn import Module, ModuleList, init_rng, trunc_normal
from .tensor import Parameter

__all__ = ["DsdNetConfig", "DsdNet", "VARIANTS", "ConcatExchange"]

VARIANTS = ("full", "no_ycc", "no_sadm", "no_lcat", "no_sadm_no_lcat",
            "ycc_only", "hsv_branch", "yuv_branch")


@lru_cache(maxsize=8)
def _demosaic_constants(h, w):
    """Site masks, inverse tap density, and kernels for mosaic interpolation.

    R/B live on a 2x-subsampled quad grid, G on a quincunx; the density
    normalizer renormalizes border taps over the samples that exist.
    """
    from scipy.ndimage import correlate

    masks = np.zeros((3, h, w), dtype=np.float32)
    masks[0, 0::2, 0::2] = 1.0
    masks[1, 0::2, 1::2] = 1.0
    masks[1, 1::2, 0::2] = 1.0
    masks[2, 1::2, 1::2] = 1.0
    kernels = np.stack([_DEMOSAIC_QUAD, _DEMOSAIC_QUINCUNX, _DEMOSAIC_QUAD])
    den = np.stack([correlate(masks[i], kernels[i],
                              mode="constant", cval=0.0)
                    for i in range(3)])
    return masks[None], (1.0 / den)[None].astype(np.float32), kernels


@dataclass
class DsdNetConfig:
    """Structural hyperparameters; defaults land in the target budget."""

    base_channels: int = 36
    n_scales: int = 3
    blocks_per_scale: int = 2
    heads: tuple = (1, 2, 4)
    ssm_state_dim: int = 8
    ffn_expansion: float = 2.0
    target_params: int = None

    def __post_init__(self):
        self.heads = tuple(self.heads)
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        if len(self.heads) != self.n_scales:
            raise ValueError(
                f"need one head count per scale, got {self.heads}")
        if self.base_channels % max(self.heads):
            raise ValueError("base_channels must divide by the head counts")

    def width(self, scale):
        return self.base_channels * (1 << scale)


class StridedDown(Module):
    """2x2 stride-2 convolution halving resolution, changing width."""

    def __init__(self, rng, c_in, c_out):
        super().__init__()
        self.w = Parameter(trunc_normal(rng, (c_out, c_in, 2, 2)))
        self.b = Parameter(np.zeros(c_out, dtype=np.float32))

    def forward(self, x):
        return T.strided_downsample(x, self.w, self.b)


class PixelShuffleUp(Module):
    """1x1 expansion + pixel shuffle doubling resolution."""

    def __init__(self, rng, c_in, c_out):
        super().__init__()
        self.conv = Conv1x1(rng, c_in, 4 * c_out)

    def forward(self, x):
        return T.pixel_shuffle(self.conv(x), 2)


class ConcatExchange(Module):
    """Attention-free stream exchange used by the fusion ablation.

    Each stream adds a zero-initialized projection of the concatenated
    pair, so the exchange starts at identity like the full fusion block.
    """

    def __init__(self, rng, c):
        super().__init__()
        self.proj_a = Conv1x1(rng, 2 * c, c, zero_init=True)
        self.proj_b = Conv1x1(rng, 2 * c, c, zero_init=True)

    def forward(self, f_a, f_b):
        z = T.concat_channels([f_a, f_b])
        return f_a + self.proj_a(z), f_b + self.proj_b(z)


def _block_list(factory, count):
    return ModuleList([factory() for _ in range(count)])


class DsdNet(Module):
    """Dual-stream U-shaped restoration network.

    forward(raw, ycc) -> (srgb, aux): raw is (n,4,H,W) packed mosaic, ycc
    is (n,3,H,W) guidance; srgb is (n,3,2H,2W), aux is (n,3,H,W). Variants
    drop or replace the guidance stream, the per-scale fusion, or the
    decoder guidance attention; output shapes never change.
    """

    def __init__(self, config=None, variant="full", seed=0):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        cfg = config if config is not None else DsdNetConfig()
        self.config = cfg
        self.variant = variant
        self.invocations = 0
        self.has_raw = variant != "ycc_only"
        self.has_ycc = variant != "no_ycc"
        both = self.has_raw and self.has_ycc
        self.use_lcat = both and variant not in ("no_lcat",
                                                 "no_sadm_no_lcat")
        self.use_attn_fusion = variant not in ("no_sadm", "no_sadm_no_lcat")

        rng = init_rng(seed)
        s = cfg.n_scales
        k = cfg.blocks_per_scale
        e = cfg.ffn_expansion
        nd = cfg.ssm_state_dim

        def mixers(c):
            return _block_list(
                lambda: MixerBlock(rng, c, state_dim=nd, expansion=e), k)

        def guides(c):
            return _block_list(lambda: DilatedChannelBlock(rng, c), k)

        if self.has_raw:
            self.embed_raw = Conv1x1(rng, 4, cfg.width(0))
        if self.has_ycc:
            self.embed_ycc = Conv1x1(rng, 3, cfg.width(0))

        enc_raw, enc_ycc, fuse, down_raw, down_ycc = [], [], [], [], []
        for i in range(s):
            c = cfg.width(i)
            if self.has_raw:
                enc_raw.append(mixers(c))
            if self.has_ycc:
                enc_ycc.append(guides(c))
            if both:
                if self.use_attn_fusion:
                    fuse.append(DualStreamFusion(rng, c, cfg.heads[i],
                                                 ffn_expansion=e))
                else:
                    fuse.append(ConcatExchange(rng, c))
            if i < s - 1:
                c2 = cfg.width(i + 1)
                if self.has_raw:
                    down_raw.append(StridedDown(rng, c, c2))
                if self.has_ycc:
                    down_ycc.append(StridedDown(rng, c, c2))
        self.enc_raw = ModuleList(enc_raw)
        self.enc_ycc = ModuleList(enc_ycc)
        self.fuse = ModuleList(fuse)
        self.down_raw = ModuleList(down_raw)
        self.down_ycc = ModuleList(down_ycc)

        # Guidance decoder: bottom refinement, then upsample/skip/refine.
        if self.has_ycc:
            self.dec_ycc_bottom = guides(cfg.width(s - 1))
            up_ycc, skip_ycc, dec_ycc = [], [], []
            for i in range(s - 2, -1, -1):
                c = cfg.width(i)
                up_ycc.append(PixelShuffleUp(rng, cfg.width(i + 1), c))
                skip_ycc.append(Conv1x1(rng, 2 * c, c))
                dec_ycc.append(guides(c))
            self.up_ycc = ModuleList(up_ycc)
            self.skip_ycc = ModuleList(skip_ycc)
            self.dec_ycc = ModuleList(dec_ycc)

        # Primary decoder mirrors it, with guidance attention per scale.
        if self.has_raw:
            if self.use_lcat:
                self.lcat = ModuleList(
                    [GuidedAttentionBlock(rng, cfg.width(i), cfg.heads[i],
                                          ffn_expansion=e)
                     for i in range(s)])
            self.dec_raw_bottom = mixers(cfg.width(s - 1))
            up_raw, skip_raw, dec_raw = [], [], []
            for i in range(s - 2, -1, -1):
                c = cfg.width(i)
                up_raw.append(PixelShuffleUp(rng, cfg.width(i + 1), c))
                skip_raw.append(Conv1x1(rng, 2 * c, c))
                dec_raw.append(mixers(c))
            self.up_raw = ModuleList(up_raw)
            self.skip_raw = ModuleList(skip_raw)
            self.dec_raw = ModuleList(dec_raw)

        self.head_srgb = Conv1x1(rng, cfg.width(0), 12)
        # Zero-initialized aux head: a fresh network emits a zero guidance
        # map, so auxiliary supervision starts from a clean slate instead
        # of head noise.
        self.head_aux = Conv1x1(rng, cfg.width(0), 3, zero_init=True)
        self.assign_names()

    @staticmethod
    def _reconstruction_base(raw):
        """Bilinear-interpolated RGB from the packed mosaic, on the tape.

        The sRGB head predicts a correction on top of this base, so the
        decoder spends its capacity on moire removal and color mapping
        rather than re-synthesizing scene structure. Masks and per-lattice
        kernels are constants; every tap is non-negative and the site
        density is the exact normalizer, so the base stays in [0, 1].
        """
        n, _, h, w = raw.data.shape
        masks, inv_den, kernels = _demosaic_constants(2 * h, 2 * w)
        shape = (n, 3, 2 * h, 2 * w)
        mosaic = T.pixel_shuffle(raw, 2)
        sites = T.mul(T.repeat_channel(mosaic, 3),
                      T.Tensor(np.broadcast_to(masks, shape)))
        num = T.dwconv3x3(sites, T.Tensor(kernels))
        return T.mul(num, T.Tensor(np.broadcast_to(inv_den, shape)))

    def _check_inputs(self, raw, ycc):
        s = self.config.n_scales
        div = 1 << (s - 1)
        if raw.data.ndim != 4 or raw.data.shape[1] != 4:
            raise ValueError(f"raw input must be (n,4,h,w), got {raw.shape}")
        if ycc.data.ndim != 4 or ycc.data.shape[1] != 3:
            raise ValueError(f"ycc input must be (n,3,h,w), got {ycc.shape}")
        if raw.data.shape[0] != ycc.data.shape[0] or \
                raw.data.shape[2:] != ycc.data.shape[2:]:
            raise ValueError(
                f"stream shapes disagree: {raw.shape} vs {ycc.shape}")
        h, w = raw.data.shape[2:]
        if h % div or w % div:
            raise ValueError(
                f"spatial dims must divide by {div}, got {h}x{w}")

    def forward(self, raw, ycc):
        self._check_inputs(raw, ycc)
        self.invocations += 1
        cfg = self.config
        s = cfg.n_scales
        both = self.has_raw and self.has_ycc

        fr = self.embed_raw(raw) if self.has_raw else None
        fy = self.embed_ycc(ycc) if self.has_ycc else None
        skips_raw, skips_ycc = [], []
        for i in range(s):
            if self.has_raw:
                for blk in self.enc_raw[i]:
                    fr = blk(fr)
            if self.has_ycc:
                for blk in self.enc_ycc[i]:
                    fy = blk(fy)
            if both:
                fr, fy = self.fuse[i](fr, fy)
            skips_raw.append(fr)
            skips_ycc.append(fy)
            if i < s - 1:
                if self.has_raw:
                    fr = self.down_raw[i](fr)
                if self.has_ycc:
                    fy = self.down_ycc[i](fy)

        guide_feats = [None] * s
        if self.has_ycc:
            g = skips_ycc[s - 1]
            for blk in self.dec_ycc_bottom:
                g = blk(g)
            guide_feats[s - 1] = g
            for lvl, i in enumerate(range(s - 2, -1, -1)):
                g = self.skip_ycc[lvl](T.concat_channels(
                    [self.up_ycc[lvl](g), skips_ycc[i]]))
                for blk in self.dec_ycc[lvl]:
                    g = blk(g)
                guide_feats[i] = g

        if self.has_raw:
            r = skips_raw[s - 1]
            if self.use_lcat:
                r = self.lcat[s - 1](r, guide_feats[s - 1])
            for blk in self.dec_raw_bottom:
                r = blk(r)
            for lvl, i in enumerate(range(s - 2, -1, -1)):
                r = self.skip_raw[lvl](T.concat_channels(
                    [self.up_raw[lvl](r), skips_raw[i]]))
                if self.use_lcat:
                    r = self.lcat[i](r, guide_feats[i])
                for blk in self.dec_raw[lvl]:
                    r = blk(r)
            final = r
        else:
            final = guide_feats[0]

        # The head predicts a correction on top of the interpolated base:
        # moire bands, aliased detail, and color error live in the
        # correction while scene structure rides through unchanged.
        base = self._reconstruction_base(raw)
        srgb = T.add(base, T.pixel_shuffle(self.head_srgb(final), 2))
        aux_src = guide_feats[0] if self.has_ycc else final
        aux = self.head_aux(aux_src)
        return srgb, aux

    # -- analysis ----------------------------------------------------------

    def estimate_flops(self, h, w):
        """Analytic floating-point operation estimate for one forward pass.

        Counts multiply-accumulates as two operations and keeps dominant
        terms (convolutions, attention matmuls, scan recurrences, norms);
        every term is linear in pixel count, so cost scales with area.
        """
        cfg = self.config
        s = cfg.n_scales
        k = cfg.blocks_per_scale
        nd = cfg.ssm_state_dim
        e = cfg.ffn_expansion
        total = 0.0

        def conv(ci, co, px):
            return 2.0 * ci * co * px

        def dconv(c, px):
            return 18.0 * c * px

        def norm(c, px):
            return 8.0 * c * px

        def mixer(c, px):
            hidden = int(c * e)
            scan = norm(c, px)
            scan += 4 * (conv(c, c, px) + 2 * conv(c, nd, px))
            scan += 4 * px * c * nd * 10.0  # recurrence: exp, two FMAs, dot
            scan += conv(c, c, px)
            mlp = norm(c, px) + conv(c, 2 * hidden, px) \
                + dconv(hidden, px) + 2 * hidden * px + conv(hidden, c, px)
            return scan + mlp

        def guide(c, px):
            hidden = max(1, c // 4)
            return (norm(c, px) + 3 * dconv(c, px) + conv(3 * c, c, px)
                    + conv(c, hidden, 1) + conv(hidden, c, 1) + 2 * c * px)

        def attention(c, heads, px):
            ch = c // heads
            qkv = 3 * conv(c, c, px)
            mats = 2 * (2.0 * ch * ch * px * heads)  # QK^T and attn V
            soft = 5.0 * heads * ch * ch
            return qkv + mats + soft

        def ffn(c, px):
            hidden = int(c * e)
            return (conv(c, 2 * hidden, px) + dconv(2 * hidden, px)
                    + 2 * hidden * px + conv(hidden, c, px))

        def fusion(c, heads, px):
            if not self.use_attn_fusion:
                return 2 * conv(2 * c, c, px) + 2 * c * px
            cost = 2 * norm(c, px) + 2 * attention(c, heads, px)
            cost += conv(2 * c, c, px) + conv(c, 1, px)  # gate
            cost += conv(c, c, px) + ffn(c, px)
            cost += 4 * conv(c, c, px)  # per-stream modulation
            cost += 2 * conv(c, c, px)  # output projections
            return cost + 8.0 * c * px

        def lcat(c, heads, px):
            return (3 * norm(c, px) + 2 * conv(c, c, px)
                    + attention(c, heads, px) + conv(c, c, px)
                    + ffn(c, px) + 4.0 * c * px)

        px0 = float(h * w)
        if self.has_raw:
            total += conv(4, cfg.width(0), px0)
        if self.has_ycc:
            total += conv(3, cfg.width(0), px0)
        for i in range(s):
            c = cfg.width(i)
            px = px0 / (4 ** i)
            if self.has_raw:
                total += k * mixer(c, px)
            if self.has_ycc:
                total += k * guide(c, px)
            if self.has_raw and self.has_ycc:
                total += fusion(c, cfg.heads[i], px)
            if i < s - 1:
                streams = int(self.has_raw) + int(self.has_ycc)
                total += streams * conv(4 * c, cfg.width(i + 1), px / 4)
        for i in range(s - 1):
            c = cfg.width(i)
            px = px0 / (4 ** i)
            up = conv(cfg.width(i + 1), 4 * c, px / 4) + conv(2 * c, c, px)
            if self.has_ycc:
                total += up + k * guide(c, px)
            if self.has_raw:
                total += up + k * mixer(c, px)
        c_bot = cfg.width(s - 1)
        px_bot = px0 / (4 ** (s - 1))
        if self.has_ycc:
            total += k * guide(c_bot, px_bot)
        if self.has_raw:
            total += k * mixer(c_bot, px_bot)
            if self.use_lcat:
                for i in range(s):
                    total += lcat(cfg.width(i), cfg.heads[i],
                                  px0 / (4 ** i))
        total += conv(cfg.width(0), 12, px0) + conv(cfg.width(0), 3, px0)
        # Reconstruction base: two 3x3 normalized-convolution passes plus
        # a divide for each of 3 planes, at full (4*px0) resolution.
        total += 3 * (2 * 18.0 + 1.0) * 4 * px0
        return total
