"""Network building blocks: scan mixers, gated convolutions, stream fusion.

Every residual block zero-initializes its final projection so a freshly
constructed block is the identity on its primary input; training moves it
away from the identity smoothly.
"""

import math

import numpy as np

from . import tensor as T
from .nn import Module, ModuleList, trunc_normal
from .tensor import Parameter

__all__ = [
    "Conv1x1", "DwConv3x3", "ChannelNorm", "GatedFeedForward", "GatedMlp",
    "DirectionalScan", "MixerBlock", "DilatedChannelBlock",
    "CrossChannelAttention", "BlendGate", "DualStreamFusion",
    "GuidedAttentionBlock",
]


class Conv1x1(Module):
    """Pointwise channel map c_in -> c_out."""

    def __init__(self, rng, c_in, c_out, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((c_out, c_in), dtype=np.float32)
        else:
            w = trunc_normal(rng, (c_out, c_in))
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(c_out, dtype=np.float32)) if bias else None

    def forward(self, x):
        return T.conv1x1(x, self.w, self.b)


class DwConv3x3(Module):
    """Depthwise 3x3 convolution, optionally dilated; spatial size preserved."""

    def __init__(self, rng, c, dilation=1, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((c, 3, 3), dtype=np.float32)
        else:
            w = trunc_normal(rng, (c, 3, 3))
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(c, dtype=np.float32)) if bias else None
        self.dilation = dilation

    def forward(self, x):
        return T.dwconv3x3(x, self.w, self.b, dilation=self.dilation)


class ChannelNorm(Module):
    """Per-pixel layer norm over channels with learnable affine."""

    def __init__(self, c):
        super().__init__()
        self.gamma = Parameter(np.ones(c, dtype=np.float32))
        self.beta = Parameter(np.zeros(c, dtype=np.float32))

    def forward(self, x):
        return T.layer_norm_channels(x, self.gamma, self.beta)


class GatedFeedForward(Module):
    """Gated depthwise-conv feedforward (no norm, no residual; callers add
    both). Expands to two hidden branches, gates one with the other, projects
    back through a zero-initialized 1x1 so the module starts at zero output.
    """

    def __init__(self, rng, c, expansion=2.0):
        super().__init__()
        hidden = int(c * expansion)
        self.expand = Conv1x1(rng, c, 2 * hidden)
        self.dconv = DwConv3x3(rng, 2 * hidden)
        self.out = Conv1x1(rng, hidden, c, zero_init=True)

    def forward(self, x):
        a, b = T.split_channels(self.dconv(self.expand(x)), 2)
        return self.out(T.gelu(a) * b)


class GatedMlp(Module):
    """Residual gated MLP: norm, expand to two branches, gate one branch by
    a depthwise conv of the other, project back (zero-initialized).
    """

    def __init__(self, rng, c, expansion=2.0):
        super().__init__()
        hidden = int(c * expansion)
        self.norm = ChannelNorm(c)
        self.expand = Conv1x1(rng, c, 2 * hidden)
        self.dconv = DwConv3x3(rng, hidden)
        self.out = Conv1x1(rng, hidden, c, zero_init=True)

    def forward(self, x):
        f1, f2 = T.split_channels(self.expand(self.norm(x)), 2)
        return x + self.out(f1 * self.dconv(f2))


def _to_sequence(t, direction):
    """Flatten (n,c,h,w) into a (n,1,c,L) raster sequence.

    Directions: 0 row-major forward, 1 row-major backward, 2 column-major
    forward, 3 column-major backward.
    """
    n, c, h, w = t.data.shape
    if direction >= 2:
        t = T.permute(t, (0, 1, 3, 2))
    seq = T.reshape(t, (n, 1, c, h * w))
    if direction % 2:
        seq = T.flip(seq, 3)
    return seq


def _from_sequence(seq, direction, h, w):
    """Inverse of _to_sequence for a (n,1,c,L) slice."""
    n, _, c, _ = seq.data.shape
    if direction % 2:
        seq = T.flip(seq, 3)
    if direction >= 2:
        return T.permute(T.reshape(seq, (n, c, w, h)), (0, 1, 3, 2))
    return T.reshape(seq, (n, c, h, w))


class DirectionalScan(Module):
    """Residual four-direction selective state-space mixer.

    The normalized map is scanned as four 1-D sequences (rows and columns,
    each both ways). Each direction owns input-dependent step/input/output
    projections and a diagonal state transition A = -exp(a_log); the four
    scan outputs are summed and projected back (zero-initialized).
    """

    DIRECTIONS = 4

    def __init__(self, rng, c, state_dim=8):
        super().__init__()
        k = self.DIRECTIONS
        self.norm = ChannelNorm(c)
        self.delta_proj = ModuleList(
            [Conv1x1(rng, c, c) for _ in range(k)])
        self.b_proj = ModuleList(
            [Conv1x1(rng, c, state_dim, bias=False) for _ in range(k)])
        self.c_proj = ModuleList(
            [Conv1x1(rng, c, state_dim, bias=False) for _ in range(k)])
        # S4D-real style init: decay rates 1..N per channel and direction.
        a_row = np.log(np.arange(1, state_dim + 1, dtype=np.float32))
        self.a_log = Parameter(np.tile(a_row, (k, c, 1)))
        self.out = Conv1x1(rng, c, c, zero_init=True)

    def forward(self, x):
        n, c, h, w = x.data.shape
        z = self.norm(x)
        us, deltas, bs, cs = [], [], [], []
        for d in range(self.DIRECTIONS):
            us.append(_to_sequence(z, d))
            deltas.append(_to_sequence(T.softplus(self.delta_proj[d](z)), d))
            bs.append(_to_sequence(self.b_proj[d](z), d))
            cs.append(_to_sequence(self.c_proj[d](z), d))
        a = T.neg(T.exp(self.a_log))
        y = T.selective_scan(T.concat(us, 1), T.concat(deltas, 1), a,
                             T.concat(bs, 1), T.concat(cs, 1))
        total = None
        for d in range(self.DIRECTIONS):
            part = _from_sequence(T.slice_axis(y, 1, d, d + 1), d, h, w)
            total = part if total is None else total + part
        return x + self.out(total)


class MixerBlock(Module):
    """Scan mixer followed by gated MLP, both residual."""

    def __init__(self, rng, c, state_dim=8, expansion=2.0):
        super().__init__()
        self.scan = DirectionalScan(rng, c, state_dim=state_dim)
        self.mlp = GatedMlp(rng, c, expansion=expansion)

    def forward(self, x):
        return self.mlp(self.scan(x))


class DilatedChannelBlock(Module):
    """Residual multi-dilation depthwise stack with channel attention.

    Norm, depthwise 3x3 at dilations 1/2/3, concat, zero-initialized 1x1
    fuse, then squeeze-style channel gating (global pool, bottleneck,
    sigmoid) scales the fused map before the residual add.
    """

    def __init__(self, rng, c):
        super().__init__()
        self.norm = ChannelNorm(c)
        self.d1 = DwConv3x3(rng, c, dilation=1)
        self.d2 = DwConv3x3(rng, c, dilation=2)
        self.d3 = DwConv3x3(rng, c, dilation=3)
        self.fuse = Conv1x1(rng, 3 * c, c, zero_init=True)
        hidden = max(1, c // 4)
        self.att1 = Conv1x1(rng, c, hidden)
        self.att2 = Conv1x1(rng, hidden, c)
        self.last_weights = None

    def forward(self, x):
        n, c, h, w = x.data.shape
        z = self.norm(x)
        fused = self.fuse(T.concat_channels([self.d1(z), self.d2(z),
                                             self.d3(z)]))
        gate = T.sigmoid(self.att2(T.relu(self.att1(T.spatial_mean(fused)))))
        self.last_weights = gate.data
        return x + T.repeat_spatial(gate, h, w) * fused


class CrossChannelAttention(Module):
    """Transposed (channel-wise) multi-head attention.

    Q/K/V are 1x1 projections; per head the (c/heads, L) matrices attend
    over channels, so the attention matrix is (c/heads)^2 regardless of
    resolution. Keys have dimensionality L, hence the 1/sqrt(L) scale; a
    learnable per-head temperature multiplies after the scale. No output
    projection here; callers own it.
    """

    def __init__(self, rng, c, heads):
        super().__init__()
        if c % heads:
            raise ValueError(f"channels {c} not divisible by heads {heads}")
        self.heads = heads
        self.wq = Conv1x1(rng, c, c, bias=False)
        self.wk = Conv1x1(rng, c, c, bias=False)
        self.wv = Conv1x1(rng, c, c, bias=False)
        self.tau = Parameter(np.ones(heads, dtype=np.float32))
        self.last_attn = None

    def forward(self, q_src, k_src, v_src):
        n, c, h, w = q_src.data.shape
        ch = c // self.heads
        length = h * w
        q = T.reshape(self.wq(q_src), (n, self.heads, ch, length))
        k = T.reshape(self.wk(k_src), (n, self.heads, ch, length))
        v = T.reshape(self.wv(v_src), (n, self.heads, ch, length))
        logits = T.matmul(q, T.permute(k, (0, 1, 3, 2)))
        logits = T.mul_headwise(logits * (1.0 / math.sqrt(length)), self.tau)
        attn = T.softmax_lastdim(logits)
        self.last_attn = attn.data
        return T.reshape(T.matmul(attn, v), (n, c, h, w))


class BlendGate(Module):
    """Content-dependent single-channel blend map in (0,1)."""

    def __init__(self, rng, c):
        super().__init__()
        self.c1 = Conv1x1(rng, 2 * c, c)
        self.c2 = Conv1x1(rng, c, 1)

    def forward(self, f_a, f_b):
        z = T.concat_channels([f_a, f_b])
        return T.sigmoid(self.c2(T.gelu(self.c1(z))))


class DualStreamFusion(Module):
    """Bidirectional cross-stream attention exchange with gated blending.

    Each stream queries the other; a learned blend map mixes the two
    attention outputs, a feedforward refines the mixture, and per-stream
    sigmoid masks modulate the normalized stream features. Stream outputs
    add the modulated features plus the fused mixture back through
    zero-initialized projections, keeping both streams at identity on a
    fresh block.
    """

    def __init__(self, rng, c, heads, ffn_expansion=2.0):
        super().__init__()
        self.norm_a = ChannelNorm(c)
        self.norm_b = ChannelNorm(c)
        self.attn_ab = CrossChannelAttention(rng, c, heads)
        self.attn_ba = CrossChannelAttention(rng, c, heads)
        self.gate = BlendGate(rng, c)
        self.proj = Conv1x1(rng, c, c)
        self.ffn = GatedFeedForward(rng, c, expansion=ffn_expansion)
        self.mod_a1 = Conv1x1(rng, c, c)
        self.mod_a2 = Conv1x1(rng, c, c)
        self.mod_b1 = Conv1x1(rng, c, c)
        self.mod_b2 = Conv1x1(rng, c, c)
        self.out_a = Conv1x1(rng, c, c, zero_init=True)
        self.out_b = Conv1x1(rng, c, c, zero_init=True)
        self.last_alpha = None

    def forward(self, f_a, f_b):
        n, c, h, w = f_a.data.shape
        ln_a = self.norm_a(f_a)
        ln_b = self.norm_b(f_b)
        # a queries b and vice versa; alpha weights the flow back into a.
        attn_ab = self.attn_ab(ln_a, ln_b, ln_b)
        attn_ba = self.attn_ba(ln_b, ln_a, ln_a)
        alpha1 = self.gate(ln_a, ln_b)
        self.last_alpha = alpha1.data
        alpha = T.repeat_channel(alpha1, c)
        mixed = alpha * attn_ba + ((-alpha) + 1.0) * attn_ab
        fused = mixed + self.ffn(self.proj(mixed))
        mask_a = T.sigmoid(self.mod_a2(T.relu(self.mod_a1(fused))))
        mask_b = T.sigmoid(self.mod_b2(T.relu(self.mod_b1(fused))))
        out_a = f_a + self.out_a(ln_a * mask_a + fused)
        out_b = f_b + self.out_b(ln_b * mask_b + fused)
        return out_a, out_b


class GuidedAttentionBlock(Module):
    """Residual cross-domain attention guided by a learned gate.

    The guidance stream is gated into the primary stream to form the
    query/key source; values come from the primary stream alone, so closing
    the gate removes all guidance influence. Attention output and
    feedforward both re-enter through zero-initialized projections.
    """

    def __init__(self, rng, c, heads, ffn_expansion=2.0):
        super().__init__()
        self.norm_p = ChannelNorm(c)
        self.norm_g = ChannelNorm(c)
        self.g1 = Conv1x1(rng, c, c)
        self.g2 = Conv1x1(rng, c, c)
        self.attn = CrossChannelAttention(rng, c, heads)
        self.attn_out = Conv1x1(rng, c, c, zero_init=True)
        self.norm_ffn = ChannelNorm(c)
        self.ffn = GatedFeedForward(rng, c, expansion=ffn_expansion)
        self.last_gate = None

    def forward(self, f_primary, f_guide):
        ln_p = self.norm_p(f_primary)
        ln_g = self.norm_g(f_guide)
        gate = T.sigmoid(self.g2(T.relu(self.g1(ln_p))))
        self.last_gate = gate.data
        mixed = ln_g * gate + ln_p
        a = f_primary + self.attn_out(self.attn(mixed, mixed, ln_p))
        return a + self.ffn(self.norm_ffn(a))
