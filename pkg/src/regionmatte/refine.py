"""Refinement network with Cross Region Attention (CRA).

Each 8x8 RGBA crop is encoded to a ``d``-vector. A region and its ``k``
nearest neighbors form a ``(k+1, d)`` token set; two attention blocks mix it,
with a learned scalar bias per relative position looked up from a table of
``(2s-1)^2 + 1`` entries (last entry: out of range). The first block attends
all pairs; the second only lets the central region query its neighborhood.
The decoder combines the contextual feature with the region's own encoder
features and produces a refined 8x8 alpha.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, LayerNorm, Linear, Mlp, Module
from .regions import table_size
from .tensor import Tensor, as_tensor

COARSE_CLAMP = 1e-4
# He-uniform bound for convolutions followed by ReLU
RELU_GAIN = float(np.sqrt(6.0))


@dataclass
class RefineConfig:
    feat_dim: int = 64
    num_heads: int = 4
    k: int = 8
    s: int = 4
    mlp_ratio: float = 2.0
    enc_channels: tuple = (16, 32)
    max_regions: int = 4096

    def __post_init__(self):
        self.enc_channels = tuple(self.enc_channels)

    def validate(self):
        if self.feat_dim % self.num_heads:
            raise ValueError(f"feat_dim {self.feat_dim} not divisible by num_heads {self.num_heads}")
        if self.s < 1 or self.k < 0:
            raise ValueError("search range must be >= 1 and k >= 0")
        return self


class BiasTable(Module):
    """Learnable relative positional biases; the last slot is the out-of-range bucket."""

    def __init__(self, s):
        self.s = s
        self.values = Tensor(np.zeros(table_size(s), np.float32), requires_grad=True)

    def forward(self, slots):
        return ops.gather(self.values, slots, axis=0)


class RegionEncoder(Module):
    def __init__(self, cfg, rng):
        c1, c2 = cfg.enc_channels
        self.conv1 = Conv2d(4, c1, 3, rng, stride=2, gain=RELU_GAIN)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, gain=RELU_GAIN)
        self.conv3 = Conv2d(c2, cfg.feat_dim, 3, rng, stride=2, gain=RELU_GAIN)

    def forward(self, crops):
        """(n, 8, 8, 4) -> feature (n, d) plus skips at 8x8, 4x4 and 2x2."""
        x = ops.scalar_mul(ops.sub(crops, 0.5), 2.0)
        e1 = ops.relu(self.conv1(x))
        e2 = ops.relu(self.conv2(e1))
        f = self.conv3(e2)
        return ops.reshape(f, (f.shape[0], f.shape[-1])), (x, e1, e2)


def encode_region(crop, encoder):
    """Single (8, 8, 4) crop -> (d,) feature."""
    crop = as_tensor(crop)
    f, _ = encoder(ops.reshape(crop, (1,) + crop.shape))
    return ops.reshape(f, (f.shape[-1],))


class CRABlock(Module):
    """Pre-norm multi-head attention + MLP over neighborhoods ``(n, k+1, d)``."""

    def __init__(self, dim, num_heads, mlp_ratio, rng, central_only=False):
        self.num_heads = num_heads
        self.central_only = central_only
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def _heads(self, x):
        n, m, d = x.shape
        x = ops.reshape(x, (n, m, self.num_heads, d // self.num_heads))
        return ops.transpose(x, (0, 2, 1, 3))

    def forward(self, x, biases):
        """``biases``: (n, k+1) per-key scalars shared by all heads and queries."""
        n, m, d = x.shape
        h = self.norm1(x)
        base = x[:, :1] if self.central_only else x
        q_in = h[:, :1] if self.central_only else h
        q, k, v = self._heads(self.q(q_in)), self._heads(self.k(h)), self._heads(self.v(h))
        b = ops.reshape(biases, (n, 1, 1, m))
        out = ops.attention(q, k, v, bias=b)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (n, base.shape[1], d))
        y = base + self.proj(out)
        return y + self.mlp(self.norm2(y))


def cra_block(neigh, biases, block):
    """One neighborhood: (k+1, d) tokens, (k+1,) biases -> (k+1, d) or (1, d)."""
    neigh, biases = as_tensor(neigh), as_tensor(biases)
    out = block(ops.reshape(neigh, (1,) + neigh.shape), ops.reshape(biases, (1,) + biases.shape))
    return ops.reshape(out, out.shape[1:])


class RegionDecoder(Module):
    def __init__(self, cfg, rng):
        c1, c2 = cfg.enc_channels
        d = cfg.feat_dim
        self.up2 = Conv2d(2 * d + c2, c2, 3, rng, gain=RELU_GAIN)
        self.up4 = Conv2d(c2 + c1, c1, 3, rng, gain=RELU_GAIN)
        self.up8 = Conv2d(c1 + 4, c1, 3, rng, gain=RELU_GAIN)
        self.out = Conv2d(c1, 1, 3, rng)
        # start as a pass-through of the coarse alpha
        self.out.weight.data[...] = 0.0

    def forward(self, context, feature, skips):
        x8, e1, e2 = skips
        n, d = context.shape
        z = ops.reshape(ops.concat([context, feature], axis=-1), (n, 1, 1, 2 * d))
        y = ops.relu(self.up2(ops.concat([ops.bilinear_upsample(z, (2, 2)), e2], axis=-1)))
        y = ops.relu(self.up4(ops.concat([ops.bilinear_upsample(y, (4, 4)), e1], axis=-1)))
        y = ops.relu(self.up8(ops.concat([ops.bilinear_upsample(y, (8, 8)), x8], axis=-1)))
        return ops.reshape(self.out(y), (n, 8, 8))


class RefineNet(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg.validate()
        self.encoder = RegionEncoder(cfg, rng)
        self.table = BiasTable(cfg.s)
        self.block1 = CRABlock(cfg.feat_dim, cfg.num_heads, cfg.mlp_ratio, rng)
        self.block2 = CRABlock(cfg.feat_dim, cfg.num_heads, cfg.mlp_ratio, rng, central_only=True)
        self.decoder = RegionDecoder(cfg, rng)

    def forward(self, crops, knn, slots):
        """``crops`` (n, 8, 8, 4); ``knn`` (n, k) indices; ``slots`` (n, k+1) -> alpha (n, 8, 8).

        The decoder predicts a correction in logit space on top of the crop's
        coarse alpha channel.
        """
        crops = as_tensor(crops)
        n = crops.shape[0]
        feats, skips = self.encoder(crops)
        idx = np.concatenate([np.arange(n)[:, None], np.asarray(knn, np.int64).reshape(n, -1)], axis=1)
        neigh = ops.gather(feats, idx, axis=0)
        biases = self.table(np.asarray(slots, np.int64))
        x = self.block1(neigh, biases)
        ctx = self.block2(x, biases)
        ctx = ops.reshape(ctx, (n, ctx.shape[-1]))
        delta = self.decoder(ctx, feats, skips)
        prior = ops.clamp(crops[..., 3], COARSE_CLAMP, 1.0 - COARSE_CLAMP)
        prior_logit = ops.sub(ops.log(prior), ops.log(ops.sub(1.0, prior)))
        return ops.sigmoid(ops.add(prior_logit, delta))


def refine_forward(regions, net):
    """Run the refinement network on a populated :class:`~regionmatte.regions.RegionSet`."""
    return net(regions.crops, regions.knn, regions.slots)
