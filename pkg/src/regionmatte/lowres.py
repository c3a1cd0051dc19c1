"""Low-resolution network: pixel-unshuffle tokens, windowed-attention backbone, decoder.

The backbone follows the Swin layout (window attention with a learned
relative position bias, alternating shifted windows, patch merging between
stages) with one change: feature maps whose sizes are not multiples of the
window are zero padded and the padded positions are masked out of the
attention and zeroed on output. The decoder emits a 16-channel map at 1/16
resolution which a pixel shuffle turns into the 4-channel (alpha + 3 trimap
logits) output at 1/8; auxiliary heads run at 1/16 and 1/32.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ImageTooSmallError, ShapeError
from .nn import Conv2d, LayerNorm, Linear, Mlp, Module
from .tensor import Tensor, as_tensor

MIN_INPUT_SIZE = 224


@dataclass
class BackboneConfig:
    patch_size: int = 16
    embed_dim: int = 48
    depths: list = field(default_factory=lambda: [2, 2])
    num_heads: list = field(default_factory=lambda: [2, 4])
    window_size: int = 7
    downsample_pre: int = 1
    mlp_ratio: float = 4.0
    decoder_dim: int = 32
    mean: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    std: list = field(default_factory=lambda: [0.5, 0.5, 0.5])

    def __post_init__(self):
        self.depths = list(self.depths)
        self.num_heads = list(self.num_heads)
        self.mean = list(self.mean)
        self.std = list(self.std)

    @property
    def token_stride(self):
        return self.downsample_pre * self.patch_size

    @property
    def stage_strides(self):
        return [self.token_stride * 2 ** i for i in range(len(self.depths))]

    @property
    def stage_dims(self):
        return [self.embed_dim * 2 ** i for i in range(len(self.depths))]

    def validate(self):
        p = self.patch_size
        if p < 1 or p & (p - 1):
            raise ValueError(f"patch_size must be a power of two, got {p}")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if len(self.depths) != len(self.num_heads):
            raise ValueError("depths and num_heads must have the same length")
        if len(self.depths) < 2:
            raise ValueError("need at least two stages (features at 1/16 and 1/32)")
        if self.token_stride != 16:
            raise ValueError(f"downsample_pre * patch_size must be 16, got {self.token_stride}")
        for dim, heads in zip(self.stage_dims, self.num_heads):
            if dim % heads:
                raise ValueError(f"stage width {dim} not divisible by {heads} heads")
        return self


@dataclass
class WindowMask:
    """Validity plane of a zero-padded feature map."""

    padded_h: int
    padded_w: int
    valid: np.ndarray

    @property
    def valid_h(self):
        return int(self.valid[:, 0].sum())

    @property
    def valid_w(self):
        return int(self.valid[0].sum())


@dataclass
class CoarseOutput:
    alpha: Tensor         # (N, H/8, W/8) in [0, 1]
    trimap: Tensor        # (N, H/8, W/8, 3) softmax over (fg, bg, uncertain)
    aux_16: tuple         # (alpha, trimap) at 1/16
    aux_32: tuple         # (alpha, trimap) at 1/32

    def levels(self):
        return {8: (self.alpha, self.trimap), 16: self.aux_16, 32: self.aux_32}


def normalize(image, cfg):
    """Map an RGB image in [0, 1] to the backbone input range."""
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    return (np.asarray(image, dtype=np.float32) - mean) / std


def pad_to_windows(x, window, extra_windows=0):
    """Zero pad an NHWC map at the bottom/right to window multiples.

    ``extra_windows`` adds whole windows beyond the minimum; results on the
    valid area do not depend on it.
    """
    n, h, w, c = x.shape
    ph = math.ceil(h / window) * window + extra_windows * window
    pw = math.ceil(w / window) * window + extra_windows * window
    valid = np.zeros((ph, pw), dtype=bool)
    valid[:h, :w] = True
    if (ph, pw) != (h, w):
        x = ops.zero_pad(x, ((0, 0), (0, ph - h), (0, pw - w), (0, 0)))
    return x, WindowMask(ph, pw, valid)


def _relative_index(window):
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return (rel[0] * (2 * window - 1) + rel[1]).reshape(-1)


def _partition(x, window, offset):
    """(N, H, W, C) -> (N * nWin, window * window, C); ``offset`` pads top/left."""
    if offset:
        tail = window - offset
        x = ops.zero_pad(x, ((0, 0), (offset, tail), (offset, tail), (0, 0)))
    n, h, w, c = x.shape
    x = ops.reshape(x, (n, h // window, window, w // window, window, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (n * (h // window) * (w // window), window * window, c)), (h, w)


def _merge(windows, n, frame, window, offset, out_hw):
    h, w = frame
    c = windows.shape[-1]
    x = ops.reshape(windows, (n, h // window, w // window, window, window, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    x = ops.reshape(x, (n, h, w, c))
    if offset:
        x = x[:, offset:offset + out_hw[0], offset:offset + out_hw[1], :]
    return x


def _partition_mask(valid, window, offset):
    if offset:
        tail = window - offset
        valid = np.pad(valid, ((offset, tail), (offset, tail)))
    h, w = valid.shape
    v = valid.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3)
    return v.reshape(-1, window * window)


class WindowAttention(Module):
    def __init__(self, dim, num_heads, window, rng):
        self.num_heads = num_heads
        self.window = window
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        table = rng.normal(0.0, 0.02, size=((2 * window - 1) ** 2, num_heads)).astype(np.float32)
        self.bias_table = Tensor(table, requires_grad=True)
        self._index = _relative_index(window)

    def relative_bias(self):
        area = self.window * self.window
        b = ops.gather(self.bias_table, self._index, axis=0)
        b = ops.reshape(b, (area, area, self.num_heads))
        return ops.transpose(b, (2, 0, 1))

    def forward(self, x, key_valid):
        """``x``: (B, L, C) windows; ``key_valid``: (B, L) boolean."""
        b, length, c = x.shape
        heads = self.num_heads
        qkv = ops.reshape(self.qkv(x), (b, length, 3, heads, c // heads))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        mask = np.where(key_valid, 0.0, ops.MASK_VALUE).astype(x.dtype)[:, None, None, :]
        out = ops.attention(q, k, v, bias=self.relative_bias(), mask=mask)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, length, c))
        return self.proj(out)


class SwinBlock(Module):
    def __init__(self, dim, num_heads, window, shift, mlp_ratio, rng):
        self.window = window
        self.shift = shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def forward(self, x, mask):
        """``x`` is zero padded to window multiples as described by ``mask``."""
        n, h, w, c = x.shape
        if (h, w) != (mask.padded_h, mask.padded_w) or h % self.window or w % self.window:
            raise ShapeError(f"features {h}x{w} do not match window mask {mask.padded_h}x{mask.padded_w}")
        offset = (self.window - self.shift) % self.window if self.shift else 0
        windows, frame = _partition(self.norm1(x), self.window, offset)
        key_valid = np.tile(_partition_mask(mask.valid, self.window, offset), (n, 1))
        attended = _merge(self.attn(windows, key_valid), n, frame, self.window, offset, (h, w))
        x = x + attended
        x = x + self.mlp(self.norm2(x))
        return x * mask.valid[None, :, :, None].astype(x.dtype)


def windowed_block(features, block, mask):
    """Run one windowed-attention block on padded features."""
    return block(features, mask)


class PatchMerging(Module):
    def __init__(self, dim, rng):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            x = ops.zero_pad(x, ((0, 0), (0, h % 2), (0, w % 2), (0, 0)))
        parts = [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]]
        return self.reduction(self.norm(ops.concat(parts, axis=-1)))


class Stage(Module):
    def __init__(self, dim, depth, num_heads, window, mlp_ratio, rng):
        self.window = window
        self.blocks = [SwinBlock(dim, num_heads, window, 0 if i % 2 == 0 else window // 2, mlp_ratio, rng)
                       for i in range(depth)]
        self.norm = LayerNorm(dim)

    def forward(self, x):
        n, h, w, c = x.shape
        x, mask = pad_to_windows(x, self.window)
        for block in self.blocks:
            x = block(x, mask)
        return self.norm(x[:, :h, :w, :])


class PatchEmbed(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        in_dim = 3 * cfg.patch_size ** 2
        self.proj = Linear(in_dim, cfg.embed_dim, rng)
        self.norm = LayerNorm(cfg.embed_dim)

    def forward(self, image):
        return tokenize(image, self.cfg, self)


def tokenize(image, cfg, embed):
    """Pixel-unshuffle the (normalized) image and project tokens to ``embed_dim``."""
    image = as_tensor(image)
    h, w = image.shape[-3], image.shape[-2]
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise ImageTooSmallError(f"input {h}x{w} is smaller than {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")
    r = cfg.token_stride
    if h % r or w % r:
        raise ShapeError(f"input {h}x{w} is not divisible by the token stride {r}; resize or pad first")
    if cfg.downsample_pre > 1:
        image = ops.avg_pool(image, cfg.downsample_pre)
    tokens = ops.pixel_unshuffle(image, cfg.patch_size)
    return embed.norm(embed.proj(tokens))


class Decoder(Module):
    def __init__(self, cfg, rng):
        dims = cfg.stage_dims
        d = cfg.decoder_dim
        self.strides = cfg.stage_strides
        self.lateral = Conv2d(dims[-1], d, 3, rng)
        self.fuse = [Conv2d(d + dims[i], d, 3, rng) for i in reversed(range(len(dims) - 1))]
        self.head_32 = Conv2d(d, 4, 3, rng)
        self.head_16 = Conv2d(d, 4, 3, rng)
        self.head_8 = Conv2d(d, 16, 3, rng)

    def forward(self, features):
        y = ops.relu(self.lateral(features[-1]))
        by_stride = {self.strides[-1]: y}
        for conv, i in zip(self.fuse, reversed(range(len(features) - 1))):
            skip = features[i]
            up = ops.bilinear_upsample(y, skip.shape[1:3])
            y = ops.relu(conv(ops.concat([up, skip], axis=-1)))
            by_stride[self.strides[i]] = y
        y16, y32 = by_stride[16], by_stride[32]
        main = ops.pixel_shuffle(self.head_8(y16), 2)
        return main, self.head_16(y16), self.head_32(y32)


def _split_head(logits):
    alpha = ops.sigmoid(logits[..., 0])
    trimap = ops.softmax(logits[..., 1:4], axis=-1)
    return alpha, trimap


class LowResNet(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg.validate()
        self.embed = PatchEmbed(cfg, rng)
        dims = cfg.stage_dims
        self.stages = [Stage(dims[i], cfg.depths[i], cfg.num_heads[i], cfg.window_size, cfg.mlp_ratio, rng)
                       for i in range(len(dims))]
        self.merges = [PatchMerging(dims[i], rng) for i in range(len(dims) - 1)]
        self.decoder = Decoder(cfg, rng)

    def backbone(self, image):
        x = self.embed(image)
        features = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            features.append(x)
            if i < len(self.merges):
                x = self.merges[i](x)
        return features

    def forward(self, image):
        """``image``: normalized (N, H, W, 3) or (H, W, 3) -> :class:`CoarseOutput`."""
        image = as_tensor(image)
        if image.ndim == 3:
            image = ops.reshape(image, (1,) + image.shape)
        main, aux16, aux32 = self.decoder(self.backbone(image))
        return CoarseOutput(*_split_head(main), _split_head(aux16), _split_head(aux32))


def lowres_forward(image, net):
    return net(image)
