"""Analytic FLOP count of one inference pass.

Counts multiply-accumulates of every linear, convolution and attention
product (2 FLOPs each), mirroring the executed shapes: window padding,
extra windows of shifted blocks, odd-size padding before patch merging and
the inference-time padding of the input. Elementwise work (norms,
activations, softmax, resampling) is not counted. The refinement cost
assumes every region has exactly ``k`` neighbors, so it is linear in the
number of regions.
"""

import math

from .pipeline import inference_dims


def _ceil_to(x, m):
    return math.ceil(x / m) * m


def _conv(h, w, k, cin, cout):
    return h * w * k * k * cin * cout


def _swin_block_macs(h, w, dim, window, shift, mlp_ratio):
    hp, wp = _ceil_to(h, window), _ceil_to(w, window)
    offset = (window - shift) % window if shift else 0
    fh, fw = (hp + window, wp + window) if offset else (hp, wp)
    tokens = (fh // window) * (fw // window) * window * window
    area = window * window
    macs = tokens * dim * 3 * dim            # qkv
    macs += 2 * tokens * area * dim          # q k^T and weights v, summed over heads
    macs += tokens * dim * dim               # output projection
    macs += 2 * hp * wp * dim * int(dim * mlp_ratio)
    return macs


def coarse_macs(cfg, h, w):
    """MACs of the low-resolution network on an (h, w) input (already stride-aligned)."""
    r = cfg.token_stride
    gh, gw = h // r, w // r
    macs = gh * gw * 3 * cfg.patch_size ** 2 * cfg.embed_dim
    grids = []
    dims = cfg.stage_dims
    for i, dim in enumerate(dims):
        grids.append((gh, gw))
        for j in range(cfg.depths[i]):
            shift = 0 if j % 2 == 0 else cfg.window_size // 2
            macs += _swin_block_macs(gh, gw, dim, cfg.window_size, shift, cfg.mlp_ratio)
        if i < len(dims) - 1:
            gh, gw = math.ceil(gh / 2), math.ceil(gw / 2)
            macs += gh * gw * 4 * dim * 2 * dim
    d = cfg.decoder_dim
    macs += _conv(*grids[-1], 3, dims[-1], d)
    for i in reversed(range(len(dims) - 1)):
        macs += _conv(*grids[i], 3, d + dims[i], d)
    g16, g32 = grids[0], grids[1]
    macs += _conv(*g32, 3, d, 4) + _conv(*g16, 3, d, 4) + _conv(*g16, 3, d, 16)
    return macs


def region_macs(cfg):
    """MACs spent on one region (encoder, two attention blocks, decoder)."""
    d = cfg.feat_dim
    c1, c2 = cfg.enc_channels
    m = cfg.k + 1
    hidden = int(d * cfg.mlp_ratio)
    enc = _conv(4, 4, 3, 4, c1) + _conv(2, 2, 3, c1, c2) + _conv(1, 1, 3, c2, d)
    block1 = 3 * m * d * d + 2 * m * m * d + m * d * d + 2 * m * d * hidden
    block2 = d * d + 2 * m * d * d + 2 * m * d + d * d + 2 * d * hidden
    dec = (_conv(2, 2, 3, 2 * d + c2, c2) + _conv(4, 4, 3, c2 + c1, c1)
           + _conv(8, 8, 3, c1 + 4, c1) + _conv(8, 8, 3, c1, 1))
    return enc + block1 + block2 + dec


def count_flops(config, height, width, n_regions):
    """``{"coarse_flops", "refine_flops", "total"}`` for one image of ``height x width``."""
    if n_regions < 0:
        raise ValueError("n_regions must be non-negative")
    ph, pw = inference_dims(height, width)
    coarse = 2 * coarse_macs(config.backbone, ph, pw)
    refine = 2 * region_macs(config.refine) * int(n_regions)
    return {"coarse_flops": coarse, "refine_flops": refine, "total": coarse + refine}
