"""Synthetic composites and augmentation.

Every sample carries image, foreground, background and alpha with
``I = alpha * F + (1 - alpha) * B`` holding exactly (up to float32
rounding). Color and geometric augmentation are applied to F, B and alpha,
and the image is recomposited afterwards so the equation keeps holding.
"""

from dataclasses import dataclass, replace

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from .errors import PlacementError
from .ops import bilinear_upsample
from .tensor import Tensor, no_grad
from .workers import parallel_map


@dataclass
class CompositeSample:
    image: np.ndarray        # (H, W, 3)
    foreground: np.ndarray   # (H, W, 3)
    background: np.ndarray   # (H, W, 3)
    alpha: np.ndarray        # (H, W)

    @property
    def shape(self):
        return self.alpha.shape

    def recomposite(self):
        a = self.alpha[..., None]
        image = a * self.foreground + (1 - a) * self.background
        return replace(self, image=image.astype(np.float32))

    def composite_error(self):
        a = self.alpha.astype(np.float64)[..., None]
        expected = a * self.foreground + (1 - a) * self.background
        return float(np.abs(expected - self.image).max())


def resize(array, size):
    """Bilinear resize of an (H, W) or (H, W, C) array."""
    arr = np.asarray(array, dtype=np.float32)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    with no_grad():
        out = bilinear_upsample(Tensor(arr), size).data
    return out[..., 0] if squeeze else out


def _color_field(rng, h, w, base_hsv, spread):
    grid = rng.uniform(-spread, spread, size=(4, 4, 3)) + base_hsv
    grid[..., 0] %= 1.0
    grid[..., 1:] = np.clip(grid[..., 1:], 0.05, 0.95)
    field = hsv_to_rgb(grid).astype(np.float32)
    field = resize(field, (h, w))
    texture = ndimage.gaussian_filter(rng.normal(0, 0.04, size=(h, w, 1)), sigma=1.0)
    return np.clip(field + texture.astype(np.float32), 0.0, 1.0)


def random_colors(rng, h, w):
    """Foreground and background color fields with clearly different hues."""
    hue_f = rng.uniform(0, 1)
    hue_b = (hue_f + rng.uniform(0.3, 0.7)) % 1.0
    fg = _color_field(rng, h, w, np.array([hue_f, 0.6, rng.uniform(0.55, 0.9)]), 0.08)
    bg = _color_field(rng, h, w, np.array([hue_b, 0.5, rng.uniform(0.25, 0.6)]), 0.12)
    return fg, bg


def random_alpha(rng, h, w):
    """Portrait-like soft matte: head and shoulders, blurred edges, hair strokes."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = h * rng.uniform(0.35, 0.45), w * rng.uniform(0.4, 0.6)
    ry, rx = h * rng.uniform(0.16, 0.22), w * rng.uniform(0.13, 0.18)
    head = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    sh_top = cy + ry * 0.8
    sh_w = w * rng.uniform(0.3, 0.42)
    shoulders = (yy >= sh_top) & (((xx - cx) / sh_w) ** 2 + ((yy - h * 1.05) / (h * 1.05 - sh_top)) ** 2 <= 1.0)
    hard = (head | shoulders).astype(np.float64)
    alpha = ndimage.gaussian_filter(hard, sigma=rng.uniform(0.6, 1.2))

    strokes = np.zeros((h, w))
    for _ in range(int(rng.integers(8, 16))):
        theta = rng.uniform(-0.85 * np.pi, -0.15 * np.pi)
        start = np.array([cy + ry * np.sin(theta) * 0.9, cx + rx * np.cos(theta) * 0.9])
        length = rng.uniform(0.06, 0.15) * min(h, w)
        bend = rng.normal(0, 0.3)
        t = np.linspace(0, 1, int(length * 2))
        ang = theta + bend * t
        path = start[None, :] + length * t[:, None] * np.stack([np.sin(ang), np.cos(ang)], axis=1)
        r = np.clip(np.round(path[:, 0]).astype(int), 0, h - 1)
        c = np.clip(np.round(path[:, 1]).astype(int), 0, w - 1)
        strokes[r, c] = np.maximum(strokes[r, c], rng.uniform(0.4, 0.9) * (1 - t))
    strokes = ndimage.gaussian_filter(strokes, sigma=0.5) * 2.0
    alpha = np.clip(np.maximum(alpha, strokes), 0.0, 1.0)
    alpha[alpha < 0.02] = 0.0
    alpha[alpha > 0.98] = 1.0
    return alpha.astype(np.float32)


def synthesize_sample(fg_sprite, alpha_sprite, background, placement=(0, 0)):
    """Place an RGBA sprite on a background and composite.

    Outside the sprite the foreground is set equal to the background (alpha is
    zero there, so the choice does not affect the image).
    """
    fg_sprite = np.asarray(fg_sprite, np.float32)
    alpha_sprite = np.asarray(alpha_sprite, np.float32)
    background = np.asarray(background, np.float32)
    if alpha_sprite.min() < 0 or alpha_sprite.max() > 1:
        raise ValueError("alpha sprite values must lie in [0, 1]")
    sh, sw = alpha_sprite.shape
    H, W = background.shape[:2]
    top, left = (int(v) for v in placement)
    if top < 0 or left < 0 or top + sh > H or left + sw > W:
        raise PlacementError(f"sprite {sh}x{sw} at {placement} does not fit in {H}x{W}")
    alpha = np.zeros((H, W), np.float32)
    alpha[top:top + sh, left:left + sw] = alpha_sprite
    fg = background.copy()
    fg[top:top + sh, left:left + sw] = fg_sprite
    return CompositeSample(None, fg, background.copy(), alpha).recomposite()


def make_synthetic_sample(size, seed):
    rng = np.random.default_rng(seed)
    fg, bg = random_colors(rng, size, size)
    alpha = random_alpha(rng, size, size)
    return synthesize_sample(fg, alpha, bg, (0, 0))


def make_synthetic_samples(n, size, seed=0, workers=None):
    """``n`` independent synthetic portraits of ``size x size``; sample ``i`` depends only on ``(seed, i)``."""
    return parallel_map(lambda i: make_synthetic_sample(size, [seed, i]), range(n), workers)


# -- augmentation -------------------------------------------------------------

def hflip(sample):
    return CompositeSample(sample.image[:, ::-1].copy(), sample.foreground[:, ::-1].copy(),
                           sample.background[:, ::-1].copy(), sample.alpha[:, ::-1].copy())


def crop_resize(sample, box):
    """Crop ``box=(top, left, height, width)`` and resize back to the original size."""
    top, left, hh, ww = box
    size = sample.alpha.shape

    def cut(x):
        return resize(x[top:top + hh, left:left + ww], size)

    out = CompositeSample(None, cut(sample.foreground), cut(sample.background),
                          np.clip(cut(sample.alpha), 0, 1))
    return out.recomposite()


def affine(sample, matrix, offset=(0.0, 0.0)):
    """Warp with output->input ``matrix`` (2x2, row/col order) and ``offset``, bilinear, edge clamp."""
    matrix = np.asarray(matrix, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    if np.array_equal(matrix, np.eye(2)) and not offset.any():
        return sample

    def warp(x):
        if x.ndim == 2:
            return ndimage.affine_transform(x, matrix, offset, order=1, mode="nearest").astype(np.float32)
        return np.stack([warp(x[..., c]) for c in range(x.shape[-1])], axis=-1)

    out = CompositeSample(None, warp(sample.foreground), warp(sample.background),
                          np.clip(warp(sample.alpha), 0, 1))
    return out.recomposite()


def color_jitter(sample, hue=0.0, saturation=1.0, brightness=1.0):
    """HSV adjustment of foreground and background; the image is recomposited."""

    def adjust(rgb):
        hsv = rgb_to_hsv(np.clip(rgb, 0, 1))
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0, 1)
        hsv[..., 2] = np.clip(hsv[..., 2] * brightness, 0, 1)
        return hsv_to_rgb(hsv).astype(np.float32)

    out = CompositeSample(None, adjust(sample.foreground), adjust(sample.background), sample.alpha.copy())
    return out.recomposite()


def augment(sample, seed):
    """Random flip, crop, small affine warp and HSV jitter, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    h, w = sample.alpha.shape
    out = sample
    if rng.random() < 0.5:
        out = hflip(out)
    scale = rng.uniform(0.8, 1.0)
    hh, ww = int(round(h * scale)), int(round(w * scale))
    out = crop_resize(out, (int(rng.integers(0, h - hh + 1)), int(rng.integers(0, w - ww + 1)), hh, ww))
    angle = np.deg2rad(rng.uniform(-8, 8))
    zoom = rng.uniform(0.92, 1.08)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]) / zoom
    center = np.array([h / 2.0, w / 2.0])
    out = affine(out, rot, center - rot @ center)
    out = color_jitter(out, hue=rng.uniform(-0.04, 0.04), saturation=rng.uniform(0.8, 1.2),
                       brightness=rng.uniform(0.8, 1.2))
    return out
