"""Pseudo-trimap targets and the training loss suite."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import ops
from .errors import NonFiniteLossError, ShapeError
from .regions import BG, FG, UNCERTAIN
from .tensor import Tensor, as_tensor, no_grad

BCE_CLAMP = 1e-7
FG_THRESHOLD = 0.999
BG_THRESHOLD = 0.001
COARSE_LEVELS = (8, 16, 32)


@dataclass
class LossConfig:
    epsilon: float = 1e-6
    pyramid_levels: int = 5
    dilate_radius: int = 10
    erode_radius: int = 10

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.dilate_radius < 0 or self.erode_radius < 0:
            raise ValueError("morphology radii must be non-negative")
        return self


@dataclass
class TrimapTarget:
    classes: np.ndarray   # (..., h, w, 3) one-hot over (fg, bg, uncertain)

    @property
    def labels(self):
        return self.classes.argmax(axis=-1)

    @property
    def uncertain(self):
        return self.classes[..., UNCERTAIN] > 0.5

    @classmethod
    def from_labels(cls, labels):
        return cls(np.eye(3, dtype=np.float32)[labels])


def _disk(radius):
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def _erode(mask, radius):
    if radius <= 0:
        return mask
    return ndimage.binary_erosion(mask, structure=_disk(radius), border_value=1)


def pseudo_trimap_labels(alpha, cfg):
    """Full-resolution labels: eroded sure-fg / sure-bg, everything else uncertain.

    Soft pixels (0 < alpha < 1) are always uncertain.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    fg = _erode(alpha >= FG_THRESHOLD, cfg.erode_radius)
    bg = _erode(alpha <= BG_THRESHOLD, cfg.dilate_radius)
    soft = (alpha > 0) & (alpha < 1)
    labels = np.full(alpha.shape, UNCERTAIN, dtype=np.int64)
    labels[fg & ~soft] = FG
    labels[bg & ~soft] = BG
    return labels


def downsample_labels(labels, factor):
    """A cell is uncertain if it holds an uncertain pixel or straddles fg and bg."""
    h, w = labels.shape
    if h % factor or w % factor:
        raise ShapeError(f"labels {h}x{w} not divisible by {factor}")
    blocks = labels.reshape(h // factor, factor, w // factor, factor)
    has = [(blocks == c).any(axis=(1, 3)) for c in (FG, BG, UNCERTAIN)]
    out = np.where(has[FG], FG, BG)
    out[has[UNCERTAIN] | (has[FG] & has[BG])] = UNCERTAIN
    return out


def make_pseudo_trimap(alpha, cfg, levels=COARSE_LEVELS):
    """Targets at each requested level (1 = full resolution) from a GT alpha (H, W) or (N, H, W)."""
    alpha = np.asarray(alpha)
    batched = alpha.ndim == 3
    stack = alpha if batched else alpha[None]
    full = [pseudo_trimap_labels(a, cfg) for a in stack]
    targets = {}
    for level in levels:
        labs = np.stack([lab if level == 1 else downsample_labels(lab, level) for lab in full])
        targets[level] = TrimapTarget.from_labels(labs if batched else labs[0])
    return targets


def downsample_alpha(alpha, factor):
    """Area average over ``factor x factor`` blocks (last two axes)."""
    alpha = np.asarray(alpha, dtype=np.float32)
    *lead, h, w = alpha.shape
    return alpha.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def _check_same(pred, target, name):
    if tuple(pred.shape) != tuple(np.shape(target)):
        raise ShapeError(f"{name}: prediction {tuple(pred.shape)} vs target {tuple(np.shape(target))}")


def loss_coarse_alpha(pred, target):
    """Mean binary cross entropy with the prediction clamped to [1e-7, 1 - 1e-7]."""
    pred = as_tensor(pred)
    _check_same(pred, target, "loss_coarse_alpha")
    t = np.asarray(target, dtype=pred.dtype)
    p = ops.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = ops.add(ops.mul(t, ops.log(p)), ops.mul(1.0 - t, ops.log(ops.sub(1.0, p))))
    return ops.neg(ops.mean(ll))


def focal_weights(counts):
    """``w_i = n_i^-0.5 / sum_j n_j^-0.5`` over classes present; absent classes get 0."""
    counts = np.asarray(counts, dtype=np.float64)
    inv = np.zeros_like(counts)
    present = counts > 0
    inv[present] = counts[present] ** -0.5
    total = inv.sum()
    return inv / total if total > 0 else inv


def loss_trimap_focal(pred_probs, target):
    """Class-weighted focal loss (gamma 2) averaged over pixels."""
    pred_probs = as_tensor(pred_probs)
    tau = target.classes if isinstance(target, TrimapTarget) else np.asarray(target)
    _check_same(pred_probs, tau, "loss_trimap_focal")
    tau = tau.astype(pred_probs.dtype)
    w = focal_weights(tau.reshape(-1, 3).sum(axis=0)).astype(pred_probs.dtype)
    p = ops.add(ops.mul(tau, pred_probs), ops.mul(1.0 - tau, ops.sub(1.0, pred_probs)))
    modulator = ops.square(ops.sub(1.0, p))
    logp = ops.log(ops.clamp(pred_probs, BCE_CLAMP, None))
    per_class = ops.mul(ops.mul(modulator, logp), tau * w)
    return ops.neg(ops.mean(ops.sum(per_class, axis=-1)))


def charbonnier(diff, epsilon):
    return ops.sqrt(ops.add(ops.square(diff), float(epsilon) ** 2))


def loss_alpha(pred, gt, epsilon=1e-6):
    pred = as_tensor(pred)
    _check_same(pred, gt, "loss_alpha")
    return ops.mean(charbonnier(ops.sub(pred, np.asarray(gt, pred.dtype)), epsilon))


_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur(x):
    kernel = np.outer(_BINOMIAL, _BINOMIAL).astype(x.dtype)[:, :, None, None]
    return ops.conv2d(x, Tensor(kernel, dtype=x.dtype), padding=2)


def laplacian_pyramid(x, levels=5):
    """Band-pass levels at 1, 1/2, ... for (N, H, W) or (H, W) maps.

    ``band = level - upsample(downsample(level))``; downsampling is a zero-padded
    5-tap binomial blur followed by taking every second pixel, upsampling is
    half-pixel bilinear.
    """
    x = as_tensor(x)
    if x.ndim == 2:
        x = ops.reshape(x, (1,) + x.shape)
    n, h, w = x.shape
    if h % 2 ** levels or w % 2 ** levels:
        raise ShapeError(f"{h}x{w} not divisible by {2 ** levels} for a {levels}-level pyramid")
    g = ops.reshape(x, (n, h, w, 1))
    bands = []
    for _ in range(levels):
        down = _blur(g)[:, ::2, ::2, :]
        bands.append(ops.sub(g, ops.bilinear_upsample(down, g.shape[1:3])))
        g = down
    return bands


def loss_laplacian(pred, gt, epsilon=1e-6, levels=5):
    pred = as_tensor(pred)
    _check_same(pred, gt, "loss_laplacian")
    with no_grad():
        target = laplacian_pyramid(Tensor(np.asarray(gt, pred.dtype), dtype=pred.dtype), levels)
    total = None
    for band, ref in zip(laplacian_pyramid(pred, levels), target):
        term = ops.mean(charbonnier(ops.sub(band, ref.data), epsilon))
        total = term if total is None else ops.add(total, term)
    return total


def composite(alpha, fg, bg):
    """``alpha * F + (1 - alpha) * B`` with alpha (..., H, W) and colors (..., H, W, 3)."""
    alpha = as_tensor(alpha)
    a = ops.reshape(alpha, alpha.shape + (1,))
    return ops.add(ops.mul(a, fg), ops.mul(ops.sub(1.0, a), bg))


def loss_composition(pred_alpha, fg, bg, gt_alpha, epsilon=1e-6):
    pred_alpha = as_tensor(pred_alpha)
    _check_same(pred_alpha, gt_alpha, "loss_composition")
    dtype = pred_alpha.dtype
    fg = np.asarray(fg, dtype)
    bg = np.asarray(bg, dtype)
    gt_alpha = np.asarray(gt_alpha, dtype)
    target = gt_alpha[..., None] * fg + (1 - gt_alpha[..., None]) * bg
    return ops.mean(charbonnier(ops.sub(target, composite(pred_alpha, fg, bg)), epsilon))


def total_loss(coarse, coarse_targets, pred_alpha, gt_alpha, cfg, fg=None, bg=None):
    """Unweighted sum of every loss term.

    ``coarse_targets`` maps level -> (downsampled alpha, TrimapTarget). The
    composition term is skipped when no foreground/background is known.
    Returns ``(loss, components)`` with components as python floats.
    """
    terms = {}
    levels = coarse.levels()
    bce = focal = None
    for level, (alpha_hat, trimap_hat) in levels.items():
        alpha_t, trimap_t = coarse_targets[level]
        b = loss_coarse_alpha(alpha_hat, alpha_t)
        f = loss_trimap_focal(trimap_hat, trimap_t)
        terms[f"coarse_alpha@{level}"] = b
        terms[f"trimap@{level}"] = f
        bce = b if bce is None else ops.add(bce, b)
        focal = f if focal is None else ops.add(focal, f)
    terms["alpha"] = loss_alpha(pred_alpha, gt_alpha, cfg.epsilon)
    terms["laplacian"] = loss_laplacian(pred_alpha, gt_alpha, cfg.epsilon, cfg.pyramid_levels)
    if fg is not None and bg is not None:
        terms["composition"] = loss_composition(pred_alpha, fg, bg, gt_alpha, cfg.epsilon)
    components = {}
    for name, t in terms.items():
        value = float(t.data)
        if not math.isfinite(value):
            raise NonFiniteLossError(name, value)
        components[name] = value
    total = ops.add(ops.add(bce, focal), terms["alpha"])
    total = ops.add(total, terms["laplacian"])
    if "composition" in terms:
        total = ops.add(total, terms["composition"])
    components["total"] = float(total.data)
    return total, components
