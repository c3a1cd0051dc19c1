"""Matting error metrics: SAD, SAD-T, Grad and Conn.

All functions return raw sums over the evaluated pixels, with alpha in
[0, 1]. Reports divide by 1000 (:data:`REPORT_SCALE`), the usual convention
of matting benchmarks. Grad uses first-derivative-of-Gaussian filters with
sigma 1.4 and sums squared differences of gradient magnitudes; Conn follows
the perceptual connectivity error with threshold step 0.1.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeError

REPORT_SCALE = 1e-3
METRIC_NAMES = ("sad", "sad_t", "grad", "conn")


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"metric inputs must be equal 2-D shapes, got {pred.shape} and {gt.shape}")
    return pred, gt


def _region(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {shape}")
    return mask


def metric_sad(pred, gt, mask=None):
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt)[_region(mask, gt.shape)].sum())


def metric_sad_t(pred, gt, uncertain_mask):
    if uncertain_mask is None:
        raise ValueError("SAD-T needs the uncertain (transition) mask")
    return metric_sad(pred, gt, uncertain_mask)


def gaussian_derivative_kernel(sigma=1.4, epsilon=1e-2):
    """x-derivative kernel, normalized to unit L2 norm; transpose for y."""
    half = int(np.ceil(sigma * np.sqrt(-2.0 * np.log(np.sqrt(2.0 * np.pi) * sigma * epsilon))))
    u = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-u ** 2 / (2 * sigma ** 2)) / (sigma * np.sqrt(2 * np.pi))
    dg = -u * g / sigma ** 2
    kernel = np.outer(g, dg)
    return kernel / np.sqrt((kernel ** 2).sum())


def gradient_magnitude(x, sigma=1.4):
    hx = gaussian_derivative_kernel(sigma)
    gx = ndimage.convolve(x, hx, mode="nearest")
    gy = ndimage.convolve(x, hx.T, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def metric_grad(pred, gt, mask=None, sigma=1.4):
    pred, gt = _pair(pred, gt)
    diff = (gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)) ** 2
    return float(diff[_region(mask, gt.shape)].sum())


def _largest_component(binary):
    labels, count = ndimage.label(binary)
    if count == 0:
        return np.zeros_like(binary, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def metric_conn(pred, gt, mask=None, step=0.1):
    pred, gt = _pair(pred, gt)
    n = int(round(1.0 / step))
    level = np.full(gt.shape, -1.0)
    for i in range(1, n + 1):
        omega = _largest_component((pred >= i / n) & (gt >= i / n))
        fresh = (level == -1) & ~omega
        level[fresh] = (i - 1) / n
    level[level == -1] = 1.0
    dp = pred - level
    dg = gt - level
    phi_p = 1 - dp * (dp >= 0.15)
    phi_g = 1 - dg * (dg >= 0.15)
    return float(np.abs(phi_p - phi_g)[_region(mask, gt.shape)].sum())


def evaluate_matte(pred, gt, uncertain_mask):
    """Raw values of all four metrics for one matte."""
    return {
        "sad": metric_sad(pred, gt),
        "sad_t": metric_sad_t(pred, gt, uncertain_mask),
        "grad": metric_grad(pred, gt),
        "conn": metric_conn(pred, gt),
    }


@dataclass
class MetricReport:
    """Per-image metrics and their mean, scaled by :data:`REPORT_SCALE`."""

    images: list = field(default_factory=list)   # dicts: name + raw metric values

    def add(self, name, raw):
        self.images.append({"name": name, **{k: float(raw[k]) for k in METRIC_NAMES}})

    def mean(self, scaled=True):
        if not self.images:
            return {k: 0.0 for k in METRIC_NAMES}
        factor = REPORT_SCALE if scaled else 1.0
        return {k: float(np.mean([img[k] for img in self.images])) * factor for k in METRIC_NAMES}

    def to_json(self):
        rows = [{"name": img["name"], **{k: img[k] * REPORT_SCALE for k in METRIC_NAMES},
                 "raw": {k: img[k] for k in METRIC_NAMES}} for img in self.images]
        return {"images": rows, "mean": self.mean(), "mean_raw": self.mean(scaled=False)}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2)

    def to_text(self):
        width = max([4] + [len(img["name"]) for img in self.images])
        header = f"{'name':<{width}}" + "".join(f"{k:>12}" for k in METRIC_NAMES)
        lines = [header]
        for img in self.images:
            lines.append(f"{img['name']:<{width}}" + "".join(f"{img[k] * REPORT_SCALE:>12.4f}" for k in METRIC_NAMES))
        mean = self.mean()
        lines.append(f"{'mean':<{width}}" + "".join(f"{mean[k]:>12.4f}" for k in METRIC_NAMES))
        return "\n".join(lines)
