"""Uncertain-region selection, exact KNN, relative-position slots, crop and paste.

Regions live on the 1/8 grid: cell ``(row, col)`` is the full-resolution
block ``[8*row, 8*row + 8) x [8*col, 8*col + 8)``. Distances between regions
are Euclidean in grid units. Neighbor lists are ordered by the key
``(squared distance, row, col)`` so the brute-force and KD-tree searches
agree exactly, ties included.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from . import ops
from .errors import RegionError
from .tensor import Tensor, as_tensor

REGION = 8
FG, BG, UNCERTAIN = 0, 1, 2


class RegionCoord(NamedTuple):
    row: int
    col: int


@dataclass
class RegionSet:
    coords: np.ndarray                  # (n, 2) int64, rows of (row, col)
    crops: object = None                # Tensor (n, 8, 8, 4)
    knn: np.ndarray = None              # (n, k_eff) indices into coords
    slots: np.ndarray = None            # (n, k_eff + 1) bias-table slots, column 0 = self
    source_dims: tuple = (0, 0)
    image_index: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.coords)

    def to_json(self, s=None):
        out = {
            "source_dims": [int(d) for d in self.source_dims],
            "coords": self.coords.tolist(),
            "knn": [] if self.knn is None else self.knn.tolist(),
        }
        if self.slots is not None:
            out["bias_slots"] = self.slots.tolist()
        if s is not None:
            out["search_range"] = int(s)
        return out

    def dump(self, path, s=None):
        with open(path, "w") as fh:
            json.dump(self.to_json(s), fh, indent=1)


def _as_coords(coords):
    arr = np.asarray(coords, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return arr.reshape(-1, 2)


def select_uncertain(trimap, max_regions=None):
    """Grid cells whose most probable class is "uncertain", in row-major order.

    Ties between uncertain and another class go to uncertain. When
    ``max_regions`` is set, the cells with the highest uncertain probability
    are kept (ties by row-major position).
    """
    probs = trimap.data if isinstance(trimap, Tensor) else np.asarray(trimap)
    pu = probs[..., UNCERTAIN]
    chosen = pu >= np.maximum(probs[..., FG], probs[..., BG])
    rows, cols = np.nonzero(chosen)
    coords = np.stack([rows, cols], axis=1).astype(np.int64)
    if max_regions is not None and len(coords) > max_regions:
        order = np.argsort(-pu[rows, cols], kind="stable")[:max_regions]
        coords = coords[np.sort(order)]
    return [RegionCoord(int(r), int(c)) for r, c in coords]


def _lex_keys(coords):
    """Pack (row, col) into one int64 so that key order == (row, col) order."""
    span = int(coords[:, 1].max()) + 1 if len(coords) else 1
    return coords[:, 0] * span + coords[:, 1], span


def knn_bruteforce(coords, k, chunk=256):
    """All-pairs exact KNN; returns an (n, min(k, n-1)) index array."""
    coords = _as_coords(coords)
    n = len(coords)
    k = max(0, min(int(k), n - 1))
    result = np.zeros((n, k), dtype=np.int64)
    if k == 0:
        return result
    lex, _ = _lex_keys(coords)
    lex_span = int(lex.max()) + 1
    max_d2 = int(np.ptp(coords[:, 0])) ** 2 + int(np.ptp(coords[:, 1])) ** 2
    if (max_d2 + 1) * lex_span >= 2 ** 62:
        raise OverflowError("grid too large for packed distance keys")
    r = coords[:, 0]
    c = coords[:, 1]
    sentinel = np.iinfo(np.int64).max
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dr = r[start:stop, None] - r[None, :]
        dc = c[start:stop, None] - c[None, :]
        keys = (dr * dr + dc * dc) * lex_span + lex[None, :]
        keys[np.arange(stop - start), np.arange(start, stop)] = sentinel
        part = np.argpartition(keys, k - 1, axis=1)[:, :k]
        order = np.argsort(np.take_along_axis(keys, part, axis=1), axis=1)
        result[start:stop] = np.take_along_axis(part, order, axis=1)
    return result


@numba.njit(cache=True)
def _build_tree(points):
    """Median-split KD-tree stored implicitly in a permutation of point indices."""
    n = points.shape[0]
    perm = np.arange(n)
    stack = np.empty((64 + 2 * n, 3), dtype=np.int64)
    top = 0
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, n, 0
    top = 1
    while top > 0:
        top -= 1
        lo, hi, depth = stack[top, 0], stack[top, 1], stack[top, 2]
        if hi - lo <= 1:
            continue
        axis = depth % 2
        seg = perm[lo:hi].copy()
        vals = points[seg, axis] * 4194304 + points[seg, 1 - axis]
        order = np.argsort(vals)
        perm[lo:hi] = seg[order]
        mid = (lo + hi) // 2
        stack[top, 0], stack[top, 1], stack[top, 2] = lo, mid, depth + 1
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2] = mid + 1, hi, depth + 1
        top += 1
    return perm


@numba.njit(cache=True)
def _less(d1, r1, c1, d2, r2, c2):
    if d1 != d2:
        return d1 < d2
    if r1 != r2:
        return r1 < r2
    return c1 < c2


@numba.njit(cache=True)
def _query_all(points, perm, k):
    n = points.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    best_d = np.empty(k, dtype=np.int64)
    best_i = np.empty(k, dtype=np.int64)
    stack = np.empty((128, 4), dtype=np.int64)
    for q in range(n):
        qr = points[q, 0]
        qc = points[q, 1]
        count = 0
        top = 0
        stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, n, 0, 0
        top = 1
        while top > 0:
            top -= 1
            lo, hi, depth, plane = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
            if hi <= lo:
                continue
            if count == k and plane > best_d[k - 1]:
                continue
            mid = (lo + hi) // 2
            node = perm[mid]
            if node != q:
                dr = points[node, 0] - qr
                dc = points[node, 1] - qc
                d = dr * dr + dc * dc
                nr = points[node, 0]
                nc = points[node, 1]
                if count < k or _less(d, nr, nc, best_d[k - 1], points[best_i[k - 1], 0], points[best_i[k - 1], 1]):
                    pos = count if count < k else k - 1
                    while pos > 0 and _less(d, nr, nc, best_d[pos - 1], points[best_i[pos - 1], 0],
                                            points[best_i[pos - 1], 1]):
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                        pos -= 1
                    best_d[pos] = d
                    best_i[pos] = node
                    if count < k:
                        count += 1
            axis = depth % 2
            diff = (qr if axis == 0 else qc) - points[node, axis]
            gap = diff * diff
            if diff < 0:
                near_lo, near_hi, far_lo, far_hi = lo, mid, mid + 1, hi
            else:
                near_lo, near_hi, far_lo, far_hi = mid + 1, hi, lo, mid
            # far side first so the near side is popped next
            stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = far_lo, far_hi, depth + 1, gap
            top += 1
            stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = near_lo, near_hi, depth + 1, 0
            top += 1
        for j in range(k):
            out[q, j] = best_i[j]
    return out


class KDTree:
    """Static 2-D KD-tree over integer grid coordinates, median split on alternating axes."""

    def __init__(self, coords):
        self.points = np.ascontiguousarray(_as_coords(coords))
        if len(self.points) and (self.points.min() < 0 or self.points.max() >= 4194304):
            raise RegionError("grid coordinates must lie in [0, 2**22)")
        self.perm = _build_tree(self.points) if len(self.points) else np.zeros(0, np.int64)

    def knn_all(self, k):
        n = len(self.points)
        k = max(0, min(int(k), n - 1))
        if k == 0:
            return np.zeros((n, 0), dtype=np.int64)
        return _query_all(self.points, self.perm, k)


def knn_kdtree(coords, k):
    """Same contract as :func:`knn_bruteforce`, answered with a KD-tree."""
    return KDTree(coords).knn_all(k)


def table_size(s):
    return (2 * s - 1) ** 2 + 1


def bias_index(center, neighbor, s):
    """Bias-table slot of ``neighbor`` relative to ``center``.

    Offsets with ``|dr|, |dc| <= s - 1`` map row-major into the first
    ``(2s-1)^2`` slots; anything else maps to the last slot.
    """
    dr = int(neighbor[0]) - int(center[0])
    dc = int(neighbor[1]) - int(center[1])
    w = 2 * s - 1
    if abs(dr) > s - 1 or abs(dc) > s - 1:
        return w * w
    return (dr + s - 1) * w + (dc + s - 1)


def bias_slots(coords, knn, s):
    """Vectorized :func:`bias_index` for ``[self, neighbors...]`` of every region."""
    coords = _as_coords(coords)
    idx = np.concatenate([np.arange(len(coords))[:, None], knn], axis=1)
    delta = coords[idx] - coords[:, None, :]
    w = 2 * s - 1
    inside = (np.abs(delta) <= s - 1).all(axis=-1)
    slots = (delta[..., 0] + s - 1) * w + (delta[..., 1] + s - 1)
    return np.where(inside, slots, w * w).astype(np.int64)


def _block_view(x, hw_axis):
    """(..., H, W, C) -> (..., H/8 * W/8, 8, 8, C) via differentiable reshapes."""
    shape = x.shape
    h, w = shape[hw_axis], shape[hw_axis + 1]
    if h % REGION or w % REGION:
        raise RegionError(f"image {h}x{w} is not divisible by {REGION}")
    lead = shape[:hw_axis]
    tail = shape[hw_axis + 2:]
    k = len(lead)
    x = ops.reshape(x, lead + (h // REGION, REGION, w // REGION, REGION) + tail)
    perm = tuple(range(k)) + (k, k + 2, k + 1, k + 3) + tuple(range(k + 4, k + 4 + len(tail)))
    x = ops.transpose(x, perm)
    return ops.reshape(x, lead + ((h // REGION) * (w // REGION), REGION, REGION) + tail)


def _flat_index(coords, grid_h, grid_w):
    coords = _as_coords(coords)
    if len(coords) and (coords.min() < 0 or (coords[:, 0] >= grid_h).any() or (coords[:, 1] >= grid_w).any()):
        raise RegionError(f"region coordinate outside the {grid_h}x{grid_w} grid")
    return coords[:, 0] * grid_w + coords[:, 1]


def crop_regions(rgba, coords):
    """Cut the 8x8 blocks at ``coords`` out of an (H, W, C) map -> (n, 8, 8, C)."""
    rgba = as_tensor(rgba)
    h, w = rgba.shape[0], rgba.shape[1]
    flat = _flat_index(coords, h // REGION, w // REGION)
    blocks = _block_view(rgba, 0)
    return ops.gather(blocks, flat, axis=0)


def paste_regions(base_alpha, coords, refined):
    """Replace the 8x8 blocks at ``coords`` of an (H, W) map with ``refined`` (n, 8, 8)."""
    base_alpha = as_tensor(base_alpha)
    h, w = base_alpha.shape
    gh, gw = h // REGION, w // REGION
    flat = _flat_index(coords, gh, gw)
    if len(np.unique(flat)) != len(flat):
        raise RegionError("duplicate region coordinates in paste")
    if len(flat) == 0:
        return base_alpha
    refined = as_tensor(refined)
    if refined.shape != (len(flat), REGION, REGION):
        raise RegionError(f"refined crops have shape {refined.shape}, expected ({len(flat)}, 8, 8)")
    selected = np.zeros(gh * gw, dtype=bool)
    selected[flat] = True
    slot = np.zeros(gh * gw, dtype=np.int64)
    slot[flat] = np.arange(len(flat))
    # spread refined crops over the full block grid, then select per block
    spread = ops.gather(refined, slot, axis=0)
    blocks = _block_view(ops.reshape(base_alpha, (h, w, 1)), 0)
    spread = ops.reshape(spread, (gh * gw, REGION, REGION, 1))
    mixed = ops.where(selected[:, None, None, None], spread, blocks)
    mixed = ops.reshape(mixed, (gh, gw, REGION, REGION))
    mixed = ops.transpose(mixed, (0, 2, 1, 3))
    return ops.reshape(mixed, (h, w))


def build_region_set(rgba, coords, k, s, search="kdtree"):
    """Crop regions and attach KNN lists and bias slots."""
    coords = _as_coords(coords)
    h, w = rgba.shape[0], rgba.shape[1]
    knn_fn = knn_kdtree if search == "kdtree" else knn_bruteforce
    knn = knn_fn(coords, k)
    crops = crop_regions(rgba, coords) if len(coords) else None
    return RegionSet(coords=coords, crops=crops, knn=knn, slots=bias_slots(coords, knn, s),
                     source_dims=(h, w))
