"""Random inputs shared by the unit and acceptance suites."""

import numpy as np


def random_coords(rng, max_n=2000):
    """Unique grid coordinates drawn from a mix of layouts, many with distance ties."""
    n = int(rng.integers(1, max_n + 1))
    kind = int(rng.integers(0, 4))
    if kind == 0:  # uniform on a grid sized so collisions are moderate
        side = int(np.ceil(np.sqrt(n * 2))) + 1
        pts = rng.integers(0, side, size=(n, 2))
    elif kind == 1:  # gaussian clusters
        centers = rng.integers(0, 400, size=(int(rng.integers(1, 6)), 2))
        pts = centers[rng.integers(0, len(centers), n)] + np.round(rng.normal(0, 6, size=(n, 2))).astype(np.int64)
        pts = np.abs(pts)
    elif kind == 2:  # thin bands, like uncertain cells along an edge
        t = rng.integers(0, 300, size=n)
        pts = np.stack([t, (t // 3 + rng.integers(0, 3, size=n))], axis=1)
    else:  # dense lattice blocks: maximal ties
        side = int(np.ceil(np.sqrt(n)))
        pts = np.stack(np.divmod(np.arange(side * side), side), axis=1)[:n] * int(rng.integers(1, 3))
    return np.unique(pts.astype(np.int64), axis=0)[rng.permutation(len(np.unique(pts, axis=0)))]


def random_matte_pair(rng, size=16):
    """Prediction and ground truth with solid, transparent and fractional areas."""
    gt = np.clip(rng.random((size, size)) * 1.6 - 0.3, 0, 1)
    pred = np.clip(gt + rng.normal(0, 0.25, size=gt.shape), 0, 1)
    pred[rng.random(gt.shape) < 0.1] = rng.random()
    return pred, gt
