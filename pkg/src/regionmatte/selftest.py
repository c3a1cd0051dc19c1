"""Quick oracle checks runnable from the command line (``regionmatte selftest``)."""

import math

import numpy as np

from . import ops, reference
from .gradcheck import grad_check
from .losses import focal_weights, loss_coarse_alpha
from .metrics import metric_conn, metric_grad, metric_sad
from .regions import bias_index, crop_regions, knn_bruteforce, knn_kdtree, paste_regions, table_size
from .tensor import Tensor, precision


def _grad_suite(rng):
    with precision(np.float64):
        r = rng.normal(size=(3, 5))
        checks = [
            ("matmul", lambda a, b: ops.sum(ops.mul(ops.matmul(a, b), r)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))]),
            ("softmax", lambda a: ops.sum(ops.mul(ops.softmax(a), r)), [rng.normal(size=(3, 5))]),
            ("layer_norm", lambda a: ops.sum(ops.mul(ops.layer_norm(a), r)), [rng.normal(size=(3, 5))]),
            ("conv2d", lambda x, w: ops.sum(ops.conv2d(x, w, stride=2, padding=1)),
             [rng.normal(size=(1, 6, 6, 2)), rng.normal(size=(3, 3, 2, 3))]),
        ]
        return [grad_check(f, inputs, op_name=name) for name, f, inputs in checks]


def _knn_suite(rng):
    ok = True
    for _ in range(20):
        n = int(rng.integers(1, 200))
        coords = rng.integers(0, 30, size=(n, 2))
        coords = np.unique(coords, axis=0)
        ok &= np.array_equal(knn_bruteforce(coords, 8), knn_kdtree(coords, 8))
        ok &= knn_bruteforce(coords, 8).tolist() == reference.knn(coords.tolist(), 8)
    return ok


def _metric_suite(rng):
    worst = 0.0
    for _ in range(3):
        pred = rng.random((12, 12))
        gt = np.clip(rng.random((12, 12)) * 1.4 - 0.2, 0, 1)
        for fast, slow in ((metric_sad, reference.sad), (metric_grad, reference.grad), (metric_conn, reference.conn)):
            a, b = fast(pred, gt), slow(pred.tolist(), gt.tolist())
            worst = max(worst, abs(a - b) / max(abs(b), 1e-12))
    return worst


def _crop_paste(rng):
    base = rng.random((32, 40)).astype(np.float32)
    rgba = np.concatenate([rng.random((32, 40, 3)), base[..., None]], axis=-1).astype(np.float32)
    coords = np.array([[0, 0], [3, 4], [1, 2]])
    crops = crop_regions(rgba, coords).data
    same = paste_regions(base, coords, crops[..., 3]).data
    return np.array_equal(same, base)


def run_selftest(verbose=False):
    rng = np.random.default_rng(1234)
    results = []
    for report in _grad_suite(rng):
        results.append((f"grad_check {report.op_name}", report.passed, f"{report.max_rel_error:.2e}"))
    with precision(np.float64):
        bce = float(loss_coarse_alpha(Tensor(np.full(16, 0.5)), np.r_[np.zeros(8), np.ones(8)]).data)
    results.append(("bce(0.5) == ln 2", abs(bce - math.log(2)) < 1e-6, f"{bce:.9f}"))
    w = focal_weights([100, 400])
    results.append(("focal weights (100, 400)", np.allclose(w, [2 / 3, 1 / 3], atol=1e-9, rtol=0), str(np.round(w, 6))))
    slots = [bias_index((0, 0), d, 3) for d in ((0, 0), (-1, -2), (0, 4))]
    results.append(("bias slots s=3", table_size(3) == 26 and slots == [12, 5, 25], str(slots)))
    results.append(("kd-tree == brute force == loop oracle", bool(_knn_suite(rng)), ""))
    worst = _metric_suite(rng)
    results.append(("metrics vs loop oracle", worst < 1e-6, f"{worst:.1e}"))
    results.append(("crop/paste round trip", bool(_crop_paste(rng)), ""))
    ok = all(passed for _, passed, _ in results)
    if verbose:
        for name, passed, detail in results:
            print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
        print("selftest", "passed" if ok else "FAILED")
    return ok
