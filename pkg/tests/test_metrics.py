import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regionmatte import reference
from regionmatte.errors import ShapeError
from regionmatte.metrics import (METRIC_NAMES, MetricReport, evaluate_matte, gaussian_derivative_kernel,
                                 metric_conn, metric_grad, metric_sad, metric_sad_t)
from samplers import random_matte_pair


def test_identical_inputs_score_zero(rng):
    gt = rng.random((16, 16))
    values = evaluate_matte(gt, gt, gt > 0.5)
    assert values == {"sad": 0.0, "sad_t": 0.0, "grad": 0.0, "conn": 0.0}


def test_inverted_binary_sad():
    gt = np.zeros((10, 10))
    gt.flat[:40] = 1.0
    assert metric_sad(1 - gt, gt) == 100.0


def test_sad_t_restricts_to_mask(rng):
    pred, gt = rng.random((8, 8)), rng.random((8, 8))
    mask = np.zeros((8, 8), bool)
    mask[2:4] = True
    assert metric_sad_t(pred, gt, mask) == pytest.approx(np.abs(pred - gt)[2:4].sum())
    with pytest.raises(ValueError):
        metric_sad_t(pred, gt, None)


def test_shape_errors():
    with pytest.raises(ShapeError):
        metric_sad(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        metric_grad(np.zeros((4, 4)), np.zeros((4, 4)), mask=np.ones((3, 3)))


def test_gradient_kernel_is_normalized_odd():
    k = gaussian_derivative_kernel(1.4)
    assert k.shape[0] == k.shape[1] and k.shape[0] % 2 == 1
    assert (k ** 2).sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, -k[:, ::-1], atol=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_metrics_match_reference(seed):
    rng = np.random.default_rng([5, seed])
    pred, gt = random_matte_pair(rng)
    mask = rng.random(gt.shape) < 0.5
    pairs = [
        (metric_sad(pred, gt), reference.sad(pred.tolist(), gt.tolist())),
        (metric_sad_t(pred, gt, mask), reference.sad(pred.tolist(), gt.tolist(), mask.tolist())),
        (metric_grad(pred, gt), reference.grad(pred.tolist(), gt.tolist())),
        (metric_conn(pred, gt), reference.conn(pred.tolist(), gt.tolist())),
    ]
    for fast, slow in pairs:
        assert fast == pytest.approx(slow, rel=1e-6, abs=1e-12)


@given(st.integers(0, 2**16))
def test_metrics_nonnegative_and_zero_on_self(seed):
    pred, gt = random_matte_pair(np.random.default_rng(seed), size=12)
    for fn in (metric_sad, metric_grad, metric_conn):
        assert fn(pred, gt) >= 0
        assert fn(gt, gt) == 0


def test_report_json_and_text():
    report = MetricReport()
    report.add("a", {"sad": 1000.0, "sad_t": 500.0, "grad": 2000.0, "conn": 0.0})
    report.add("b", {"sad": 3000.0, "sad_t": 1500.0, "grad": 0.0, "conn": 4000.0})
    payload = json.loads(report.dumps())
    assert [img["name"] for img in payload["images"]] == ["a", "b"]
    assert payload["mean"] == {"sad": 2.0, "sad_t": 1.0, "grad": 1.0, "conn": 2.0}
    assert payload["images"][0]["raw"]["sad"] == 1000.0
    text = report.to_text()
    assert "mean" in text and all(name in text for name in METRIC_NAMES)


def test_empty_report_mean_is_zero():
    assert MetricReport().mean() == {k: 0.0 for k in METRIC_NAMES}
