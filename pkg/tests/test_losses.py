import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regionmatte import ops, reference
from regionmatte.errors import NonFiniteLossError, ShapeError
from regionmatte.losses import (LossConfig, TrimapTarget, downsample_alpha, focal_weights, laplacian_pyramid,
                                loss_alpha, loss_coarse_alpha, loss_composition, loss_laplacian,
                                loss_trimap_focal, make_pseudo_trimap, pseudo_trimap_labels, total_loss)
from regionmatte.lowres import CoarseOutput
from regionmatte.tensor import Tensor, precision

EPS = 1e-6


# -- coarse alpha --------------------------------------------------------------

@pytest.mark.parametrize("value", [0.0, 1.0])
def test_bce_floor_for_exact_binary_prediction(value):
    with precision(np.float64):
        loss = float(loss_coarse_alpha(np.full((4, 4), value), np.full((4, 4), value)).data)
    assert 0 <= loss <= 1.2e-7


def test_bce_half_is_ln2():
    with precision(np.float64):
        target = (np.arange(16).reshape(4, 4) % 2).astype(float)
        loss = float(loss_coarse_alpha(np.full((4, 4), 0.5), target).data)
    assert abs(loss - math.log(2)) < 1e-6


def test_bce_matches_loop_oracle(rng):
    pred, target = rng.random((4, 4)), rng.random((4, 4))
    with precision(np.float64):
        loss = float(loss_coarse_alpha(pred, target).data)
    assert loss == pytest.approx(reference.bce(pred.tolist(), target.tolist()), rel=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_coarse_alpha(np.zeros((4, 4)), np.zeros((4, 5)))


# -- focal ---------------------------------------------------------------------

def test_focal_weights_symmetric_and_two_class():
    np.testing.assert_allclose(focal_weights([1, 1, 1]), [1 / 3] * 3, rtol=0, atol=1e-12)
    np.testing.assert_allclose(focal_weights([100, 400, 0]), [2 / 3, 1 / 3, 0], rtol=0, atol=1e-9)
    # hand oracle: 100^-0.5 = 0.1, 400^-0.5 = 0.05
    assert focal_weights([100, 400])[0] == pytest.approx(0.1 / 0.15, abs=1e-12)


@given(st.lists(st.integers(0, 10_000), min_size=3, max_size=3).filter(lambda c: sum(c) > 0))
def test_focal_weights_properties(counts):
    w = focal_weights(counts)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    for i in range(3):
        for j in range(3):
            if counts[i] > 0 and counts[j] > 0 and counts[i] < counts[j]:
                assert w[i] > w[j]
        if counts[i] == 0:
            assert w[i] == 0


def test_focal_perfect_prediction():
    labels = np.array([[0, 1, 2], [2, 2, 1]])
    target = TrimapTarget.from_labels(labels)
    with precision(np.float64):
        loss = float(loss_trimap_focal(np.eye(3)[labels], target).data)
    assert 0 <= loss <= 1e-6


def test_focal_matches_loop_oracle(rng):
    labels = rng.integers(0, 3, size=(5, 6))
    probs = rng.dirichlet([1, 1, 1], size=(5, 6))
    with precision(np.float64):
        loss = float(loss_trimap_focal(probs, TrimapTarget.from_labels(labels)).data)
    assert loss == pytest.approx(reference.focal(probs.tolist(), np.eye(3)[labels].tolist()), rel=1e-12)


def test_trimap_target_accessors():
    t = TrimapTarget.from_labels(np.array([[0, 2], [1, 2]]))
    assert t.labels.tolist() == [[0, 2], [1, 2]]
    assert t.uncertain.tolist() == [[False, True], [False, True]]


# -- charbonnier terms ---------------------------------------------------------

def test_alpha_and_laplacian_floors(rng):
    gt = rng.random((64, 64))
    with precision(np.float64):
        assert abs(float(loss_alpha(gt, gt, EPS).data) - EPS) < 1e-9
        assert abs(float(loss_laplacian(gt, gt, EPS).data) - 5 * EPS) < 1e-9


def test_alpha_constant_offset(rng):
    gt = rng.random((8, 8)) * 0.5
    with precision(np.float64):
        loss = float(loss_alpha(gt + 0.3, gt, EPS).data)
    assert loss == pytest.approx(math.sqrt(0.09 + EPS ** 2), abs=1e-12)


def test_laplacian_matches_independent_pyramid(rng):
    pred, gt = rng.random((64, 64)), rng.random((64, 64))
    with precision(np.float64):
        loss = float(loss_laplacian(pred, gt, EPS).data)
    assert loss == pytest.approx(reference.laplacian_loss(pred.tolist(), gt.tolist(), EPS), rel=1e-10)


def test_laplacian_bands_reconstruct(rng):
    x = rng.random((32, 32))
    with precision(np.float64):
        bands = laplacian_pyramid(x, 5)
    assert [b.shape[1] for b in bands] == [32, 16, 8, 4, 2]
    # the bands of a constant map vanish away from the zero-padded border
    with precision(np.float64):
        flat = laplacian_pyramid(np.full((32, 32), 0.4), 1)[0].data[0, 4:-4, 4:-4, 0]
    np.testing.assert_allclose(flat, 0, atol=1e-12)


def test_laplacian_rejects_indivisible():
    with pytest.raises(ShapeError):
        loss_laplacian(np.zeros((48, 40)), np.zeros((48, 40)))


def test_composition_floor_and_oracle(rng):
    pred, gt = rng.random((6, 7)), rng.random((6, 7))
    fg, bg = rng.random((6, 7, 3)), rng.random((6, 7, 3))
    with precision(np.float64):
        assert abs(float(loss_composition(gt, fg, bg, gt, EPS).data) - EPS) < 1e-9
        assert abs(float(loss_composition(pred, fg, fg, gt, EPS).data) - EPS) < 1e-9
        loss = float(loss_composition(pred, fg, bg, gt, EPS).data)
    assert loss == pytest.approx(reference.composition_loss(pred.tolist(), gt.tolist(), fg.tolist(),
                                                            bg.tolist(), EPS), rel=1e-12)


@given(st.integers(0, 2**16))
def test_losses_at_or_above_floors(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.random((32, 32)), rng.random((32, 32))
    fg, bg = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    with precision(np.float64):
        assert float(loss_alpha(pred, gt, EPS).data) > EPS
        assert float(loss_laplacian(pred, gt, EPS).data) > 5 * EPS
        assert float(loss_composition(pred, fg, bg, gt, EPS).data) > EPS


# -- pseudo trimaps ------------------------------------------------------------

CFG0 = LossConfig(dilate_radius=0, erode_radius=0)


def test_hard_edge_with_zero_radii():
    alpha = np.zeros((32, 32))
    alpha[:, 12:] = 1.0
    targets = make_pseudo_trimap(alpha, CFG0, levels=(1, 8, 16, 32))
    assert not targets[1].uncertain.any()
    # only the cells straddling the edge at x = 12 are uncertain
    assert targets[8].uncertain.tolist() == [[False, True, False, False]] * 4
    assert targets[16].uncertain.tolist() == [[True, False]] * 2
    assert targets[32].uncertain.all()
    assert targets[8].labels[0].tolist() == [1, 2, 0, 0]


def test_soft_ramp_inside_band():
    alpha = np.zeros((64, 64))
    alpha[:, 30:34] = np.linspace(0.2, 0.8, 4)
    alpha[:, 34:] = 1.0
    labels = pseudo_trimap_labels(alpha, LossConfig())
    soft = (alpha > 0) & (alpha < 1)
    assert np.all(labels[soft] == 2)
    # the band extends about 10 pixels to either side
    assert np.all(labels[:, 20:44] == 2)
    assert np.all(labels[:, :19] == 1) and np.all(labels[:, 45:] == 0)


def test_all_zero_alpha_is_background():
    for target in make_pseudo_trimap(np.zeros((64, 64)), LossConfig()).values():
        assert np.all(target.labels == 1)


@given(st.integers(0, 2**16), st.integers(0, 4), st.integers(0, 4))
def test_soft_pixels_always_uncertain(seed, dilate, erode):
    rng = np.random.default_rng(seed)
    alpha = np.clip(rng.random((32, 32)) * 3 - 1, 0, 1)
    cfg = LossConfig(dilate_radius=dilate, erode_radius=erode)
    targets = make_pseudo_trimap(alpha, cfg, levels=(1, 8))
    assert np.all(targets[1].uncertain[(alpha > 0) & (alpha < 1)])
    assert np.all(targets[1].classes.sum(-1) == 1)
    cells = ((alpha > 0) & (alpha < 1)).reshape(4, 8, 4, 8).any(axis=(1, 3))
    assert np.all(targets[8].uncertain[cells])


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(epsilon=0).validate()
    with pytest.raises(ValueError):
        LossConfig(dilate_radius=-1).validate()


# -- total ---------------------------------------------------------------------

def _coarse_from(alpha_levels, trimap_levels):
    levels = {k: (Tensor(a, requires_grad=True), Tensor(t, requires_grad=True))
              for k, (a, t) in zip((8, 16, 32), zip(alpha_levels, trimap_levels))}
    return CoarseOutput(levels[8][0], levels[8][1], levels[16], levels[32])


def _perfect_setup():
    gt = np.zeros((1, 64, 64))
    gt[:, :32, :] = 1.0  # edges on a 32-pixel boundary keep every coarse level binary
    cfg = LossConfig()
    tri = make_pseudo_trimap(gt, cfg)
    targets = {lv: (downsample_alpha(gt, lv), tri[lv]) for lv in (8, 16, 32)}
    coarse = _coarse_from([targets[lv][0] for lv in (8, 16, 32)], [targets[lv][1].classes for lv in (8, 16, 32)])
    return gt, cfg, targets, coarse


def test_total_of_perfect_prediction_is_floors():
    gt, cfg, targets, coarse = _perfect_setup()
    fg, bg = np.ones(gt.shape + (3,)), np.zeros(gt.shape + (3,))
    with precision(np.float64):
        loss, parts = total_loss(coarse, targets, Tensor(gt), gt, cfg, fg=fg, bg=bg)
    floors = {"alpha": EPS, "laplacian": 5 * EPS, "composition": EPS}
    residual = sum(v - floors.get(k, 0.0) for k, v in parts.items() if k != "total")
    assert abs(residual) < 1e-6
    assert abs(parts["total"] - 7 * EPS) < 1e-6


def test_total_is_sum_of_components(rng):
    gt, cfg, targets, _ = _perfect_setup()
    coarse = _coarse_from([rng.random(targets[lv][0].shape) for lv in (8, 16, 32)],
                          [rng.dirichlet([1, 1, 1], size=targets[lv][0].shape) for lv in (8, 16, 32)])
    pred = rng.random(gt.shape)
    fg, bg = rng.random(gt.shape + (3,)), rng.random(gt.shape + (3,))
    loss, parts = total_loss(coarse, targets, Tensor(pred), gt, cfg, fg=fg, bg=bg)
    names = [k for k in parts if k != "total"]
    assert len(names) == 9
    for order in (names, names[::-1], sorted(names)):
        assert sum(parts[k] for k in order) == pytest.approx(parts["total"], abs=1e-6)
    assert float(loss.data) == parts["total"]


def test_total_gradient_is_sum_of_component_gradients(rng):
    gt, cfg, targets, _ = _perfect_setup()
    pred_data = rng.random(gt.shape)
    fg, bg = rng.random(gt.shape + (3,)), rng.random(gt.shape + (3,))
    with precision(np.float64):
        coarse = _coarse_from([targets[lv][0] for lv in (8, 16, 32)],
                              [targets[lv][1].classes for lv in (8, 16, 32)])
        pred = Tensor(pred_data, requires_grad=True)
        total_loss(coarse, targets, pred, gt, cfg, fg=fg, bg=bg)[0].backward()
        summed = np.zeros_like(pred_data)
        for fn in (lambda p: loss_alpha(p, gt, EPS), lambda p: loss_laplacian(p, gt, EPS),
                   lambda p: loss_composition(p, fg, bg, gt, EPS)):
            p = Tensor(pred_data, requires_grad=True)
            fn(p).backward()
            summed += p.grad
    np.testing.assert_allclose(pred.grad, summed, rtol=1e-10, atol=1e-15)


def test_total_skips_composition_without_colors():
    gt, cfg, targets, coarse = _perfect_setup()
    _, parts = total_loss(coarse, targets, Tensor(gt), gt, cfg)
    assert "composition" not in parts


def test_nan_guard_names_component():
    gt, cfg, targets, coarse = _perfect_setup()
    bad = gt.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        total_loss(coarse, targets, Tensor(bad), gt, cfg)
    assert info.value.component == "alpha"
