import json

import numpy as np
import pytest

from regionmatte.checkpoint import from_bytes, load_checkpoint, to_bytes
from regionmatte.cli import main
from regionmatte.config import tiny_config
from regionmatte.data import make_synthetic_samples
from regionmatte.errors import ImageFormatError, UnpairedFileError
from regionmatte.imageio import write_image
from regionmatte.losses import total_loss
from regionmatte.pipeline import (MattingModel, Trainer, evaluate, infer, inference_dims, make_targets,
                                  pad_for_inference, training_regions)
from regionmatte.workers import THREADS_ENV, parallel_map, worker_count


def small_config(**train):
    return tiny_config(num_samples=2, batch=2, **train)


@pytest.fixture(scope="module")
def samples():
    return make_synthetic_samples(2, 224, seed=3)


@pytest.fixture(scope="module")
def trained(samples):
    trainer = Trainer(small_config(steps=2), samples)
    trainer.run()
    return trainer


def test_training_is_deterministic(samples, trained):
    again = Trainer(small_config(steps=2), samples)
    again.run()
    assert again.history == trained.history
    assert to_bytes(again.checkpoint()) == to_bytes(trained.checkpoint())


def test_augmented_training_is_deterministic():
    runs = []
    for _ in range(2):
        trainer = Trainer(small_config(augment=True, steps=1, seed=5))
        trainer.run()
        runs.append(to_bytes(trainer.checkpoint()))
    assert runs[0] == runs[1]


def test_bias_table_learns_after_two_steps(samples, trained):
    fresh = MattingModel(trained.config, seed=trained.config.train.seed)
    assert np.all(fresh.refine.table.values.data == 0)
    assert np.any(trained.model.refine.table.values.data != 0)
    assert trained.history[-1]["regions"] > 0


def test_cosine_schedule_and_refine_scale(samples):
    trainer = Trainer(small_config(steps=10, lr_schedule="cosine", refine_lr_scale=0.5), samples)
    lr = trainer.config.train.learning_rate
    assert trainer.learning_rate(0) == lr
    assert trainer.learning_rate(5) == pytest.approx(lr / 2)
    assert trainer.learning_rate(10) == pytest.approx(0)
    scales = trainer.optimizer.lr_scale
    assert scales and all(name.startswith("refine.") and v == 0.5 for name, v in scales.items())


def test_step_without_regions(samples):
    model = MattingModel(small_config())
    images = np.stack([s.image for s in samples])
    targets = make_targets(samples, model.config.loss)
    empty = [np.zeros((0, 2), np.int64)] * len(samples)
    coarse, base, alpha, sets = model(images, regions=empty)
    assert all(len(rs) == 0 for rs in sets)
    assert np.array_equal(alpha.data, base.data)
    loss, _ = total_loss(coarse, targets.coarse, alpha, targets.alpha, model.config.loss,
                         fg=targets.fg, bg=targets.bg)
    loss.backward()
    grads = dict((name, p.grad) for name, p in model.named_parameters())
    assert all(g is None or not np.any(g) for name, g in grads.items() if name.startswith("refine."))
    assert any(g is not None and np.any(g) for name, g in grads.items() if name.startswith("lowres."))


def test_training_regions_union_and_cap():
    gt = np.zeros((4, 4), bool)
    gt[0, :3] = True
    probs = np.zeros((4, 4, 3))
    probs[..., 0] = 1.0
    probs[3, 3] = [0.1, 0.1, 0.8]
    probs[2, 2] = [0.2, 0.2, 0.6]
    assert training_regions(gt, probs, 10).tolist() == [[0, 0], [0, 1], [0, 2], [2, 2], [3, 3]]
    assert training_regions(gt, probs, 4).tolist() == [[0, 0], [0, 1], [0, 2], [3, 3]]
    assert training_regions(np.zeros((4, 4), bool), np.tile([1.0, 0, 0], (4, 4, 1)), 5).shape == (0, 2)


@pytest.mark.parametrize("h,w,expected", [(224, 224, (224, 224)), (100, 50, (224, 224)),
                                          (225, 300, (256, 320)), (480, 640, (480, 640))])
def test_inference_dims(h, w, expected):
    assert inference_dims(h, w) == expected
    padded, meta = pad_for_inference(np.zeros((h, w, 3)))
    assert padded.shape[:2] == expected and meta["source_dims"] == [h, w]


def test_infer_shapes_purity_and_bypass(trained):
    image = np.random.default_rng(0).random((150, 250, 3)).astype(np.float32)
    before = image.copy()
    result = infer(image, trained.model)
    assert np.array_equal(image, before)
    assert result.alpha.shape == result.coarse_alpha.shape == (150, 250)
    assert result.trimap.shape == (19, 32, 3)
    assert np.all((result.alpha >= 0) & (result.alpha <= 1))
    touched = np.zeros(inference_dims(150, 250), bool)
    for r, c in result.regions.coords:
        touched[8 * r:8 * r + 8, 8 * c:8 * c + 8] = True
    outside = ~touched[:150, :250]
    assert np.array_equal(result.alpha[outside], result.coarse_alpha[outside])
    again = infer(image, trained.model)
    assert np.array_equal(again.alpha, result.alpha)


def test_infer_rejects_gray(trained):
    with pytest.raises(ImageFormatError):
        infer(np.zeros((32, 32)), trained.model)


def test_inference_survives_checkpoint_round_trip(trained):
    image = np.random.default_rng(1).random((224, 240, 3)).astype(np.float32)
    restored = from_bytes(to_bytes(trained.checkpoint()))
    assert np.array_equal(infer(image, restored).alpha, infer(image, trained.model).alpha)


def _write_pairs(root, samples, stems):
    (root / "img").mkdir()
    (root / "gt").mkdir()
    for stem, s in zip(stems, samples):
        write_image(root / "img" / f"{stem}.ppm", s.image, bits=16)
        write_image(root / "gt" / f"{stem}.pgm", s.alpha, bits=16)


def test_evaluate_and_unpaired(tmp_path, samples, trained):
    _write_pairs(tmp_path, samples, ["a", "b"])
    report = evaluate(tmp_path / "img", tmp_path / "gt", trained.model, workers=2)
    text = report.to_text()
    assert "a" in text and "b" in text
    data = json.loads(report.dumps())
    assert data
    (tmp_path / "gt" / "b.pgm").unlink()
    with pytest.raises(UnpairedFileError, match="b"):
        evaluate(tmp_path / "img", tmp_path / "gt", trained.model)


def test_thread_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    assert worker_count() == 1
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count() >= 1
    assert parallel_map(lambda x: x * x, range(6), workers=3) == [0, 1, 4, 9, 16, 25]
    assert parallel_map(lambda x: -x, [2, 1], workers=1) == [-2, -1]


def test_cli_round_trip(tmp_path, samples, capsys):
    cfg_path = tmp_path / "cfg.json"
    small_config(steps=1).save(cfg_path)
    ckpt = tmp_path / "m.mtlt"
    assert main(["train", "--config", str(cfg_path), "--out", str(ckpt)]) == 0
    assert load_checkpoint(ckpt).meta["step"] == 1
    _write_pairs(tmp_path, samples[:1], ["x"])
    out = tmp_path / "alpha.pgm"
    dump = tmp_path / "regions.json"
    assert main(["infer", "--ckpt", str(ckpt), "--in", str(tmp_path / "img" / "x.ppm"), "--out", str(out),
                 "--dump-regions", str(dump), "--bits", "16"]) == 0
    assert out.exists()
    regions = json.loads(dump.read_text())
    assert regions["source_dims"] == [224, 224] and regions["search_range"] == 4
    report = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--images", str(tmp_path / "img"), "--gt", str(tmp_path / "gt"),
                 "--report", str(report)]) == 0
    assert report.exists() and (tmp_path / "report.txt").exists()
    assert main(["flops", "--config", str(cfg_path), "--width", "224", "--height", "224", "--regions", "10"]) == 0
    assert "total" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["infer", "--ckpt", str(tmp_path / "none.mtlt"), "--in", "x.ppm", "--out", "y.pgm"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["train", "--set", "no_equals_sign"])
    with pytest.raises(SystemExit):
        main([])


def test_cli_selftest():
    assert main(["selftest"]) == 0
