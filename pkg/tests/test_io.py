import json
import struct

import numpy as np
import pytest

from regionmatte.checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from regionmatte.config import PipelineConfig, TrainConfig, tiny_config
from regionmatte.errors import CheckpointError, ImageFormatError
from regionmatte.imageio import list_images, read_image, write_image


# -- images --------------------------------------------------------------------

@pytest.mark.parametrize("bits", [8, 16])
@pytest.mark.parametrize("suffix,shape", [(".pgm", (5, 7)), (".ppm", (5, 7, 3))])
def test_pnm_round_trip(tmp_path, rng, bits, suffix, shape):
    levels = 255 if bits == 8 else 65535
    data = np.round(rng.random(shape) * levels) / levels
    path = tmp_path / f"img{suffix}"
    write_image(path, data, bits=bits)
    back = read_image(path)
    assert back.shape == shape and back.dtype == np.float32
    np.testing.assert_allclose(back, data, atol=1e-6)


def test_pnm_header_comments_and_sixteen_bit_layout(tmp_path):
    path = tmp_path / "c.pgm"
    body = struct.pack(">HH", 0, 65535)
    path.write_bytes(b"P5\n# made by hand\n2 1\n# max\n65535\n" + body)
    np.testing.assert_array_equal(read_image(path), [[0.0, 1.0]])


def test_png_round_trip(tmp_path, rng):
    pytest.importorskip("PIL")
    gray = np.round(rng.random((6, 4)) * 65535) / 65535
    write_image(tmp_path / "a.png", gray, bits=16)
    np.testing.assert_allclose(read_image(tmp_path / "a.png"), gray, atol=1e-6)
    rgb = np.round(rng.random((6, 4, 3)) * 255) / 255
    write_image(tmp_path / "b.png", rgb)
    np.testing.assert_allclose(read_image(tmp_path / "b.png"), rgb, atol=1e-6)


def test_image_errors(tmp_path):
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "missing.pgm")
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ImageFormatError):
        read_image(bad)
    short = tmp_path / "short.ppm"
    short.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(ImageFormatError, match="truncated"):
        read_image(short)
    with pytest.raises(ImageFormatError):
        write_image(tmp_path / "x.bmp", np.zeros((2, 2)))
    with pytest.raises(ImageFormatError):
        write_image(tmp_path / "x.pgm", np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        write_image(tmp_path / "x.pgm", np.zeros((2, 2)), bits=12)


def test_list_images(tmp_path):
    for name in ("b.ppm", "a.pgm", "notes.txt", "c.PNG"):
        (tmp_path / name).write_bytes(b"")
    assert list(list_images(tmp_path)) == ["a", "b", "c"]


# -- config --------------------------------------------------------------------

def test_config_json_round_trip(tmp_path):
    cfg = tiny_config(steps=7)
    path = tmp_path / "cfg.json"
    cfg.save(path)
    loaded = PipelineConfig.load(path)
    assert loaded == cfg
    assert loaded.dumps() == cfg.dumps()
    assert json.loads(path.read_text())["train"]["steps"] == 7


def test_config_rejects_unknown_and_invalid():
    data = PipelineConfig().to_dict()
    with pytest.raises(ValueError, match="sections"):
        PipelineConfig.from_dict({**data, "extra": {}})
    data["train"]["bogus"] = 1
    with pytest.raises(ValueError, match="bogus"):
        PipelineConfig.from_dict(data)
    for bad in (dict(resize=200), dict(resize=240), dict(learning_rate=0), dict(lr_schedule="step")):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


def test_config_override():
    cfg = PipelineConfig().override({"train.steps": 3, "refine.k": 4, "io.data_dir": "x"})
    assert (cfg.train.steps, cfg.refine.k, cfg.io.data_dir) == (3, 4, "x")
    with pytest.raises(ValueError):
        PipelineConfig().override({"train.nope": 1})
    with pytest.raises(ValueError):
        PipelineConfig().override({"train.resize": 100})


def test_default_config_values():
    cfg = PipelineConfig()
    assert cfg.train.resize == 896 and cfg.train.learning_rate == 3e-4
    assert (cfg.refine.k, cfg.refine.s, cfg.backbone.patch_size, cfg.backbone.window_size) == (8, 4, 16, 7)
    assert cfg.loss.epsilon == 1e-6 and cfg.loss.pyramid_levels == 5


# -- checkpoints ---------------------------------------------------------------

def _ckpt(rng, optimizer=True):
    weights = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.float32(rng.normal(size=()))}
    opt = {"step": np.array([5.0], np.float32), "m/a.weight": rng.normal(size=(3, 4)).astype(np.float32)}
    return Checkpoint(config=tiny_config().to_dict(), weights=weights, optimizer=opt if optimizer else None,
                      meta={"step": 5})


def test_checkpoint_layout(rng):
    data = to_bytes(_ckpt(rng, optimizer=False))
    assert data[:4] == b"MTLT"
    assert struct.unpack("<I", data[4:8])[0] == 1
    hlen = struct.unpack("<I", data[8:12])[0]
    header = json.loads(data[12:12 + hlen])
    assert header["meta"] == {"step": 5}
    pos = 12 + hlen
    assert struct.unpack("<I", data[pos:pos + 4])[0] == 2
    nlen = struct.unpack("<I", data[pos + 4:pos + 8])[0]
    assert data[pos + 8:pos + 8 + nlen] == b"a.weight"
    rank, d0, d1 = struct.unpack("<III", data[pos + 8 + nlen:pos + 20 + nlen])
    assert (rank, d0, d1) == (2, 3, 4)


def test_checkpoint_round_trip_is_byte_identical(tmp_path, rng):
    ckpt = _ckpt(rng)
    first = save_checkpoint(ckpt, tmp_path / "a.mtlt")
    loaded = load_checkpoint(tmp_path / "a.mtlt")
    second = save_checkpoint(loaded, tmp_path / "b.mtlt")
    assert first == second == (tmp_path / "b.mtlt").read_bytes()
    for name, value in ckpt.weights.items():
        assert np.array_equal(loaded.weights[name], value)
    assert set(loaded.optimizer) == {"step", "m/a.weight"}
    assert not (tmp_path / "a.mtlt.tmp").exists()


@pytest.mark.parametrize("mutate,message", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + struct.pack("<I", 9) + d[8:], "version"),
    (lambda d: d[:-3], "truncated"),
    (lambda d: d + b"\0", "trailing"),
])
def test_checkpoint_corruption_detected(rng, mutate, message):
    data = to_bytes(_ckpt(rng))
    with pytest.raises(CheckpointError, match=message):
        from_bytes(mutate(data))


def test_checkpoint_io_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "none.mtlt")
    with pytest.raises(CheckpointError):
        save_checkpoint(Checkpoint({}, {}), tmp_path / "missing_dir" / "x.mtlt")
