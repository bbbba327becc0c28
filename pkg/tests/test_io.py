import json

import numpy as np
import pytest

from xrdseg.errors import DataError
from xrdseg.io import (load_checkpoint, read_image, read_mask, save_checkpoint, write_image,
                       write_mask)
from xrdseg.masking import MaskImage
from xrdseg.unet import UNetConfig, build, count_parameters


def test_image_roundtrip_and_header(tmp_path):
    x = np.random.default_rng(0).random((7, 5)).astype(np.float32)
    write_image(tmp_path / "a", x, extra={"source": "a"})
    y, header = read_image(tmp_path / "a.json")
    assert y.tobytes() == x.tobytes()
    assert header["dtype"] == "f32le" and header["endianness"] == "little"
    assert header["shape"] == [7, 5] and header["semantic"] == "image"
    assert (tmp_path / "a.f32").stat().st_size == 4 * 35


def test_image_blob_size_checked(tmp_path):
    write_image(tmp_path / "a", np.zeros((4, 4)))
    (tmp_path / "a.f32").write_bytes(b"\0" * 12)
    with pytest.raises(DataError):
        read_image(tmp_path / "a")


def test_mask_roundtrip(tmp_path):
    m = MaskImage(np.eye(4, dtype=bool), provenance="threshold", source="img-1")
    write_mask(tmp_path / "m", m)
    back = read_mask(tmp_path / "m")
    np.testing.assert_array_equal(back.grid, m.grid)
    assert (back.provenance, back.source) == ("threshold", "img-1")
    assert (tmp_path / "m.u8").read_bytes() == np.eye(4, dtype=np.uint8).tobytes()
    side = json.loads((tmp_path / "m.json").read_text())
    assert {"shape", "provenance", "source"} <= set(side)


def test_mask_values_checked(tmp_path):
    write_mask(tmp_path / "m", MaskImage(np.zeros((2, 2))))
    (tmp_path / "m.u8").write_bytes(bytes([0, 2, 0, 0]))
    with pytest.raises(DataError):
        read_mask(tmp_path / "m")


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        read_image(tmp_path / "nope")


def test_checkpoint_roundtrip(tmp_path):
    model = build(UNetConfig(depth=3, seed=9))
    model.buffers["enc0.bn1.running_mean"][:] = 0.25
    save_checkpoint(tmp_path / "ck", model, epoch=7, metrics={"loss": 0.5})
    loaded, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["epoch"] == 7 and manifest["seed"] == 9 and manifest["dtype"] == "f32le"
    assert manifest["init"] == "kaiming_uniform_fan_in"
    learnable = sum(int(np.prod(t["shape"])) for t in manifest["tensors"] if t["learnable"])
    assert learnable == count_parameters(model) == 29_650
    for k, v in model.state_arrays().items():
        assert loaded.state_arrays()[k].tobytes() == v.tobytes()
    # blobs follow the manifest order
    files = [t["file"] for t in manifest["tensors"]]
    assert files == sorted(files)


def test_checkpoint_bytes_are_reproducible(tmp_path):
    for d in ("a", "b"):
        save_checkpoint(tmp_path / d, build(UNetConfig(depth=2, seed=1)), epoch=0)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(DataError):
        load_checkpoint(tmp_path)
