import numpy as np
import pytest
from PIL import Image

from rstv.fileio import (
    FormatError,
    read_container,
    read_features,
    read_image,
    read_pgm,
    write_container,
    write_features,
    write_pgm,
)


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_roundtrip(tmp_path, rng, maxval):
    img = rng.random((7, 9))
    write_pgm(tmp_path / "a.pgm", img, maxval)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (7, 9)
    assert np.abs(back - img).max() <= 0.5 / maxval + 1e-12


def test_pgm_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# hi\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_png_gray_and_color(tmp_path):
    Image.fromarray(np.array([[0, 255]], dtype=np.uint8)).save(tmp_path / "g.png")
    np.testing.assert_array_equal(read_image(tmp_path / "g.png"), [[0.0, 1.0]])
    rgb = np.zeros((1, 1, 3), dtype=np.uint8)
    rgb[..., 1] = 255
    Image.fromarray(rgb).save(tmp_path / "c.png")
    np.testing.assert_allclose(read_image(tmp_path / "c.png"), [[0.587]])
    Image.fromarray(np.array([[65535]], dtype=np.uint16)).save(tmp_path / "w.png")
    np.testing.assert_allclose(read_image(tmp_path / "w.png"), [[1.0]])


def test_container_roundtrip(tmp_path, rng):
    blobs = {"a": rng.random((3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32)}
    write_container(tmp_path / "x.bin", b"TESTMAGC", {"k": 1}, blobs)
    head, back = read_container(tmp_path / "x.bin", b"TESTMAGC")
    assert head["k"] == 1
    for k in blobs:
        np.testing.assert_array_equal(back[k], blobs[k])
    with pytest.raises(FormatError):
        read_container(tmp_path / "x.bin", b"OTHERMAG")


def test_container_truncation(tmp_path):
    write_container(tmp_path / "x.bin", b"TESTMAGC", {}, {"a": np.ones(4)})
    raw = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "y.bin").write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(FormatError):
        read_container(tmp_path / "y.bin", b"TESTMAGC")


def test_features_roundtrip(tmp_path, rng):
    M = rng.random((4, 6)).astype(np.float32)
    write_features(tmp_path / "f.feat", M, {"T": 24})
    raw = (tmp_path / "f.feat").read_bytes()
    assert raw[:8] == b"RSTVFEAT"
    back, footer = read_features(tmp_path / "f.feat")
    np.testing.assert_array_equal(back, M)
    assert footer == {"T": 24}
