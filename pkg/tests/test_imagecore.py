import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hilite import imagecore
from hilite.errors import CorruptImageError, MissingFileError, UnsupportedFormatError, UnwritablePathError


def test_load_8bit_pgm(tmp_path):
    path = tmp_path / "g.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = imagecore.load_image(path)
    assert img.shape == (2, 2)
    assert img.dtype == np.float32
    np.testing.assert_allclose(img.ravel(), [0.0, 1.0, 128 / 255, 64 / 255], rtol=0, atol=1e-7)


def test_load_pgm_with_comment_and_custom_maxval(tmp_path):
    path = tmp_path / "g.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n1000\n\x03\xe8\x01\xf4")
    img = imagecore.load_image(path)
    np.testing.assert_allclose(img.ravel(), [1.0, 0.5], atol=1e-7)


def test_load_rgb_png(tmp_path):
    path = tmp_path / "red.png"
    imagecore.save_image(np.array([[[1.0, 0.0, 0.0]]]), path)
    img = imagecore.load_image(path)
    assert img.shape == (1, 1, 3)
    np.testing.assert_array_equal(img.ravel(), [1.0, 0.0, 0.0])


def test_alpha_dropped(tmp_path):
    import cv2

    bgra = np.zeros((2, 3, 4), dtype=np.uint8)
    bgra[..., 2] = 255  # red
    bgra[..., 3] = 7
    path = tmp_path / "a.png"
    cv2.imwrite(str(path), bgra)
    img = imagecore.load_image(path)
    assert img.shape == (2, 3, 3)
    np.testing.assert_array_equal(img[0, 0], [1.0, 0.0, 0.0])


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        imagecore.load_image(tmp_path / "nope.png")


def test_unsupported_format(tmp_path):
    path = tmp_path / "x.jpg"
    path.write_bytes(b"\xff\xd8\xff\xe0 not really a jpeg")
    with pytest.raises(UnsupportedFormatError):
        imagecore.load_image(path)
    ascii_pgm = tmp_path / "a.pgm"
    ascii_pgm.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(UnsupportedFormatError):
        imagecore.load_image(ascii_pgm)


@pytest.mark.parametrize("payload", [
    b"P5\n2 x\n255\n\x00",
    b"P5\n2 2\n255\n\x00\x01",
    b"P6\n1 1\n0\n\x00\x00\x00",
    b"\x89PNG\r\n\x1a\njunk",
])
def test_corrupt_header(tmp_path, payload):
    path = tmp_path / "bad.img"
    path.write_bytes(payload)
    with pytest.raises(CorruptImageError):
        imagecore.load_image(path)


def test_error_variants_are_distinct():
    assert len({MissingFileError, UnsupportedFormatError, CorruptImageError}) == 3
    assert len({MissingFileError.code, UnsupportedFormatError.code, CorruptImageError.code}) == 3


def test_save_16bit_rounds_half_up(tmp_path):
    path = tmp_path / "half.pgm"
    imagecore.save_image(np.full((1, 1), 0.5, dtype=np.float32), path, bit_depth=16)
    raw = path.read_bytes()
    assert raw.endswith((32768).to_bytes(2, "big"))
    assert imagecore.quantize(np.array([0.5]), 16)[0] == 32768


@pytest.mark.parametrize("ext,bit_depth,color", [
    (".png", 8, False), (".png", 16, False), (".png", 8, True), (".png", 16, True),
    (".pgm", 8, False), (".pgm", 16, False), (".ppm", 8, True), (".ppm", 16, True),
])
def test_round_trip_within_half_step(tmp_path, ext, bit_depth, color):
    rng = np.random.default_rng(11)
    shape = (7, 5, 3) if color else (7, 5)
    img = rng.random(shape).astype(np.float32)
    path = tmp_path / f"img{ext}"
    imagecore.save_image(img, path, bit_depth=bit_depth)
    back = imagecore.load_image(path)
    step = 1 / (255 if bit_depth == 8 else 65535)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= step / 2 + 1e-7


def test_save_8bit_bound(tmp_path):
    img = np.linspace(0, 1, 1001, dtype=np.float32).reshape(7, 143)
    path = tmp_path / "ramp.png"
    imagecore.save_image(img, path)
    assert np.abs(imagecore.load_image(path) - img).max() <= 1 / 510 + 1e-7


def test_save_clips_out_of_range(tmp_path):
    path = tmp_path / "c.png"
    imagecore.save_image(np.array([[-0.5, 1.5]]), path)
    np.testing.assert_array_equal(imagecore.load_image(path), [[0.0, 1.0]])


def test_save_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(UnwritablePathError):
        imagecore.save_image(np.zeros((2, 2)), blocker / "out.png")
    with pytest.raises(UnwritablePathError):
        imagecore.save_image(np.zeros((2, 2)), tmp_path / "missing" / "out.png")


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_save_read_only_dir(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o555)
    try:
        with pytest.raises(UnwritablePathError):
            imagecore.save_image(np.zeros((2, 2)), ro / "out.png")
    finally:
        ro.chmod(0o755)


def test_grayscale_weights():
    img = np.array([[[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]], dtype=np.float32)
    gray = imagecore.to_grayscale(img)
    assert gray.shape == (1, 2)
    assert gray[0, 0] == 1.0
    assert gray[0, 1] == pytest.approx(0.299, abs=1e-7)


def test_grayscale_identity_on_gray():
    gray = np.random.default_rng(0).random((4, 4)).astype(np.float32)
    assert imagecore.to_grayscale(gray) is gray
    np.testing.assert_array_equal(imagecore.to_grayscale(gray[:, :, None]), gray)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 4, 3), elements=st.floats(0, 1, width=32)))
def test_grayscale_stays_in_unit_interval(img):
    gray = imagecore.to_grayscale(img)
    assert gray.min() >= 0.0 and gray.max() <= 1.0


def test_as_image_rejects_bad_channel_count():
    with pytest.raises(ValueError):
        imagecore.as_image(np.zeros((2, 2, 2)))
