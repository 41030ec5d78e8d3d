import numpy as np
import pytest

from dehazer.imageio import ImageBuffer, ImageIOError, load_image, save_image


def quantized(rng, shape):
    return np.round(rng.uniform(0, 1, shape) * 255) / 255.0


@pytest.mark.parametrize("ext", ["png", "ppm"])
def test_rgb_round_trip_exact(tmp_path, ext):
    img = quantized(np.random.default_rng(0), (13, 17, 3))
    path = tmp_path / f"img.{ext}"
    save_image(img, path)
    loaded = load_image(path)
    np.testing.assert_array_equal(loaded.data, img.astype(np.float32))
    assert loaded.path == str(path)


@pytest.mark.parametrize("ext", ["png", "pgm"])
def test_gray_round_trip_exact(tmp_path, ext):
    img = quantized(np.random.default_rng(1), (9, 11, 1))
    path = tmp_path / f"img.{ext}"
    save_image(img, path)
    loaded = load_image(path)
    assert loaded.data.shape == (9, 11, 1)
    np.testing.assert_array_equal(loaded.data, img.astype(np.float32))


def test_16bit_pgm_scales_against_65535(tmp_path):
    values = np.array([[0, 1000], [30000, 65535]], dtype=">u2")
    path = tmp_path / "depth.pgm"
    with open(path, "wb") as fh:
        fh.write(b"P5\n2 2\n65535\n")
        fh.write(values.tobytes())
    loaded = load_image(path)
    np.testing.assert_allclose(loaded.data[:, :, 0],
                               values.astype(np.float64) / 65535.0, rtol=1e-7)


def test_truncated_file_errors(tmp_path):
    path = tmp_path / "bad.ppm"
    with open(path, "wb") as fh:
        fh.write(b"P6\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageIOError, match="truncated"):
        load_image(path)


def test_garbage_png_errors(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"not an image at all")
    with pytest.raises(ImageIOError) as err:
        load_image(path)
    assert str(path) in str(err.value)


def test_unsupported_save_extension(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(np.zeros((4, 4, 3)), tmp_path / "x.tiff")


def test_values_clamped_on_load(tmp_path):
    img = np.ones((4, 4, 3))
    path = tmp_path / "ones.png"
    save_image(img * 2.0, path)  # saver clamps too
    loaded = load_image(path)
    assert loaded.data.max() <= 1.0
    assert loaded.data.min() >= 0.0


def test_buffer_accessors():
    buf = ImageBuffer(np.zeros((5, 7, 3), np.float32))
    assert (buf.h, buf.w, buf.c) == (5, 7, 3)
