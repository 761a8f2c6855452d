import io
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from patchex import image


def test_zero_plane_round_trip(tmp_path):
    p = image.zeros(2, 2, 3)
    image.write_plane(tmp_path / "z.pfex", p)
    q = image.read_plane(tmp_path / "z.pfex")
    assert q.shape == (2, 2, 3)
    assert np.array_equal(p, q)


def test_bad_magic_rejected():
    buf = bytearray(image.encode_plane(image.zeros(2, 2, 1)))
    buf[:4] = b"XXXX"
    with pytest.raises(image.PlaneFormatError):
        image.decode_plane(bytes(buf))


def test_bad_version_and_truncation_rejected():
    good = image.encode_plane(np.ones((3, 4, 2), np.float32))
    bad_version = good[:4] + struct.pack("<I", 2) + good[8:]
    with pytest.raises(image.PlaneFormatError):
        image.decode_plane(bad_version)
    with pytest.raises(image.PlaneFormatError):
        image.decode_plane(good[:-1])
    with pytest.raises(image.PlaneFormatError):
        image.decode_plane(good[:10])


def test_size_overflow_rejected():
    header = struct.pack("<4sIIII", b"PFEX", 1, 1 << 16, 1 << 15, 4)
    with pytest.raises(image.PlaneFormatError):
        image.decode_plane(header)


def test_full_hd_file_bytes_identical(tmp_path, rng):
    p = rng.random((1080, 1920, 4), dtype=np.float32)
    a, b = tmp_path / "a.pfex", tmp_path / "b.pfex"
    image.write_plane(a, p)
    image.write_plane(b, image.read_plane(a))
    assert a.read_bytes() == b.read_bytes()


def test_header_layout():
    buf = image.encode_plane(np.arange(6, dtype=np.float32).reshape(1, 2, 3))
    magic, version, w, h, c = struct.unpack_from("<4sIIII", buf)
    assert (magic, version, w, h, c) == (b"PFEX", 1, 2, 1, 3)
    assert np.frombuffer(buf[20:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=9),
                  elements=st.floats(-2.0**100, 2.0**100, width=32, allow_nan=False, allow_infinity=False)))
def test_round_trip_any_finite_plane(p):
    q = image.decode_plane(image.encode_plane(p))
    assert q.tobytes() == p.tobytes()


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        image.as_plane(np.array([[np.nan]]))


def _png_pixels(data):
    return np.asarray(Image.open(io.BytesIO(data)))


def test_png_quantization():
    assert np.all(_png_pixels(image.to_png8(np.zeros((2, 3, 3)))) == 0)
    assert np.all(_png_pixels(image.to_png8(np.ones((2, 3, 1)))) == 255)
    assert np.all(_png_pixels(image.to_png8(np.full((1, 1, 4), 0.5))) == 128)
    # out-of-range values clamp first
    assert _png_pixels(image.to_png8(np.array([[[-1.0]], [[7.0]]]))).ravel().tolist() == [0, 255]


def test_png_rejects_two_channels():
    with pytest.raises(ValueError):
        image.to_png8(np.zeros((2, 2, 2)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
def test_arithmetic_preserves_dimensions(h, w, c):
    a = np.full((h, w, c), 2.0, np.float32)
    b = np.full((h, w, c), 0.0, np.float32)
    assert image.add(a, b).shape == (h, w, c)
    assert image.mul(a, b).shape == (h, w, c)
    d = image.safe_divide(a, b)
    assert d.shape == (h, w, c)
    assert np.all(np.isfinite(d))
    assert np.allclose(d, 2.0 / 1e-6)


def test_safe_divide_keeps_sign():
    num = np.ones((1, 2, 1), np.float32)
    den = np.array([[[-1e-9], [4.0]]], np.float32)
    out = image.safe_divide(num, den)
    assert out[0, 0, 0] == pytest.approx(-1e6)
    assert out[0, 1, 0] == pytest.approx(0.25)


def test_resolution_mismatch():
    with pytest.raises(ValueError):
        image.add(np.zeros((2, 2, 1)), np.zeros((3, 2, 1)))
