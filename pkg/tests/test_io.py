import numpy as np
import pytest

from supercut import imageio
from supercut.errors import ParseError, StructuralError


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    path = tmp_path / "a.ppm"
    imageio.write_ppm(path, img)
    assert np.allclose(imageio.read_image(path), img, atol=1e-12)


def test_ppm_header_and_rounding():
    data = imageio.encode_ppm(np.array([[[0.0, 0.5, 1.0]]]))
    assert data == b"P6\n1 1\n255\n" + bytes([0, 128, 255])


def test_grey_pgm_read_as_rgb(tmp_path):
    path = tmp_path / "g.pgm"
    path.write_bytes(b"P5 2 1 255\n" + bytes([0, 255]))
    img = imageio.read_image(path)
    assert img.shape == (1, 2, 3)
    assert img[0, 1].tolist() == [1.0, 1.0, 1.0]


def test_header_comments(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 # width\n1\n255\n" + bytes([10, 20, 30]))
    arr, maxval = imageio.read_netpbm(path)
    assert maxval == 255
    assert arr[0, 0].tolist() == [10, 20, 30]


def test_label_pgm_is_16bit_big_endian():
    data = imageio.encode_label_pgm(np.array([[1, 258]]))
    assert data.startswith(b"P5\n2 1\n65535\n")
    assert data.endswith(bytes([0, 1, 1, 2]))


@pytest.mark.parametrize(
    "payload, offset",
    [
        (b"", 0),
        (b"X6 1 1 255\n\x00\x00\x00", 0),
        (b"P6 1 x 255\n\x00\x00\x00", 5),
        (b"P6 1 1", 6),
        (b"P6 2 2 255\n\x00\x00\x00", 14),
    ],
)
def test_malformed_netpbm_reports_offset(tmp_path, payload, offset):
    path = tmp_path / "bad.ppm"
    path.write_bytes(payload)
    with pytest.raises(ParseError) as info:
        imageio.read_netpbm(path)
    assert info.value.offset == offset


def test_ascii_netpbm_rejected(tmp_path):
    path = tmp_path / "p3.ppm"
    path.write_bytes(b"P3 1 1 255\n1 2 3\n")
    with pytest.raises(ParseError):
        imageio.read_netpbm(path)


def test_csv_non_integer_offset(tmp_path):
    path = tmp_path / "m.csv"
    path.write_bytes(b"0,1\n1,x\n")
    with pytest.raises(ParseError) as info:
        imageio.read_label_csv(path)
    assert info.value.offset == 4


def test_csv_ragged(tmp_path):
    path = tmp_path / "m.csv"
    path.write_bytes(b"0,1,2\n1,2\n")
    with pytest.raises(StructuralError):
        imageio.read_label_csv(path)


def test_label_too_large_for_pgm():
    with pytest.raises(StructuralError):
        imageio.encode_label_pgm(np.array([[70000]]))


def test_write_is_atomic(tmp_path):
    path = tmp_path / "x.pgm"
    imageio.write_label_pgm(path, np.zeros((2, 2), dtype=np.int64))
    assert [p.name for p in tmp_path.iterdir()] == ["x.pgm"]
