import io

import numpy as np
import pytest

from pnpplo.fileio import (
    FormatError,
    load_image,
    load_pgm,
    load_rawf32,
    quantize8,
    read_csv,
    save_image,
    save_pgm,
    save_rawf32,
    write_summary,
)
from pnpplo.tensor import Signal


def test_rawf32_round_trip_bit_exact(tmp_path):
    data = np.random.default_rng(0).standard_normal((7, 5, 3)).astype(np.float32).astype(np.float64)
    x = Signal(data)
    path = tmp_path / "x.rawf32"
    save_rawf32(path, x)
    assert path.read_bytes().startswith(b"RAWF32 7 5 3\n")
    assert np.array_equal(load_rawf32(path).data, data)


def test_rawf32_narrowing(tmp_path):
    path = tmp_path / "x.rawf32"
    save_rawf32(path, Signal([0.1]))
    assert load_rawf32(path).vector()[0] == float(np.float32(0.1))


@pytest.mark.parametrize(
    "blob",
    [b"RAWF32 2 2 1\n" + b"\x00" * 15, b"RAWF32 2 2 1\n" + b"\x00" * 17, b"RAWF32 2 x 1\n", b"RAW 2 2 1\n", b"RAWF32 2 2 1", b"RAWF32 0 2 1\n"],
)
def test_rawf32_malformed(tmp_path, blob):
    path = tmp_path / "bad.rawf32"
    path.write_bytes(blob)
    with pytest.raises(FormatError):
        load_rawf32(path)


def test_quantize_rounding_and_clamping():
    assert quantize8([127.5, 127.49, 0.5, -0.5, -3.0, 254.5, 300.0]).tolist() == [128, 127, 1, 0, 0, 255, 255]
    with pytest.raises(ValueError):
        quantize8([np.nan])


def test_pgm_round_trip_and_header(tmp_path):
    img = np.array([[0.0, 127.5], [254.6, 12.2], [-4.0, 999.0]])
    path = tmp_path / "a.pgm"
    save_pgm(path, Signal(img))
    raw = path.read_bytes()
    assert raw[:11] == b"P5\n2 3\n255\n"
    assert list(raw[11:]) == [0, 128, 255, 12, 0, 255]
    assert load_pgm(path).data[:, :, 0].tolist() == [[0, 128], [255, 12], [0, 255]]


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1 # width height\n255\n\x05\x06")
    assert load_pgm(path).vector().tolist() == [5.0, 6.0]


@pytest.mark.parametrize("blob", [b"P5\n2 2\n255\n\x00", b"P2\n1 1\n255\n\x00", b"P5\n2", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1 a\n255\n\x00"])
def test_pgm_malformed(tmp_path, blob):
    path = tmp_path / "bad.pgm"
    path.write_bytes(blob)
    with pytest.raises(FormatError):
        load_pgm(path)


def test_pgm_rejects_multichannel(tmp_path):
    with pytest.raises(ValueError):
        save_pgm(tmp_path / "x.pgm", Signal(np.zeros((2, 2, 3))))


def test_dispatch_by_extension(tmp_path):
    x = Signal(np.full((2, 2), 7.0))
    for name in ("a.pgm", "a.rawf32"):
        save_image(tmp_path / name, x)
        assert np.array_equal(load_image(tmp_path / name).data, x.data)


def test_summary_csv(tmp_path):
    rows = [{"task": "t", "solver": "s", "w": 1.0, "K": 5, "final_psnr": None}]
    buf = io.StringIO()
    write_summary(buf, rows, ("task", "solver", "w", "K", "final_psnr"))
    assert buf.getvalue() == "task,solver,w,K,final_psnr\nt,s,1.0,5,\n"
    path = tmp_path / "s.csv"
    write_summary(path, rows, ("task", "w"))
    assert read_csv(path) == [{"task": "t", "w": "1.0"}]
