"""Image and table files: 8-bit PGM (P5), RAWF32 and CSV.

RAWF32 layout: an ASCII line ``RAWF32 <rows> <cols> <channels>\\n``, then
little-endian float32 samples, row-major and channel-interleaved.
"""

import csv
import re

import numpy as np

from .tensor import Signal

RAWF32_MAGIC = "RAWF32"
SUMMARY_COLUMNS = ("task", "solver", "step_rule", "w", "epsilon", "K", "iters_run", "final_f", "final_psnr", "wall_ms")


class FormatError(ValueError):
    """Malformed header or truncated payload."""


def quantize8(values):
    """Round half away from zero, then clamp to ``[0, 255]``."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantise non-finite samples")
    r = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(r, 0, 255).astype(np.uint8)


def save_pgm(path, x):
    """Write a single-channel signal as binary 8-bit PGM."""
    rows, cols, ch = x.shape
    if ch != 1 or x.is_complex:
        raise ValueError("PGM holds one real channel")
    body = quantize8(x.data[:, :, 0]).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(body)


def _pgm_tokens(buf):
    # magic, width, height, maxval, each possibly preceded by comments
    pos = 0
    tokens = []
    ws = re.compile(rb"(?:\s|#[^\n]*\n?)*")
    tok = re.compile(rb"\S+")
    while len(tokens) < 4:
        pos = ws.match(buf, pos).end()
        m = tok.match(buf, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group())
        pos = m.end()
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("PGM header must end with one whitespace byte")
    return tokens, pos + 1


def load_pgm(path):
    """Read a binary PGM (maxval <= 255) as a float64 signal with values in [0, maxval]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, start = _pgm_tokens(buf)
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer PGM header field") from exc
    if not 0 < maxval <= 255 or rows <= 0 or cols <= 0:
        raise FormatError("unsupported PGM dimensions or maxval")
    n = rows * cols
    if len(buf) - start < n:
        raise FormatError(f"truncated PGM payload: {len(buf) - start} of {n} bytes")
    pix = np.frombuffer(buf, dtype=np.uint8, count=n, offset=start)
    return Signal(pix.reshape(rows, cols, 1).astype(np.float64))


def save_rawf32(path, x):
    """Write ``x`` as RAWF32; samples are narrowed to float32."""
    rows, cols, ch = x.shape
    with open(path, "wb") as fh:
        fh.write(f"{RAWF32_MAGIC} {rows} {cols} {ch}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(x.data, dtype="<f4").tobytes())


def load_rawf32(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    nl = buf.find(b"\n")
    if nl < 0:
        raise FormatError("RAWF32 header has no newline")
    parts = buf[:nl].split(b" ")
    if len(parts) != 4 or parts[0] != RAWF32_MAGIC.encode():
        raise FormatError(f"bad RAWF32 header {buf[:nl]!r}")
    try:
        rows, cols, ch = (int(p) for p in parts[1:])
    except ValueError as exc:
        raise FormatError("non-integer RAWF32 dimension") from exc
    if min(rows, cols, ch) <= 0:
        raise FormatError("RAWF32 dimensions must be positive")
    n = rows * cols * ch * 4
    payload = buf[nl + 1 :]
    if len(payload) != n:
        raise FormatError(f"RAWF32 payload has {len(payload)} bytes, header implies {n}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return Signal(arr.reshape(rows, cols, ch))


def load_image(path):
    """Load by extension: ``.pgm`` or anything else as RAWF32."""
    if str(path).lower().endswith(".pgm"):
        return load_pgm(path)
    return load_rawf32(path)


def save_image(path, x):
    if str(path).lower().endswith(".pgm"):
        save_pgm(path, x)
    else:
        save_rawf32(path, x)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary(path_or_stream, rows, columns=SUMMARY_COLUMNS):
    """Write dict rows as CSV with a fixed header; missing values are empty cells."""
    if hasattr(path_or_stream, "write"):
        _write_rows(path_or_stream, rows, columns)
        return
    with open(path_or_stream, "w", newline="") as fh:
        _write_rows(fh, rows, columns)


def _write_rows(fh, rows, columns):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
