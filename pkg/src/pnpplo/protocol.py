"""Wire protocol for denoisers running in a separate process.

One request, then one response, over the peer's stdin/stdout::

    request : b"DNZ1" | u32 rows | u32 cols | u32 channels | f32 sigma_f | f32 samples...
    response: b"DNR1" | same header (sigma_f echoed)      | f32 samples...

All fields little-endian; samples are row-major and channel-interleaved.
Pipelining is not allowed.
"""

import shlex
import struct
import subprocess
import sys

import numpy as np

from .denoisers import Denoiser, FixedPointOracle

REQUEST_MAGIC = b"DNZ1"
RESPONSE_MAGIC = b"DNR1"
_HEADER = struct.Struct("<4sIIIf")


class TransportError(RuntimeError):
    """The peer broke the protocol: bad magic, short read, crash or shape mismatch."""


def encode(magic, array, sigma_f):
    rows, cols, ch = array.shape
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    return _HEADER.pack(magic, rows, cols, ch, sigma_f) + payload


def _read_exact(stream, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf.extend(chunk)
    return bytes(buf)


def read_message(stream, magic):
    """Read one message; returns ``(array, sigma_f)`` or ``None`` on clean EOF."""
    head = _read_exact(stream, _HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise TransportError(f"short header: {len(head)} of {_HEADER.size} bytes")
    got, rows, cols, ch, sigma_f = _HEADER.unpack(head)
    if got != magic:
        raise TransportError(f"bad magic {got!r}, expected {magic!r}")
    n = rows * cols * ch * 4
    body = _read_exact(stream, n)
    if len(body) < n:
        raise TransportError(f"short payload: {len(body)} of {n} bytes")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols, ch)
    return arr, sigma_f


class ExternalDenoiser(Denoiser):
    """Client for a denoiser peer process speaking the DNZ1/DNR1 protocol.

    Parameters
    ----------
    command : str or list of str
        Command line of the peer; it is started lazily on the first request.
    sigma_f : float
        Strength parameter forwarded with every request.
    alpha : float, optional
        Demicontraction constant claimed for the peer. Unset by default, in
        which case solvers require an explicit override of the ``w`` check.

    Samples travel as float32, so outputs are float32-exact.
    """

    def __init__(self, command, sigma_f, alpha=None, shape=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.sigma_f = float(sigma_f)
        self.alpha = alpha
        self.shape = shape
        self.oracle = FixedPointOracle.unknown()
        self._proc = None

    def _start(self):
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise TransportError(f"could not start denoiser peer: {exc}") from exc

    def _denoise(self, x):
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        try:
            self._proc.stdin.write(encode(REQUEST_MAGIC, x, self.sigma_f))
            self._proc.stdin.flush()
            msg = read_message(self._proc.stdout, RESPONSE_MAGIC)
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise TransportError(f"denoiser peer failed: {exc}") from exc
        except TransportError:
            self.close()
            raise
        if msg is None:
            self.close()
            raise TransportError("denoiser peer closed the stream")
        out, _ = msg
        if out.shape != x.shape:
            self.close()
            raise TransportError(f"response shape {out.shape} does not match request {x.shape}")
        return out

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_denoiser(command, sigma_f, alpha=None, shape=None):
    return ExternalDenoiser(command, sigma_f, alpha=alpha, shape=shape)


def serve_mock(mode="identity", factor=0.5, fault=None, stdin=None, stdout=None):
    """Reference peer: answer requests until EOF.

    ``mode`` is ``"identity"`` or ``"scale"`` (multiply by ``factor``).
    ``fault`` injects protocol errors for testing: ``"magic"`` sends a wrong
    response magic, ``"truncate"`` sends half the payload and exits.
    """
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        msg = read_message(stdin, REQUEST_MAGIC)
        if msg is None:
            return 0
        arr, sigma_f = msg
        out = arr.astype(np.float32)
        if mode == "scale":
            out = out * np.float32(factor)
        data = encode(RESPONSE_MAGIC, out, sigma_f)
        if fault == "magic":
            data = b"XXXX" + data[4:]
        elif fault == "truncate":
            stdout.write(data[: _HEADER.size + (len(data) - _HEADER.size) // 2])
            stdout.flush()
            return 0
        stdout.write(data)
        stdout.flush()
