"""Binary PGM (Netpbm P5) reader/writer.

Lossless for integer arrays in [0, 65535]; maxval is 255 when the data fits
in a byte, 65535 otherwise (two-byte samples are big-endian per the spec).
"""

import numpy as np

from .errors import IoError, MalformedHeader, TruncatedData


def write_pgm(path, array):
    array = np.asarray(array)
    if array.ndim != 2:
        raise IoError(f"expected a 2D array, got shape {array.shape}")
    data = np.rint(array).astype(np.int64)
    if data.min() < 0 or data.max() > 65535:
        raise IoError("values must lie in [0, 65535]")
    maxval = 255 if data.max() <= 255 else 65535
    h, w = data.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval == 255:
        payload = data.astype(np.uint8).tobytes()
    else:
        payload = data.astype(">u2").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _read_token(fh):
    # tokens are separated by whitespace; '#' starts a comment to end of line
    token = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise MalformedHeader("unexpected end of file in header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pgm(path):
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    with fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise MalformedHeader(f"{path}: not a binary PGM (magic {magic!r})")
        try:
            width = int(_read_token(fh))
            height = int(_read_token(fh))
            maxval = int(_read_token(fh))
        except ValueError as exc:
            raise MalformedHeader(f"{path}: non-numeric header field") from exc
        if width <= 0 or height <= 0 or not (0 < maxval < 65536):
            raise MalformedHeader(
                f"{path}: bad dimensions or maxval ({width}x{height}, {maxval})"
            )
        itemsize = 1 if maxval <= 255 else 2
        expected = width * height * itemsize
        payload = fh.read(expected)
        if len(payload) != expected:
            raise TruncatedData(
                f"{path}: expected {expected} payload bytes, got {len(payload)}"
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
        return data.astype(np.int64)
