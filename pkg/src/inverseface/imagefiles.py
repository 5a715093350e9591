"""Binary PPM (P6) image and PGM (P5) mask files, maxval 255.

Headers are written in one canonical form so outputs are byte-exact and
usable as golden files.  Masks use 255 = inside, 0 = outside.
"""

from __future__ import annotations

import numpy as np

from .binio import FormatError, read_exact


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 image")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("expected (H, W) mask")
    data = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _read_header(f, magic: bytes):
    if f.read(2) != magic:
        raise FormatError(f"not a {magic.decode()} file")

    def token():
        # Skip whitespace and '#' comment lines, then read one token.
        tok = b""
        while True:
            ch = f.read(1)
            if ch == b"":
                raise FormatError("truncated header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = f.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    w = int(token())
    h = int(token())
    maxval = int(token())
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    return w, h


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        data = read_exact(f, w * h * 3)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        data = read_exact(f, w * h)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
