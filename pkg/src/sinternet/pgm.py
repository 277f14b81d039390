"""Binary PGM (P5) reading and writing for field rasters.

Fields hold values in [0,1]; pixels are stored as round(255*value) with
maxval 255. The reader tolerates comments and arbitrary whitespace in the
header, as the PNM spec allows.
"""

import numpy as np

__all__ = ["read_pgm", "write_pgm"]


def write_pgm(path, field: np.ndarray) -> None:
    if field.ndim != 2:
        raise ValueError(f"PGM needs a 2-D field, got shape {field.shape}")
    h, w = field.shape
    pixels = np.rint(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def _header_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("unexpected end of PGM header")
        yield data[start:pos], pos + 1  # +1 swallows the single ws after a token


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = _header_tokens(data)
    magic, _ = next(tokens)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    (w, _), (h, _), (maxval, end) = (next(tokens) for _ in range(3))
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    raster = data[end:end + w * h]
    if len(raster) < w * h:
        raise ValueError(f"{path}: truncated raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return (pixels.astype(np.float32) / 255.0)
