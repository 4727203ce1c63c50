"""Binary PGM (P5, 8-bit) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IngestError


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a (height, width) uint8 array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise IngestError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise IngestError(f"{path}: truncated PGM header")
        tokens.append(data[i:j])
        i = j
    i += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise IngestError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise IngestError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=i)
    if pixels.size != width * height:
        raise IngestError(f"{path}: pixel data truncated")
    return pixels.reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
