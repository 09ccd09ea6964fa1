"""Binary PPM (P6) / PGM (P5) image files, 8-bit.

Quantization rule: byte = floor(value * 255 + 0.5), values clipped to [0, 1].
"""

from __future__ import annotations

import numpy as np


def quantize(img: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    """Write a channels-first (3, H, W) image in [0, 1] as binary PPM."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {tuple(img.shape)}")
    _, h, w = img.shape
    raw = quantize(img).transpose(1, 2, 0)  # HWC for the pixel stream
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """Write a (H, W) or (1, H, W) grayscale image in [0, 1] as binary PGM."""
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise ValueError(f"expected single channel, got shape {tuple(img.shape)}")
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"expected (H, W) image, got shape {tuple(img.shape)}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantize(img).tobytes())


def _read_header(f, magic: bytes):
    if f.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only 8-bit files supported, got maxval {maxval}")
    return w, h


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a (3, H, W) float32 array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    if raw.size != w * h * 3:
        raise ValueError(f"truncated pixel data in {path}")
    return dequantize(raw.reshape(h, w, 3).transpose(2, 0, 1))


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a (1, H, W) float32 array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        raw = np.frombuffer(f.read(w * h), dtype=np.uint8)
    if raw.size != w * h:
        raise ValueError(f"truncated pixel data in {path}")
    return dequantize(raw.reshape(1, h, w))
