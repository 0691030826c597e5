"""Minimal grayscale PFM image I/O for frame and spectrum exports."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInputError


def write_pfm(image: np.ndarray, path: str | Path) -> None:
    """Write a 2-d float array as a little-endian grayscale PFM."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"PFM writer expects a 2-d image, got shape {a.shape}")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM stores rows bottom-up.
        fh.write(a[::-1].astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM written by write_pfm (or any Pf-format file)."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf",):
        raise InvalidInputError(f"{path}: not a grayscale PFM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise InvalidInputError(f"{path}: malformed PFM header") from None
    dtype = "<f4" if scale < 0 else ">f4"
    pixels = np.frombuffer(parts[3][: 4 * w * h], dtype=dtype)
    if pixels.size < w * h:
        raise InvalidInputError(f"{path}: PFM payload truncated")
    return pixels.reshape(h, w)[::-1].astype(np.float64)


def write_sequence(values: np.ndarray, directory: str | Path, prefix: str = "frame") -> list[Path]:
    """Write each frame of a (frames, h, w) stack as <prefix>_NNNN.pfm."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(values):
        p = directory / f"{prefix}_{i:04d}.pfm"
        write_pfm(frame, p)
        paths.append(p)
    return paths


def read_sequence(directory: str | Path, prefix: str = "frame") -> np.ndarray:
    """Read back a stack written by write_sequence, in frame order."""
    directory = Path(directory)
    paths = sorted(directory.glob(f"{prefix}_*.pfm"))
    if not paths:
        raise InvalidInputError(f"no {prefix}_*.pfm files in {directory}")
    return np.stack([read_pfm(p) for p in paths])
