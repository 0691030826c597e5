"""Sample tile storage: seeded initialization and a bit-exact file format."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidParameterError,
    MagicMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

TILE_MAGIC = b"STBNTILE"
TILE_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIQ")  # magic, version, X, Y, T, spp, dim, seed
HEADER_SIZE = _HEADER.size
_SEED_MASK = (1 << 64) - 1
# Largest float32 below 1.0; keeps persisted coordinates inside [0, 1).
_F32_BELOW_ONE = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass(frozen=True)
class CellIndex:
    """Integer cell address; wraps toroidally when resolved against a tile."""

    x: int
    y: int
    t: int

    def wrapped(self, dims: tuple[int, int, int]) -> "CellIndex":
        x, y, t = dims
        return CellIndex(self.x % x, self.y % y, self.t % t)


@dataclass
class SampleTile:
    """A (X, Y, T) grid of cells, each holding spp samples in [0, 1)^dim.

    Samples are stored cell-major as a (T, Y, X, spp, dim) float64 array,
    frame index slowest. The seed records how the initial coordinates were
    drawn.
    """

    samples: np.ndarray
    seed: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 5:
            raise InvalidParameterError(
                f"samples must be (T, Y, X, spp, dim), got shape {self.samples.shape}"
            )
        if min(self.samples.shape) < 1:
            raise InvalidParameterError(f"all tile dimensions must be >= 1, got {self.samples.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(X, Y, T)."""
        t, y, x = self.samples.shape[:3]
        return (x, y, t)

    @property
    def spp(self) -> int:
        return self.samples.shape[3]

    @property
    def dim(self) -> int:
        return self.samples.shape[4]

    def copy(self) -> "SampleTile":
        return SampleTile(self.samples.copy(), self.seed)


def init_random(dims: tuple[int, int, int], spp: int, dim: int, seed: int) -> SampleTile:
    """Fill a tile with independent uniforms from a counter-based generator.

    The generator is Philox (numpy's Philox4x32-10) keyed directly with the
    seed, so the same seed yields the same tile on every platform.
    """
    x, y, t = dims
    for name, v in (("X", x), ("Y", y), ("T", t), ("spp", spp), ("dim", dim)):
        if v < 1:
            raise InvalidParameterError(f"{name} must be >= 1, got {v}")
    rng = np.random.Generator(np.random.Philox(key=seed & _SEED_MASK))
    samples = rng.random((t, y, x, spp, dim))
    return SampleTile(samples=samples, seed=seed & _SEED_MASK)


def samples_in_cell(tile: SampleTile, cell: CellIndex | tuple[int, int, int]) -> np.ndarray:
    """Mutable (spp, dim) view of one cell's samples; the index wraps."""
    if isinstance(cell, CellIndex):
        cx, cy, ct = cell.x, cell.y, cell.t
    else:
        cx, cy, ct = cell
    x, y, t = tile.dims
    return tile.samples[ct % t, cy % y, cx % x]


def write_tile(tile: SampleTile, sink) -> None:
    """Serialize the tile: 40-byte header then float32 little-endian payload.

    Payload order is (t, y, x, sample, component) with t slowest. Values are
    clamped to the largest float32 below 1 so the round trip stays in [0, 1).
    """
    x, y, t = tile.dims
    header = _HEADER.pack(TILE_MAGIC, TILE_VERSION, x, y, t, tile.spp, tile.dim, tile.seed & _SEED_MASK)
    payload = np.minimum(tile.samples.astype("<f4"), _F32_BELOW_ONE)
    if hasattr(sink, "write"):
        sink.write(header)
        sink.write(payload.tobytes())
    else:
        with open(sink, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())


def read_tile(source) -> SampleTile:
    """Read a tile written by write_tile, validating magic, version, length."""
    if hasattr(source, "read"):
        return _read_stream(source)
    with open(source, "rb") as fh:
        return _read_stream(fh)


def _read_stream(fh) -> SampleTile:
    header = fh.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise TruncatedPayloadError(f"file ends inside the {HEADER_SIZE}-byte header")
    magic, version, x, y, t, spp, dim, seed = _HEADER.unpack(header)
    if magic != TILE_MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {TILE_MAGIC!r}")
    if version != TILE_VERSION:
        raise UnsupportedVersionError(f"unsupported tile version {version}, expected {TILE_VERSION}")
    if min(x, y, t, spp, dim) < 1:
        raise TruncatedPayloadError(f"header declares a zero-sized tile ({x}x{y}x{t}, spp={spp}, dim={dim})")
    count = t * y * x * spp * dim
    raw = fh.read(4 * count)
    if len(raw) < 4 * count:
        raise TruncatedPayloadError(f"payload has {len(raw)} bytes, header promises {4 * count}")
    samples = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(t, y, x, spp, dim)
    return SampleTile(samples=samples, seed=seed)


def tile_bytes(tile: SampleTile) -> bytes:
    """The exact serialized form of the tile."""
    buf = io.BytesIO()
    write_tile(tile, buf)
    return buf.getvalue()


def meta_sidecar_path(tile_path: str | Path) -> Path:
    """Path of the JSON sidecar describing how a tile file was produced."""
    p = Path(tile_path)
    return p.with_name(p.name + ".meta.json")
