"""Sample tile optimization by stochastic sliced-transport gradient descent.

Each stochastic term picks a kernel instance (a center cell, a weight
threshold, a slice direction), gathers the samples of every cell whose
kernel weight clears the threshold, and moves them along the slice so their
1-d projection better matches a matching draw from the target density. In
expectation over centers, thresholds, and directions this descends an upper
bound on the kernel-filtered integration error, which is what pushes the
per-pixel error into high spatio-temporal frequencies.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_update
from .errors import EmptySubsetError, InvalidInputError, InvalidParameterError
from .kernels import SpatioTemporalKernel
from .tile import SampleTile

try:
    from ._batch import accumulate_batch as _accumulate_batch_numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class SliceDirection:
    """Unit vector defining a 1-d projection of the sample domain."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim != 1 or th.size < 1:
            raise InvalidInputError("theta must be a 1-d vector")
        if abs(float(np.linalg.norm(th)) - 1.0) > 1e-12:
            raise InvalidInputError("theta must have unit norm within 1e-12")
        object.__setattr__(self, "theta", th)


@dataclass(frozen=True)
class TargetDensity:
    """Reference distribution the filtered subsets are matched against."""

    kind: str = "uniform-hypercube"
    dim: int = 2

    def __post_init__(self):
        if self.kind != "uniform-hypercube":
            raise InvalidParameterError(f"unsupported target density {self.kind!r}")
        if self.dim < 1:
            raise InvalidParameterError(f"dim must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 10000
    batch_size: int = 4000
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_epsilon: float = 1e-8
    seed: int = 0
    lipschitz_scale: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidParameterError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        for name, beta in (("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)):
            if not 0.0 <= beta < 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1), got {beta}")
        if self.adam_epsilon <= 0:
            raise InvalidParameterError(f"adam_epsilon must be positive, got {self.adam_epsilon}")
        if self.lipschitz_scale <= 0:
            raise InvalidParameterError(f"lipschitz_scale must be positive, got {self.lipschitz_scale}")


@dataclass
class FilteredSubset:
    """Samples of all cells whose folded kernel weight exceeds the threshold.

    Cells are enumerated in the kernel's own support-box scan order (lag
    slowest, then dy, then dx); member k*spp+s is sample slot s of the k-th
    passing cell. flat_members indexes the tile's samples viewed as
    (cells*spp, dim).
    """

    tile: SampleTile
    center: tuple[int, int, int]
    threshold: float
    cells: np.ndarray
    flat_members: np.ndarray

    @property
    def size(self) -> int:
        return int(self.flat_members.size)


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    mean_distance: float
    empty_subsets: int
    batch_size: int


@dataclass
class LogEntry:
    iteration: int
    objective: float
    empty_subsets: int
    wall_ms: float


@dataclass
class OptimizeResult:
    tile: SampleTile
    log: list[LogEntry]
    config: OptimizerConfig


def folded_support(kernel: SpatioTemporalKernel, dims: tuple[int, int, int]):
    """Kernel taps folded onto the tile torus.

    Taps that alias to the same toroidal offset have their weights summed,
    so kernels wider than the tile see exactly the weights the periodic
    tiling realizes. Returns (offsets, weights): offsets is (S, 3) int64 rows
    (dt, dy, dx) canonicalized to [0, dim) per axis in first-occurrence
    support-box order, weights the signed folded values.
    """
    x, y, t = dims
    kt, kh, kw = kernel.weights.shape
    ry, rx = kh // 2, kw // 2
    acc: dict[tuple[int, int, int], float] = {}
    for i in range(kt):
        lag = int(kernel.t_lags[i])
        for oy in range(kh):
            for ox in range(kw):
                w = float(kernel.weights[i, oy, ox])
                if w == 0.0:
                    continue
                key = (lag % t, (oy - ry) % y, (ox - rx) % x)
                acc[key] = acc.get(key, 0.0) + w
    items = [(k, w) for k, w in acc.items() if w != 0.0]
    offsets = np.array([k for k, _ in items], dtype=np.int64).reshape(len(items), 3)
    weights = np.array([w for _, w in items], dtype=np.float64)
    return offsets, weights


def filter_subset(tile: SampleTile, kernel: SpatioTemporalKernel,
                  center: tuple[int, int, int], z: float) -> FilteredSubset:
    """Collect the samples of every cell whose |folded weight| exceeds z.

    center is a (t, y, x) cell index; membership is evaluated on the
    toroidal tile, thresholding the magnitude so negative transient lobes
    still bind their cells.
    """
    x, y, t = tile.dims
    offsets, weights = folded_support(kernel, tile.dims)
    wabs = np.abs(weights)
    wmax = float(wabs.max()) if wabs.size else 0.0
    if z < 0:
        raise InvalidParameterError(f"threshold must be >= 0, got {z}")
    if z >= wmax:
        raise EmptySubsetError(f"threshold {z} is not below the folded peak weight {wmax}")
    ct, cy, cx = center
    mask = wabs > z
    sel = offsets[mask]
    cells = np.empty_like(sel)
    cells[:, 0] = (ct - sel[:, 0]) % t
    cells[:, 1] = (cy - sel[:, 1]) % y
    cells[:, 2] = (cx - sel[:, 2]) % x
    flat_cells = (cells[:, 0] * y + cells[:, 1]) * x + cells[:, 2]
    spp = tile.spp
    flat_members = (flat_cells[:, None] * spp + np.arange(spp, dtype=np.int64)[None, :]).ravel()
    return FilteredSubset(tile=tile, center=(ct % t, cy % y, cx % x), threshold=float(z),
                          cells=cells, flat_members=flat_members)


def project(subset: FilteredSubset, direction: SliceDirection) -> np.ndarray:
    """Sorted 1-d projections of the subset members onto the direction.

    The sort is stable, so equal projections keep (cell, slot) order.
    """
    pts = subset.tile.samples.reshape(-1, subset.tile.dim)[subset.flat_members]
    proj = pts @ direction.theta
    order = np.argsort(proj, kind="stable")
    return proj[order]


def target_projection(count: int, direction: SliceDirection, density: TargetDensity,
                      rng: np.random.Generator) -> np.ndarray:
    """Sorted projections of count fresh draws from the target density."""
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    if density.dim != direction.theta.size:
        raise InvalidInputError(
            f"density dim {density.dim} does not match direction dim {direction.theta.size}"
        )
    pts = rng.random((count, density.dim))
    return np.sort(pts @ direction.theta, kind="stable")


def w1d(xs: np.ndarray, ys: np.ndarray) -> float:
    """1-d 2-Wasserstein distance between equal-count sorted point sets.

    With both inputs sorted the monotone pairing is optimal, giving
    sqrt(mean((xs - ys)^2)).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or ys.ndim != 1 or xs.size != ys.size:
        raise InvalidInputError(f"point lists must be 1-d and equal length, got {xs.shape} vs {ys.shape}")
    if xs.size == 0:
        raise InvalidInputError("point lists must not be empty")
    if np.any(np.diff(xs) < 0) or np.any(np.diff(ys) < 0):
        raise InvalidInputError("w1d expects both point lists sorted ascending")
    d = xs - ys
    return float(np.sqrt(np.mean(d * d)))


def w1d_gradient(subset: FilteredSubset, direction: SliceDirection,
                 targets: np.ndarray) -> np.ndarray:
    """Gradient of the squared sliced distance w.r.t. the member coordinates.

    For the rank-k pair the contribution is (2/m)*(x_(k) - y_(k)) * theta,
    returned as an (m, dim) array aligned with the subset's member order.
    """
    targets = np.asarray(targets, dtype=np.float64)
    m = subset.size
    if targets.shape != (m,):
        raise InvalidInputError(f"targets must have shape ({m},), got {targets.shape}")
    if np.any(np.diff(targets) < 0):
        raise InvalidInputError("targets must be sorted ascending")
    pts = subset.tile.samples.reshape(-1, subset.tile.dim)[subset.flat_members]
    proj = pts @ direction.theta
    order = np.argsort(proj, kind="stable")
    diff = proj[order] - targets
    grad = np.zeros((m, direction.theta.size))
    grad[order] = (2.0 / m) * diff[:, None] * direction.theta[None, :]
    return grad


def _draw_batch(dims: tuple[int, int, int], spp: int, dim: int, batch_size: int,
                offsets: np.ndarray, weights: np.ndarray, rng: np.random.Generator):
    """Draw one batch of kernel instances plus exactly enough target points.

    Subset sizes are known from the threshold alone (count of folded weights
    above z), so the target block is drawn flat and split by prefix sums.
    """
    x, y, t = dims
    wabs = np.abs(weights)
    wmax = float(wabs.max())
    centers = rng.integers(0, np.array([t, y, x]), size=(batch_size, 3), dtype=np.int64)
    zs = rng.uniform(0.0, wmax, size=batch_size)
    thetas = rng.standard_normal((batch_size, dim))
    norms = np.linalg.norm(thetas, axis=1, keepdims=True)
    bad = norms[:, 0] == 0.0
    if np.any(bad):
        thetas[bad] = 0.0
        thetas[bad, 0] = 1.0
        norms[bad] = 1.0
    thetas /= norms
    sorted_wabs = np.sort(wabs)
    counts = (wabs.size - np.searchsorted(sorted_wabs, zs, side="right")) * spp
    starts = np.zeros(batch_size + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    targets = rng.random((int(starts[-1]), dim))
    return centers, zs, thetas, counts, starts, targets


def _dot_rows(rows: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # Left-to-right accumulation per component, matching the compiled loop
    # bitwise (no BLAS reassociation or fused multiply-add).
    acc = rows[:, 0] * theta[0]
    for j in range(1, theta.size):
        acc = acc + rows[:, j] * theta[j]
    return acc


def _accumulate_batch_numpy(payload, grad, offsets, weights_abs, dims_tyx, spp,
                            centers, zs, thetas, starts, targets, dists):
    """Portable fallback mirroring the compiled batch accumulator bitwise."""
    t, y, x = dims_tyx
    empties = 0
    for e in range(centers.shape[0]):
        mask = weights_abs > zs[e]
        if not mask.any():
            empties += 1
            dists[e] = 0.0
            continue
        sel = offsets[mask]
        ct, cy, cx = centers[e]
        flat_cells = (((ct - sel[:, 0]) % t) * y + ((cy - sel[:, 1]) % y)) * x + ((cx - sel[:, 2]) % x)
        members = (flat_cells[:, None] * spp + np.arange(spp, dtype=np.int64)[None, :]).ravel()
        m = members.size
        theta = thetas[e]
        proj = _dot_rows(payload[members], theta)
        order = np.argsort(proj, kind="stable")
        tproj = np.sort(_dot_rows(targets[starts[e]:starts[e] + m], theta), kind="stable")
        diff = proj[order] - tproj
        scale = 2.0 / m
        grad[members[order]] += scale * diff[:, None] * theta[None, :]
        # add.accumulate sums strictly left to right, like the compiled loop.
        sq = float(np.add.accumulate(diff * diff)[-1])
        dists[e] = math.sqrt(sq / m)
    return empties


def estimate_gradient(tile: SampleTile, kernel: SpatioTemporalKernel,
                      batch_size: int, rng: np.random.Generator) -> GradientEstimate:
    """Stochastic gradient of the sliced-transport objective over one batch.

    Every batch element draws a center uniformly over the tile, a threshold
    uniformly below the folded peak weight, and a direction uniformly on the
    unit sphere, then scatters the monotone-pairing gradient onto the subset
    members. The accumulated field is divided by the batch size. Elements
    are consumed in a fixed order from the passed generator, so a fixed
    generator state reproduces the gradient bitwise.
    """
    if batch_size < 1:
        raise InvalidParameterError(f"batch_size must be >= 1, got {batch_size}")
    offsets, weights = folded_support(kernel, tile.dims)
    if offsets.size == 0:
        raise InvalidInputError("kernel has no non-zero taps")
    x, y, t = tile.dims
    centers, zs, thetas, counts, starts, targets = _draw_batch(
        tile.dims, tile.spp, tile.dim, batch_size, offsets, weights, rng)
    payload = tile.samples.reshape(-1, tile.dim)
    grad = np.zeros_like(payload)
    dists = np.zeros(batch_size)
    wabs = np.abs(weights)
    if _HAVE_NUMBA:
        empties = _accumulate_batch_numba(payload, grad, offsets, wabs,
                                          np.array([t, y, x], dtype=np.int64), tile.spp,
                                          centers, zs, thetas, starts, targets, dists)
    else:
        empties = _accumulate_batch_numpy(payload, grad, offsets, wabs, (t, y, x), tile.spp,
                                          centers, zs, thetas, starts, targets, dists)
    grad /= batch_size
    return GradientEstimate(
        gradient=grad.reshape(tile.samples.shape),
        mean_distance=float(dists.mean()),
        empty_subsets=int(empties),
        batch_size=batch_size,
    )


def reflect_unit(values: np.ndarray) -> np.ndarray:
    """Reflect arbitrary reals into [0, 1), preserving the uniform measure."""
    v = np.mod(values, 2.0)
    v = np.where(v >= 1.0, 2.0 - v, v)
    return np.minimum(v, np.nextafter(1.0, 0.0))


_GRAD_PHASE = 1


def optimize(tile: SampleTile, kernel: SpatioTemporalKernel, config: OptimizerConfig,
             callback=None) -> OptimizeResult:
    """Run Adam on the tile coordinates under the stochastic sliced gradient.

    The input tile provides the starting coordinates and is not modified.
    Per-iteration randomness comes from a counter-keyed Philox stream
    (key = config.seed, counter = iteration), so results do not depend on
    how work is scheduled. The logged objective is the batch-mean sliced
    distance times config.lipschitz_scale; the scale never touches the
    gradient, so it cannot change the optimized tile.
    """
    kx, ky, kt = kernel.extent
    x, y, t = tile.dims
    if min(x / kx, y / ky, t / kt) < 10.0:
        warnings.warn(
            f"tile dims {tile.dims} are less than 10x the kernel extent ({kx}, {ky}, {kt}); "
            "periodic tiling artifacts may become visible",
            stacklevel=2,
        )
    work = tile.copy()
    payload_shape = work.samples.shape
    adam = AdamState.zeros(payload_shape)
    log: list[LogEntry] = []
    for it in range(config.iterations):
        t0 = time.perf_counter()
        it_rng = np.random.Generator(
            np.random.Philox(key=config.seed, counter=[0, 0, it + 1, _GRAD_PHASE]))
        est = estimate_gradient(work, kernel, config.batch_size, it_rng)
        delta = adam_update(adam, est.gradient, config.learning_rate,
                            config.adam_beta1, config.adam_beta2, config.adam_epsilon)
        work.samples = reflect_unit(work.samples + delta)
        wall_ms = (time.perf_counter() - t0) * 1e3
        entry = LogEntry(
            iteration=it,
            objective=config.lipschitz_scale * est.mean_distance,
            empty_subsets=est.empty_subsets,
            wall_ms=wall_ms,
        )
        log.append(entry)
        if callback is not None:
            callback(entry, work)
    return OptimizeResult(tile=work, log=log, config=config)
