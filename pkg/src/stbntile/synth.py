"""Analytic test scenes, a tile-driven mini-renderer, and per-pixel candidate
selection against the perceptual metric."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .kernels import SpatialKernel, TaaKernel, TemporalPerceptKernel, causal_matrix, spatial_convolve_frames
from .sequences import FrameSequence
from .tile import SampleTile


@dataclass(frozen=True)
class TestScene:
    """An integrand over (pixel x, pixel y, frame t, payload u) with a known mean.

    integrand(x, y, t, u) broadcasts x, y, t against the leading shape of u,
    whose last axis holds the payload coordinates. analytic_mean(x, y, t) is
    the exact integral over the payload domain. payload_lipschitz bounds the
    payload gradient for two payload dimensions (inf when discontinuous).
    """

    __test__ = False  # keep pytest from collecting this despite the name

    name: str
    integrand: Callable[..., np.ndarray]
    analytic_mean: Callable[..., np.ndarray]
    payload_lipschitz: float


def _ramp_scene() -> TestScene:
    # Drift slow enough that EMA lag bias stays below 1-spp filtered noise.
    base, gx, gt, amp = 0.25, 0.01, 0.0005, 0.25

    def mean(x, y, t):
        x, y, t = np.asarray(x, dtype=np.float64), np.asarray(y), np.asarray(t, dtype=np.float64)
        return base + gx * x + gt * t + 0.0 * np.asarray(y, dtype=np.float64)

    def integrand(x, y, t, u):
        u = np.asarray(u, dtype=np.float64)
        return mean(x, y, t) + amp * np.sum(u - 0.5, axis=-1)

    return TestScene("ramp", integrand, mean, payload_lipschitz=amp * np.sqrt(2.0))


def _blob_scene() -> TestScene:
    bg, height, sigma = 0.2, 0.8, 6.0
    # Sub-pixel per-frame motion keeps EMA ghosting below the noise level.
    cx0, cy0, vx, vy = 16.0, 16.0, 0.02, 0.008
    amp = 0.25

    def mean(x, y, t):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        dx = x - (cx0 + vx * t)
        dy = y - (cy0 + vy * t)
        return bg + height * np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))

    def payload(u):
        u = np.asarray(u, dtype=np.float64)
        resp = np.sin(2.0 * np.pi * u[..., 0])
        if u.shape[-1] >= 2:
            resp = resp * np.cos(np.pi * u[..., 1])
        return amp * resp

    def integrand(x, y, t, u):
        return mean(x, y, t) + payload(u)

    lip = amp * float(np.hypot(2.0 * np.pi, np.pi))
    return TestScene("blob", integrand, mean, payload_lipschitz=lip)


def _step_scene() -> TestScene:
    level, amp, tau = 0.5, 0.5, 0.5

    def mean(x, y, t):
        return level + 0.0 * (np.asarray(x, dtype=np.float64)
                              + np.asarray(y, dtype=np.float64)
                              + np.asarray(t, dtype=np.float64))

    def integrand(x, y, t, u):
        u = np.asarray(u, dtype=np.float64)
        ind = (u[..., 0] < tau).astype(np.float64)
        return mean(x, y, t) + amp * (ind - tau)

    return TestScene("step", integrand, mean, payload_lipschitz=float("inf"))


def _constant_scene() -> TestScene:
    level = 0.5

    def mean(x, y, t):
        return level + 0.0 * (np.asarray(x, dtype=np.float64)
                              + np.asarray(y, dtype=np.float64)
                              + np.asarray(t, dtype=np.float64))

    def integrand(x, y, t, u):
        u = np.asarray(u, dtype=np.float64)
        return mean(x, y, t) + 0.0 * u[..., 0]

    return TestScene("constant", integrand, mean, payload_lipschitz=0.0)


def builtin_scenes() -> dict[str, TestScene]:
    """The four analytic scenes, keyed by name.

    constant has no payload dependence; ramp is linear in pixel, frame, and
    payload; blob is a translating Gaussian bump with a smooth payload
    response; step's payload response is discontinuous, deliberately outside
    the smoothness the optimizer's error bound assumes.
    """
    scenes = [_constant_scene(), _ramp_scene(), _blob_scene(), _step_scene()]
    return {s.name: s for s in scenes}


def get_scene(name: str) -> TestScene:
    scenes = builtin_scenes()
    if name not in scenes:
        raise InvalidParameterError(f"unknown scene {name!r}; available: {sorted(scenes)}")
    return scenes[name]


def render_with_tile(scene: TestScene, tile: SampleTile,
                     image: tuple[int, int] | None = None, frames: int = 24) -> FrameSequence:
    """Monte Carlo render: each pixel averages the integrand over its cell's samples.

    The tile repeats toroidally over the image plane and the frame axis.
    image is (width, height); it defaults to the tile's spatial size.
    """
    tx, ty, tt = tile.dims
    w, h = image if image is not None else (tx, ty)
    if w < 1 or h < 1 or frames < 1:
        raise InvalidParameterError(f"image {w}x{h} with {frames} frames is not renderable")
    idx_y = np.arange(h) % ty
    idx_x = np.arange(w) % tx
    xs = np.arange(w, dtype=np.float64)[None, :, None]
    ys = np.arange(h, dtype=np.float64)[:, None, None]
    out = np.empty((frames, h, w))
    for t in range(frames):
        u = tile.samples[t % tt][np.ix_(idx_y, idx_x)]
        vals = scene.integrand(xs, ys, float(t), u)
        out[t] = vals.mean(axis=-1)
    return FrameSequence(out)


def reference_sequence(scene: TestScene, image: tuple[int, int], frames: int) -> FrameSequence:
    """The scene's analytic mean sampled at every pixel and frame."""
    w, h = image
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    out = np.empty((frames, h, w))
    for t in range(frames):
        out[t] = np.broadcast_to(scene.analytic_mean(xs, ys, float(t)), (h, w))
    return FrameSequence(out)


def payload_mean_quadrature(scene: TestScene, x: float, y: float, t: float,
                            dim: int = 2, resolution: int = 512) -> float:
    """Midpoint-rule payload integral at one pixel, for checking analytic_mean."""
    g = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    if dim == 1:
        u = g[:, None]
    elif dim == 2:
        uu, vv = np.meshgrid(g, g, indexing="ij")
        u = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    else:
        raise InvalidParameterError("quadrature helper supports dim 1 or 2")
    return float(np.mean(scene.integrand(x, y, t, u)))


@dataclass
class CandidateBank:
    """Per pixel-frame candidate payloads and the currently chosen indices."""

    payloads: np.ndarray  # (frames, height, width, candidates, dim)
    chosen: np.ndarray  # (frames, height, width) int64
    seed: int

    def __post_init__(self):
        self.payloads = np.asarray(self.payloads, dtype=np.float64)
        self.chosen = np.asarray(self.chosen, dtype=np.int64)
        if self.payloads.ndim != 5:
            raise InvalidInputError(
                f"payloads must be (frames, h, w, candidates, dim), got {self.payloads.shape}")
        if self.chosen.shape != self.payloads.shape[:3]:
            raise InvalidInputError("chosen indices must cover every pixel-frame")

    @property
    def candidates(self) -> int:
        return self.payloads.shape[3]


def random_candidate_bank(image: tuple[int, int], frames: int, candidates: int,
                          dim: int, seed: int) -> CandidateBank:
    """Independent uniform candidate payloads from a counter-based generator."""
    w, h = image
    if min(w, h, frames, candidates, dim) < 1:
        raise InvalidParameterError("all bank dimensions must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
    payloads = rng.random((frames, h, w, candidates, dim))
    chosen = np.zeros((frames, h, w), dtype=np.int64)
    return CandidateBank(payloads=payloads, chosen=chosen, seed=seed)


@dataclass
class VerticalResult:
    bank: CandidateBank
    objectives: list[float]  # L1 objective before sweep 1 and after each sweep
    rendered: FrameSequence


_VERTICAL_PHASE = 3


def aposteriori_vertical(scene: TestScene, bank: CandidateBank,
                         ks: SpatialKernel | None = None,
                         kt: TemporalPerceptKernel | None = None,
                         taa: TaaKernel | None = None,
                         sweeps: int = 3, seed: int = 0) -> VerticalResult:
    """Greedy per-pixel candidate selection under the perceptual L1 objective.

    Coordinate descent over pixel-frames in a seeded random order: each visit
    keeps the candidate minimizing the L1 norm of the perceptually filtered
    error given all other choices fixed. Changing one raw pixel only moves
    the filtered error inside the kernel support, so the objective update is
    evaluated on that neighborhood alone. The objective never increases.
    """
    t_n, h, w, m, dim = bank.payloads.shape
    if sweeps < 0:
        raise InvalidParameterError(f"sweeps must be >= 0, got {sweeps}")
    patch = ks.weights if ks is not None else np.ones((1, 1))
    r = patch.shape[0] // 2
    if patch.shape[0] > h or patch.shape[1] > w:
        raise InvalidInputError("image smaller than the spatial kernel patch")

    xs = np.arange(w, dtype=np.float64)[None, :, None]
    ys = np.arange(h, dtype=np.float64)[:, None, None]
    values = np.empty((t_n, h, w, m))
    for t in range(t_n):
        values[t] = scene.integrand(xs, ys, float(t), bank.payloads[t])

    chosen = bank.chosen.copy()
    rendered = np.take_along_axis(values, chosen[..., None], axis=-1)[..., 0]
    ref = reference_sequence(scene, (w, h), t_n).values

    blend = causal_matrix(np.arange(taa.length, dtype=np.int64), taa.weights, t_n, True) \
        if taa is not None else np.eye(t_n)
    if kt is not None:
        resp = causal_matrix(-kt.sustained_offsets, kt.sustained_weights, t_n, True)
        if kt.transient_weights.size:
            resp += causal_matrix(-kt.transient_offsets, kt.transient_weights, t_n, False)
    else:
        resp = np.eye(t_n)
    temporal = resp @ blend  # raw frame -> error frame weights

    def spatial(vals):
        return spatial_convolve_frames(vals, ks) if ks is not None else vals

    eps = np.einsum("ts,shw->thw", temporal, spatial(rendered)) \
        - np.einsum("ts,shw->thw", resp, spatial(ref))
    objective = float(np.abs(eps).sum())
    objectives = [objective]

    # Per source frame: the error frames it can reach.
    reach = [np.nonzero(temporal[:, s])[0] for s in range(t_n)]
    dy = np.arange(-r, r + 1)
    for sweep in range(sweeps):
        rng = np.random.Generator(
            np.random.Philox(key=bank.seed ^ seed, counter=[0, 0, sweep + 1, _VERTICAL_PHASE]))
        for flat in rng.permutation(t_n * h * w):
            t0, rest = divmod(int(flat), h * w)
            y0, x0 = divmod(rest, w)
            rows = reach[t0]
            if rows.size == 0:
                continue
            ys_idx = (y0 + dy) % h
            xs_idx = (x0 + dy) % w
            local = eps[np.ix_(rows, ys_idx, xs_idx)]
            weights = temporal[rows, t0][:, None, None] * patch[None, :, :]
            delta = values[t0, y0, x0] - rendered[t0, y0, x0]
            cand = np.abs(local[None] + delta[:, None, None, None] * weights[None]).sum(axis=(1, 2, 3))
            cur = int(chosen[t0, y0, x0])
            best = int(np.argmin(cand))
            if cand[best] < cand[cur]:
                objective += float(cand[best] - cand[cur])
                eps[np.ix_(rows, ys_idx, xs_idx)] = local + delta[best] * weights
                rendered[t0, y0, x0] = values[t0, y0, x0, best]
                chosen[t0, y0, x0] = best
        objectives.append(objective)

    out_bank = CandidateBank(payloads=bank.payloads, chosen=chosen, seed=bank.seed)
    return VerticalResult(bank=out_bank, objectives=objectives, rendered=FrameSequence(rendered))
