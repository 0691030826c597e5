"""Display-chain kernels: spatial blur, frame blending, temporal visual response.

All kernels here describe how a rendered sample's error spreads into what a
viewer perceives: a spatial low-pass for the eye's pixel pooling, an
exponential-moving-average kernel for temporal antialiasing style frame
blending, and a two-channel (sustained low-pass plus transient band-pass)
temporal response. The composed spatio-temporal kernel is what the tile
optimizer thresholds against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidInputError,
    InvalidParameterError,
    TableParseError,
    TableValidationError,
)
from .sequences import FrameSequence

DEFAULT_SIGMA = 2.1
# Fraction of the peak below which spatial taps are dropped. 0.2 keeps a
# 7x7 grid at sigma 2.1.
DEFAULT_TRUNCATION = 0.2
DEFAULT_ALPHA = 0.2
# EMA taps are kept until the raw weight falls below this fraction of alpha.
TAA_TAIL_THRESHOLD = 1e-3
DEFAULT_FRAME_RATE = 60.0
# Sustained-channel decay constant in seconds.
SUSTAINED_TAU = 0.150
# Temporal response window in seconds; 8 taps at 60 Hz.
PERCEPT_SUPPORT_SECONDS = 8.0 / 60.0

TOROIDAL = "toroidal"
CAUSAL = "causal-renormalized"
CAUSAL_ZERO_PAD = "causal-zero-pad"
_POLICIES = (TOROIDAL, CAUSAL, CAUSAL_ZERO_PAD)


@dataclass(frozen=True)
class SpatialKernel:
    """Normalized, truncated 2-d Gaussian on integer pixel offsets."""

    sigma: float
    radius: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        side = 2 * self.radius + 1
        if w.shape != (side, side):
            raise InvalidInputError(f"weights shape {w.shape} does not match radius {self.radius}")
        if not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9):
            raise InvalidInputError("spatial kernel weights must sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def extent(self) -> tuple[int, int]:
        side = 2 * self.radius + 1
        return (side, side)


@dataclass(frozen=True)
class TaaKernel:
    """Causal exponential-moving-average blend, renormalized over its taps.

    Tap j weights the frame j steps in the past by alpha*(1-alpha)^j; the
    truncated taps are rescaled to sum to one.
    """

    alpha: float
    length: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.length,):
            raise InvalidInputError(f"weights shape {w.shape} does not match length {self.length}")
        if not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9):
            raise InvalidInputError("TAA kernel weights must sum to 1")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class TemporalPerceptKernel:
    """Two-channel temporal response sampled at the frame period.

    Channels are stored as (frame offset, weight) pairs. Offsets are frame
    displacements relative to the output frame: offset -j reads the frame j
    steps in the past. Causal kernels use only offsets <= 0; the symmetric
    variant mirrors its support around zero. The sustained channel is a
    normalized low-pass, the transient channel a zero-DC band-pass.
    """

    frame_rate: float
    sustained_offsets: np.ndarray = field(repr=False)
    sustained_weights: np.ndarray = field(repr=False)
    transient_offsets: np.ndarray = field(repr=False)
    transient_weights: np.ndarray = field(repr=False)
    causal: bool = True

    def __post_init__(self):
        so = np.asarray(self.sustained_offsets, dtype=np.int64)
        sw = np.asarray(self.sustained_weights, dtype=np.float64)
        to = np.asarray(self.transient_offsets, dtype=np.int64)
        tw = np.asarray(self.transient_weights, dtype=np.float64)
        if self.frame_rate <= 0:
            raise TableValidationError("frame_rate must be positive")
        if so.shape != sw.shape or to.shape != tw.shape:
            raise InvalidInputError("offset and weight arrays must match in length")
        if so.size == 0:
            raise TableValidationError("sustained channel must not be empty")
        if np.any(sw < 0):
            raise TableValidationError("sustained weights must be non-negative")
        if not math.isclose(float(sw.sum()), 1.0, abs_tol=1e-6):
            raise TableValidationError("sustained weights must sum to 1 within 1e-6")
        if tw.size and abs(float(tw.sum())) > 1e-6:
            raise TableValidationError("transient weights must sum to 0 within 1e-6")
        if self.causal and (np.any(so > 0) or np.any(to > 0)):
            raise TableValidationError("causal kernel offsets must be <= 0")
        for name, off in (("sustained", so), ("transient", to)):
            if off.size != np.unique(off).size:
                raise TableValidationError(f"{name} offsets must be unique")
        object.__setattr__(self, "sustained_offsets", so)
        object.__setattr__(self, "sustained_weights", sw)
        object.__setattr__(self, "transient_offsets", to)
        object.__setattr__(self, "transient_weights", tw)

    @property
    def sustained(self) -> list[tuple[int, float]]:
        return [(int(o), float(w)) for o, w in zip(self.sustained_offsets, self.sustained_weights)]

    @property
    def transient(self) -> list[tuple[int, float]]:
        return [(int(o), float(w)) for o, w in zip(self.transient_offsets, self.transient_weights)]

    @property
    def combined(self) -> list[tuple[int, float]]:
        """Sum of both channels on the union of their supports, offset-sorted."""
        acc: dict[int, float] = {}
        for o, w in self.sustained:
            acc[o] = acc.get(o, 0.0) + w
        for o, w in self.transient:
            acc[o] = acc.get(o, 0.0) + w
        return sorted(acc.items())

    @property
    def dc_gain(self) -> float:
        return float(self.sustained_weights.sum() + (self.transient_weights.sum() if self.transient_weights.size else 0.0))


@dataclass(frozen=True)
class SpatioTemporalKernel:
    """Dense composed kernel over (frame lag, dy, dx) offsets.

    ``weights[i]`` is the 2-d spatial slab for temporal lag ``t_lags[i]``;
    lag j >= 0 reads the frame j steps in the past, negative lags read ahead
    (symmetric temporal factors only). The factor kernels are kept so causal
    application can renormalize its normalized parts near the sequence start.
    """

    weights: np.ndarray = field(repr=False)
    t_lags: np.ndarray = field(repr=False)
    policy: str
    dc_gain: float
    spatial: SpatialKernel | None = None
    temporal: TemporalPerceptKernel | None = None
    taa: TaaKernel | None = None

    def __post_init__(self):
        if self.policy not in _POLICIES:
            raise InvalidParameterError(f"unknown application policy {self.policy!r}; expected one of {_POLICIES}")
        w = np.asarray(self.weights, dtype=np.float64)
        lags = np.asarray(self.t_lags, dtype=np.int64)
        if w.ndim != 3 or w.shape[0] != lags.size:
            raise InvalidInputError("weights must be (lags, ky, kx) matching t_lags")
        if w.shape[1] % 2 == 0 or w.shape[2] % 2 == 0:
            raise InvalidInputError("spatial extent must be odd in both axes")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "t_lags", lags)

    @property
    def extent(self) -> tuple[int, int, int]:
        """(kx, ky, kt)."""
        return (self.weights.shape[2], self.weights.shape[1], self.weights.shape[0])

    @property
    def max_weight(self) -> float:
        return float(np.abs(self.weights).max())


def make_spatial_gaussian(sigma: float = DEFAULT_SIGMA,
                          truncation_threshold: float = DEFAULT_TRUNCATION) -> SpatialKernel:
    """Build a normalized Gaussian truncated where taps become negligible.

    The radius is the smallest r such that the un-normalized Gaussian at
    offset r+1 falls below truncation_threshold times the peak.
    """
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if not 0.0 < truncation_threshold < 1.0:
        raise InvalidParameterError(f"truncation threshold must lie in (0, 1), got {truncation_threshold}")
    r = 0
    while math.exp(-((r + 1) ** 2) / (2.0 * sigma * sigma)) >= truncation_threshold:
        r += 1
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax, indexing="xy")
    data = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma * sigma))
    data /= data.sum()
    return SpatialKernel(sigma=sigma, radius=r, weights=data)


def make_taa_kernel(alpha: float = DEFAULT_ALPHA, length: int | None = None) -> TaaKernel:
    """Build the renormalized EMA blend kernel.

    With no explicit length, taps run until the raw weight alpha*(1-alpha)^j
    drops below 1e-3 * alpha.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if length is None:
        if alpha == 1.0:
            length = 1
        else:
            length = math.ceil(math.log(TAA_TAIL_THRESHOLD) / math.log(1.0 - alpha))
    if length < 1:
        raise InvalidParameterError(f"length must be >= 1, got {length}")
    j = np.arange(length, dtype=np.float64)
    raw = alpha * (1.0 - alpha) ** j
    return TaaKernel(alpha=alpha, length=length, weights=raw / raw.sum())


def make_temporal_percept(frame_rate: float = DEFAULT_FRAME_RATE,
                          source: str | Path = "builtin",
                          *,
                          sustained_tau: float = SUSTAINED_TAU,
                          transient_gain: float = 1.0,
                          support_seconds: float = PERCEPT_SUPPORT_SECONDS) -> TemporalPerceptKernel:
    """Build the two-channel temporal response at the given frame rate.

    The builtin parametric default uses a causal exponential low-pass for the
    sustained channel and its zero-DC first difference for the transient
    channel. Passing a path loads measured channels from a table file instead
    (see parse_kernel_table).
    """
    if frame_rate <= 0:
        raise InvalidParameterError(f"frame rate must be positive, got {frame_rate}")
    if source != "builtin":
        kern = load_kernel_table(source)
        if not math.isclose(kern.frame_rate, frame_rate, rel_tol=1e-6):
            raise TableValidationError(
                f"table frame rate {kern.frame_rate} does not match requested {frame_rate}"
            )
        return kern
    taps = max(1, round(frame_rate * support_seconds))
    dt = 1.0 / frame_rate
    j = np.arange(taps, dtype=np.float64)
    sustained = np.exp(-j * dt / sustained_tau)
    sustained /= sustained.sum()
    diff = sustained.copy()
    diff[1:] -= sustained[:-1]
    diff -= diff.mean()
    transient = transient_gain * diff
    offsets = -np.arange(taps, dtype=np.int64)
    return TemporalPerceptKernel(
        frame_rate=frame_rate,
        sustained_offsets=offsets,
        sustained_weights=sustained,
        transient_offsets=offsets,
        transient_weights=transient,
        causal=True,
    )


def make_temporal_gaussian(sigma: float = DEFAULT_SIGMA,
                           frame_rate: float = DEFAULT_FRAME_RATE,
                           truncation_threshold: float = DEFAULT_TRUNCATION) -> TemporalPerceptKernel:
    """Symmetric Gaussian temporal low-pass, for kernel-shape comparisons.

    Packaged as a sustained-only temporal kernel so it composes and
    renormalizes exactly like the perceptual response.
    """
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    r = 0
    while math.exp(-((r + 1) ** 2) / (2.0 * sigma * sigma)) >= truncation_threshold:
        r += 1
    j = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(j ** 2) / (2.0 * sigma * sigma))
    w /= w.sum()
    return TemporalPerceptKernel(
        frame_rate=frame_rate,
        sustained_offsets=j.astype(np.int64),
        sustained_weights=w,
        transient_offsets=np.empty(0, dtype=np.int64),
        transient_weights=np.empty(0),
        causal=False,
    )


def _convolve_taps(a: list[tuple[int, float]], b: list[tuple[int, float]]) -> list[tuple[int, float]]:
    acc: dict[int, float] = {}
    for la, wa in a:
        for lb, wb in b:
            acc[la + lb] = acc.get(la + lb, 0.0) + wa * wb
    return sorted(acc.items())


def compose(ks: SpatialKernel | None = None,
            kt: TemporalPerceptKernel | None = None,
            ka: TaaKernel | None = None,
            policy: str = TOROIDAL) -> SpatioTemporalKernel:
    """Compose spatial, temporal-response, and blend factors into one kernel.

    Omitted factors are identity (delta) kernels. The temporal part is the
    full discrete convolution of the factor tap lists, so the extent is the
    sum of the factor supports minus their overlaps; the 3-d weights are the
    outer product of the temporal taps with the spatial slab. Offsets are
    stored as lags: lag j weights the frame j steps in the past.
    """
    taps: list[tuple[int, float]] = [(0, 1.0)]
    if kt is not None:
        # Offsets are displacements (<= 0 when causal); lags negate them.
        taps = _convolve_taps(taps, [(-o, w) for o, w in kt.combined])
    if ka is not None:
        taps = _convolve_taps(taps, [(j, float(w)) for j, w in enumerate(ka.weights)])
    if ks is not None:
        spatial = ks.weights
    else:
        spatial = np.ones((1, 1))
    lags = np.array([l for l, _ in taps], dtype=np.int64)
    tw = np.array([w for _, w in taps], dtype=np.float64)
    weights = tw[:, None, None] * spatial[None, :, :]
    dc = 1.0
    for factor_dc in (
        float(spatial.sum()),
        kt.dc_gain if kt is not None else 1.0,
        float(ka.weights.sum()) if ka is not None else 1.0,
    ):
        dc *= factor_dc
    return SpatioTemporalKernel(
        weights=weights,
        t_lags=lags,
        policy=policy,
        dc_gain=dc,
        spatial=ks,
        temporal=kt,
        taa=ka,
    )


def spatial_convolve_frames(values: np.ndarray, ks: SpatialKernel) -> np.ndarray:
    """Toroidal 2-d convolution of every frame with the spatial kernel."""
    t, h, w = values.shape
    kpad = np.zeros((h, w))
    r = ks.radius
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            kpad[oy % h, ox % w] += ks.weights[oy + r, ox + r]
    fk = np.fft.rfft2(kpad)
    return np.fft.irfft2(np.fft.rfft2(values, axes=(1, 2)) * fk[None], s=(h, w), axes=(1, 2))


def temporal_convolve_frames(values: np.ndarray,
                             lags: np.ndarray,
                             weights: np.ndarray,
                             renormalize: bool) -> np.ndarray:
    """Causal-boundary 1-d convolution along the frame axis.

    Taps reaching outside the sequence are dropped; with renormalize the
    remaining weights are rescaled to keep their original sum, which keeps
    normalized kernels normalized near the boundaries.
    """
    t = values.shape[0]
    out = np.zeros_like(values)
    avail = np.zeros(t)
    total = float(np.sum(weights))
    for lag, w in zip(lags, weights):
        lo = max(0, int(lag))
        hi = min(t, t + int(lag))
        if lo >= hi:
            continue
        out[lo:hi] += w * values[lo - lag:hi - lag]
        avail[lo:hi] += w
    if renormalize:
        if np.any(avail == 0.0):
            raise InvalidInputError("cannot renormalize: some frames have no valid taps")
        out *= (total / avail)[:, None, None]
    return out


def causal_matrix(lags: np.ndarray, weights: np.ndarray, frames: int,
                  renormalize: bool) -> np.ndarray:
    """Dense (frames, frames) matrix form of temporal_convolve_frames.

    Row i holds the effective weights applied to each input frame when
    producing output frame i, boundary handling included, so matrix @ seq
    reproduces the convolution exactly.
    """
    m = np.zeros((frames, frames))
    avail = np.zeros(frames)
    total = float(np.sum(weights))
    for lag, w in zip(lags, weights):
        lo = max(0, int(lag))
        hi = min(frames, frames + int(lag))
        for i in range(lo, hi):
            m[i, i - lag] += w
        avail[lo:hi] += w
    if renormalize:
        if np.any(avail == 0.0):
            raise InvalidInputError("cannot renormalize: some frames have no valid taps")
        m *= (total / avail)[:, None]
    return m


def _taa_lags_weights(ka: TaaKernel) -> tuple[np.ndarray, np.ndarray]:
    return np.arange(ka.length, dtype=np.int64), ka.weights


def _percept_channel_lags(offsets: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return -offsets.astype(np.int64), weights


def convolve_sequence(seq: FrameSequence, kernel: SpatioTemporalKernel) -> FrameSequence:
    """Apply the composed kernel to a frame sequence under its policy.

    The toroidal policy wraps all three axes (kernels wider than the
    sequence fold onto it). The causal policies apply the factors in
    blend -> spatial -> temporal-response order, truncating temporal taps at
    the sequence boundaries; causal-renormalized rescales the normalized
    parts (blend and sustained channel) over the taps still available, while
    the zero-DC transient channel is always left truncated as is.
    """
    values = seq.values
    if values.size == 0:
        raise InvalidInputError("cannot convolve an empty sequence")
    if kernel.policy == TOROIDAL:
        out = _toroidal_convolve(values, kernel)
        return type(seq)(out)
    span = int(kernel.t_lags.max() - min(kernel.t_lags.min(), 0)) + 1 if kernel.t_lags.size else 1
    if values.shape[0] < span:
        raise InvalidInputError(
            f"causal application needs at least {span} frames, sequence has {values.shape[0]}"
        )
    if kernel.spatial is None and kernel.temporal is None and kernel.taa is None:
        raise InvalidParameterError("causal application requires the factor kernels")
    renorm = kernel.policy == CAUSAL
    out = values
    if kernel.taa is not None:
        lags, w = _taa_lags_weights(kernel.taa)
        out = temporal_convolve_frames(out, lags, w, renorm)
    if kernel.spatial is not None:
        out = spatial_convolve_frames(out, kernel.spatial)
    if kernel.temporal is not None:
        kt = kernel.temporal
        lags, w = _percept_channel_lags(kt.sustained_offsets, kt.sustained_weights)
        acc = temporal_convolve_frames(out, lags, w, renorm)
        if kt.transient_weights.size:
            lags, w = _percept_channel_lags(kt.transient_offsets, kt.transient_weights)
            acc += temporal_convolve_frames(out, lags, w, False)
        out = acc
    return type(seq)(out)


def _toroidal_convolve(values: np.ndarray, kernel: SpatioTemporalKernel) -> np.ndarray:
    t, h, w = values.shape
    kt, kh, kw = kernel.weights.shape
    ry, rx = kh // 2, kw // 2
    kpad = np.zeros((t, h, w))
    for i in range(kt):
        lag = int(kernel.t_lags[i])
        for oy in range(kh):
            for ox in range(kw):
                kpad[lag % t, (oy - ry) % h, (ox - rx) % w] += kernel.weights[i, oy, ox]
    out = np.fft.irfftn(np.fft.rfftn(values) * np.fft.rfftn(kpad),
                        s=values.shape, axes=(0, 1, 2))
    return out


def parse_kernel_table(text: str) -> TemporalPerceptKernel:
    """Parse a two-channel temporal kernel from its table text.

    Format: '#' starts a comment; a header line
    ``channel <sustained|transient> frame_rate <hz>`` opens a channel block;
    every following ``<offset> <weight>`` pair belongs to that block.
    """
    channels: dict[str, list[tuple[int, float]]] = {}
    rates: dict[str, float] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "channel":
            if len(parts) != 4 or parts[2] != "frame_rate":
                raise TableParseError(f"line {lineno}: expected 'channel <name> frame_rate <hz>'")
            name = parts[1]
            if name not in ("sustained", "transient"):
                raise TableParseError(f"line {lineno}: unknown channel {name!r}")
            if name in channels:
                raise TableParseError(f"line {lineno}: duplicate channel {name!r}")
            try:
                rates[name] = float(parts[3])
            except ValueError:
                raise TableParseError(f"line {lineno}: bad frame rate {parts[3]!r}") from None
            channels[name] = []
            current = name
            continue
        if current is None:
            raise TableParseError(f"line {lineno}: data before any channel header")
        if len(parts) != 2:
            raise TableParseError(f"line {lineno}: expected '<offset> <weight>' pair")
        try:
            offset = int(parts[0])
            weight = float(parts[1])
        except ValueError:
            raise TableParseError(f"line {lineno}: bad offset/weight pair {line!r}") from None
        channels[current].append((offset, weight))
    if "sustained" not in channels:
        raise TableValidationError("table must define a sustained channel")
    if len(set(rates.values())) > 1:
        raise TableValidationError("channel frame rates must agree")
    sus = sorted(channels["sustained"])
    tra = sorted(channels.get("transient", []))
    causal = all(o <= 0 for o, _ in sus) and all(o <= 0 for o, _ in tra)
    return TemporalPerceptKernel(
        frame_rate=rates["sustained"],
        sustained_offsets=np.array([o for o, _ in sus], dtype=np.int64),
        sustained_weights=np.array([w for _, w in sus]),
        transient_offsets=np.array([o for o, _ in tra], dtype=np.int64),
        transient_weights=np.array([w for _, w in tra]),
        causal=causal,
    )


def load_kernel_table(path: str | Path) -> TemporalPerceptKernel:
    """Read and parse a kernel table file."""
    return parse_kernel_table(Path(path).read_text())


def write_kernel_table(kernel: TemporalPerceptKernel, path: str | Path) -> None:
    """Write a temporal kernel in the table format parse_kernel_table reads."""
    lines = ["# two-channel temporal kernel"]
    for name, offs, ws in (
        ("sustained", kernel.sustained_offsets, kernel.sustained_weights),
        ("transient", kernel.transient_offsets, kernel.transient_weights),
    ):
        if name == "transient" and not ws.size:
            continue
        lines.append(f"channel {name} frame_rate {kernel.frame_rate:g}")
        for o, w in zip(offs, ws):
            lines.append(f"{int(o)} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
