"""Perceptual display-chain evaluation: frame blending, filtered error, spectra."""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .kernels import (
    SpatialKernel,
    TaaKernel,
    TemporalPerceptKernel,
    spatial_convolve_frames,
    temporal_convolve_frames,
)
from .sequences import ErrorSequence, FrameSequence, SpectrumImage

PRELMSE_FLOOR = 0.01
DEFAULT_METRIC_FRAME = 16


def apply_taa(seq: FrameSequence, kernel: TaaKernel) -> FrameSequence:
    """Blend each frame with its predecessors using the EMA kernel.

    Near the sequence start, where taps would reach before frame 0, the
    available weights are renormalized; frame 0 is returned unchanged.
    """
    lags = np.arange(kernel.length, dtype=np.int64)
    out = temporal_convolve_frames(seq.values, lags, kernel.weights, renormalize=True)
    return FrameSequence(out)


def filter_sequence(seq: FrameSequence,
                    ks: SpatialKernel | None = None,
                    kt: TemporalPerceptKernel | None = None,
                    *,
                    renormalize: bool = True) -> FrameSequence:
    """Apply the spatial and temporal-response kernels to a sequence.

    Spatial filtering wraps toroidally; temporal filtering is causal with
    the sustained channel renormalized near the boundaries (unless disabled)
    and the transient channel always truncated without rescaling.
    """
    out = seq.values
    if ks is not None:
        out = spatial_convolve_frames(out, ks)
    if kt is not None:
        sus = temporal_convolve_frames(out, -kt.sustained_offsets, kt.sustained_weights,
                                       renormalize=renormalize)
        if kt.transient_weights.size:
            sus = sus + temporal_convolve_frames(out, -kt.transient_offsets, kt.transient_weights,
                                                 renormalize=False)
        out = sus
    return FrameSequence(out)


def error_sequence(displayed: FrameSequence, reference: FrameSequence,
                   ks: SpatialKernel | None = None,
                   kt: TemporalPerceptKernel | None = None) -> ErrorSequence:
    """Perceptually filtered signed error of a displayed sequence.

    The kernels act on the difference, which by linearity equals filtering
    both operands. Passing neither kernel yields the plain difference.
    """
    if displayed.values.shape != reference.values.shape:
        raise InvalidInputError(
            f"displayed shape {displayed.values.shape} does not match reference {reference.values.shape}"
        )
    diff = FrameSequence(displayed.values - reference.values)
    return ErrorSequence(filter_sequence(diff, ks, kt).values)


def prelmse(err: ErrorSequence, filtered_reference: FrameSequence, frame: int = DEFAULT_METRIC_FRAME) -> float:
    """Relative MSE of the filtered error at one frame.

    Mean over pixels of err^2 / (ref^2 + 0.01), where the reference has been
    run through the same perceptual filtering as the error.
    """
    e = err.frame(frame)
    r = filtered_reference.frame(frame)
    if e.shape != r.shape:
        raise InvalidInputError(f"error frame {e.shape} does not match reference frame {r.shape}")
    return float(np.mean(e * e / (r * r + PRELMSE_FLOOR)))


def dft_power(slice2d: np.ndarray) -> SpectrumImage:
    """DC-centered power spectrum of a mean-removed 2-d slice.

    Power is |DFT|^2 / N so the spectrum sums to the slice's total squared
    deviation from its mean; the DC bin is zeroed.
    """
    a = np.asarray(slice2d, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise InvalidInputError(f"expected a non-empty 2-d slice, got shape {a.shape}")
    a = a - a.mean()
    f = np.fft.fftshift(np.fft.fft2(a))
    p = (f.real ** 2 + f.imag ** 2) / a.size
    h, w = a.shape
    p[h // 2, w // 2] = 0.0
    return SpectrumImage(power=p)


def _radial_fractions(shape: tuple[int, int]) -> np.ndarray:
    """Per-bin radius as a fraction of the corner (maximum) frequency."""
    h, w = shape
    fy = np.fft.fftshift(np.fft.fftfreq(h))
    fx = np.fft.fftshift(np.fft.fftfreq(w))
    ny = fy[:, None] / 0.5
    nx = fx[None, :] / 0.5
    return np.sqrt((ny * ny + nx * nx) / 2.0)


def lowfreq_energy_ratio(spectrum: SpectrumImage, radius_fraction: float) -> float:
    """Fraction of spectral energy inside the centered low-frequency disk.

    The disk radius is radius_fraction times the corner frequency, so 1.0
    covers the whole spectrum. The DC bin carries no energy by construction.
    """
    if not 0.0 < radius_fraction <= 1.0:
        raise InvalidParameterError(f"radius_fraction must lie in (0, 1], got {radius_fraction}")
    total = float(spectrum.power.sum())
    if total == 0.0:
        raise InvalidInputError("spectrum has no energy outside DC")
    mask = _radial_fractions(spectrum.shape) <= radius_fraction + 1e-12
    return float(spectrum.power[mask].sum() / total)
