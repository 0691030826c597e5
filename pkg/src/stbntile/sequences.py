"""Image-sequence containers used by the filtering and evaluation code."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class FrameSequence:
    """A stack of grayscale frames stored as a (frames, height, width) array."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise InvalidInputError(
                f"frame sequence must be 3-d (frames, height, width), got shape {self.values.shape}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        """(width, height, frames)."""
        t, h, w = self.values.shape
        return (w, h, t)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def frame(self, i: int) -> np.ndarray:
        if not 0 <= i < self.frames:
            raise InvalidInputError(f"frame {i} outside valid range [0, {self.frames})")
        return self.values[i]

    @classmethod
    def zeros(cls, width: int, height: int, frames: int) -> "FrameSequence":
        return cls(np.zeros((frames, height, width)))


@dataclass
class ErrorSequence(FrameSequence):
    """A frame sequence holding signed, perceptually filtered error values."""


@dataclass
class SpectrumImage:
    """DC-centered power spectrum of a single 2-d slice.

    The DC bin is forced to zero so energy ratios ignore the mean.
    """

    power: np.ndarray

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.power.ndim != 2:
            raise InvalidInputError(f"spectrum must be 2-d, got shape {self.power.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape
