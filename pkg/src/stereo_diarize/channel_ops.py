"""Channel combinations of a stereo segment: mono, sum, hstack and sumdif."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .audio_io import StereoSegment


class Method(str, enum.Enum):
    MONO = "MONO"
    SUM = "SUM"
    HSTACK = "HSTACK"
    SUMDIF = "SUMDIF"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unknown combination method {value!r}") from None

    @property
    def length_factor(self) -> int:
        return 2 if self in (Method.HSTACK, Method.SUMDIF) else 1


ALL_METHODS = (Method.MONO, Method.SUM, Method.HSTACK, Method.SUMDIF)


@dataclass(frozen=True)
class ProcessedSignal:
    speaker_id: str
    index: int
    method: Method
    samples: np.ndarray
    sample_rate: int


def combine_arrays(left: np.ndarray, right: np.ndarray, method: Method) -> np.ndarray:
    method = Method.parse(method)
    if method is Method.MONO:
        return (left + right) / 2
    if method is Method.SUM:
        return left + right
    if method is Method.HSTACK:
        return np.concatenate([left, right])
    return np.concatenate([left + right, left - right])


def combine(segment: StereoSegment, method: Method) -> ProcessedSignal:
    """Build the processed single-channel signal for one segment.

    SUM is not renormalised (SUM == 2 * MONO) and nothing is clipped. The
    stacked variants keep the segment's sample rate; they are simply twice
    as long.
    """
    method = Method.parse(method)
    samples = combine_arrays(segment.left, segment.right, method)
    return ProcessedSignal(segment.speaker_id, segment.index, method, samples, segment.sample_rate)


def split_sumdif(samples: np.ndarray):
    """Recover (left, right) from a SUMDIF vector."""
    half = samples.shape[0] // 2
    s, d = samples[:half], samples[half:]
    return (s + d) / 2, (s - d) / 2
