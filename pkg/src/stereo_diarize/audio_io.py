"""Stereo WAV decoding, speaker manifests and one-second segmentation."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO, Dict, Iterable, List, Union

import numpy as np

from .errors import ChannelError, DecodeError, ManifestError, RangeError, UnsupportedFormat

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# trailing 14 bytes of the KSDATAFORMAT_SUBTYPE_* GUIDs shared by PCM and float
_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass(frozen=True)
class StereoSignal:
    sample_rate: int
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.left.shape != self.right.shape or self.left.ndim != 1:
            raise ValueError("left and right must be 1-D vectors of equal length")

    @property
    def n_samples(self) -> int:
        return self.left.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class UtteranceSpan:
    speaker_id: str
    start: Fraction
    end: Fraction

    def __post_init__(self):
        if self.start < 0:
            raise ValueError("span start must be non-negative")
        if self.end <= self.start:
            raise ValueError("span end must be after start")

    def sample_bounds(self, sample_rate: int):
        """Half-open sample range, each boundary rounded half-up to the nearest sample."""
        return _round_half_up(self.start * sample_rate), _round_half_up(self.end * sample_rate)


@dataclass(frozen=True)
class StereoSegment:
    speaker_id: str
    index: int
    left: np.ndarray
    right: np.ndarray
    sample_rate: int
    start_sample: int = 0

    def __post_init__(self):
        if not (self.left.shape == self.right.shape == (self.sample_rate,)):
            raise ValueError("a segment holds exactly one second per channel")


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


# --------------------------------------------------------------------------
# WAV decoding
# --------------------------------------------------------------------------

def _read_bytes(source: Union[bytes, bytearray, BinaryIO]) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return source.read()


def decode_wav(source: Union[bytes, BinaryIO]) -> StereoSignal:
    """Decode a 2-channel RIFF/WAVE stream into floating-point channels.

    Integer PCM (16/24/32 bit) is scaled by the format's maximum magnitude
    (2**(bits-1)); 32-bit float samples are taken as-is.
    """
    data = _read_bytes(source)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE stream")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            if chunk_id == b"data":
                raise DecodeError("truncated data chunk")
            break
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None or len(fmt) < 16:
        raise DecodeError("missing or short fmt chunk")
    if payload is None:
        raise DecodeError("missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise DecodeError("short WAVE_FORMAT_EXTENSIBLE header")
        guid = fmt[24:40]
        if guid[2:] != _GUID_TAIL:
            raise UnsupportedFormat("unknown extensible sub-format GUID")
        (tag,) = struct.unpack_from("<H", guid)

    if channels != 2:
        raise ChannelError(f"expected 2 channels, found {channels}")
    if rate == 0:
        raise DecodeError("sample rate of zero")
    if tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormat(f"format tag 0x{tag:04x} is not supported")
    if tag == WAVE_FORMAT_PCM and bits not in (16, 24, 32):
        raise UnsupportedFormat(f"{bits}-bit integer PCM is not supported")
    if tag == WAVE_FORMAT_IEEE_FLOAT and bits != 32:
        raise UnsupportedFormat(f"{bits}-bit float is not supported")

    width = bits // 8
    if block_align != 2 * width:
        raise DecodeError(f"block align {block_align} inconsistent with {bits}-bit stereo")
    n_frames = len(payload) // block_align
    raw = payload[:n_frames * block_align]

    if tag == WAVE_FORMAT_IEEE_FLOAT:
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise DecodeError("non-finite float samples")
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints / float(1 << 23)
    else:
        ints = np.frombuffer(raw, dtype="<i2" if bits == 16 else "<i4")
        samples = ints / float(1 << (bits - 1))

    frames = samples.reshape(n_frames, 2)
    return StereoSignal(int(rate), np.ascontiguousarray(frames[:, 0]), np.ascontiguousarray(frames[:, 1]))


def read_wav(path) -> StereoSignal:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def encode_wav_pcm16(signal: StereoSignal) -> bytes:
    """Encode as 16-bit stereo PCM, clipping to the representable range."""
    frames = np.stack([signal.left, signal.right], axis=1)
    ints = np.clip(np.round(frames * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, WAVE_FORMAT_PCM, 2, signal.sample_rate,
        signal.sample_rate * 4, 4, 16,
        b"data", len(payload),
    )
    return header + payload


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

def _parse_time(text: str, line: int) -> Fraction:
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ManifestError(f"non-numeric time {text.strip()!r}", line) from None
    return value


def load_manifest(text: Union[str, Iterable[str]]) -> List[UtteranceSpan]:
    """Parse ``speaker_id,start_s,end_s`` records.

    Blank lines and ``#`` comments are skipped. Times are kept as exact
    rationals so that sample rounding does not depend on float parsing.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    spans: List[UtteranceSpan] = []
    lines_of: List[int] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3 or not fields[0]:
            raise ManifestError("expected 'speaker_id,start_s,end_s'", lineno)
        start = _parse_time(fields[1], lineno)
        end = _parse_time(fields[2], lineno)
        if start < 0:
            raise ManifestError("negative start time", lineno)
        if end <= start:
            raise ManifestError(f"end {fields[2]} is not after start {fields[1]}", lineno)
        for other, other_line in zip(spans, lines_of):
            if start < other.end and other.start < end:
                raise ManifestError(f"span overlaps the span on line {other_line}", lineno)
        spans.append(UtteranceSpan(fields[0], start, end))
        lines_of.append(lineno)
    return spans


def read_manifest(path) -> List[UtteranceSpan]:
    with io.open(path, encoding="utf-8") as fh:
        return load_manifest(fh.read())


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------

def cut_and_segment(signal: StereoSignal, spans: List[UtteranceSpan]) -> Dict[str, List[StereoSegment]]:
    """Cut each span into whole one-second stereo segments.

    The sub-second tail of every span is dropped. Spans of one speaker are
    segmented independently and their segments concatenated in manifest
    order, numbered from 1.
    """
    rate = signal.sample_rate
    out: Dict[str, List[StereoSegment]] = {}
    for span in spans:
        lo, hi = span.sample_bounds(rate)
        if hi > signal.n_samples:
            raise RangeError(
                f"span {span.speaker_id} [{float(span.start)}, {float(span.end)}] s "
                f"exceeds signal length {signal.duration:.6f} s"
            )
        segments = out.setdefault(span.speaker_id, [])
        for k in range((hi - lo) // rate):
            a = lo + k * rate
            segments.append(StereoSegment(
                speaker_id=span.speaker_id,
                index=len(segments) + 1,
                left=signal.left[a:a + rate],
                right=signal.right[a:a + rate],
                sample_rate=rate,
                start_sample=a,
            ))
    return out
