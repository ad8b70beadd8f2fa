"""Fixed-length embeddings: a built-in log-mel embedder plus the DVEC file format.

The DVEC text format is the bridge to externally computed d-vectors::

    DVEC v1 dim=256 method=SUMDIF
    alice,1,0.0123,...,-0.04
    alice,2,...
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, TextIO, Union

import numpy as np

from .channel_ops import Method, ProcessedSignal
from .errors import EmbedError, EmbeddingImportError

DEFAULT_DIM = 256
LOG_FLOOR = 1e-10

_HEADER_RE = re.compile(r"^DVEC v1 dim=(\d+) method=([A-Za-z]+)\s*$")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    speaker_id: str
    index: int
    method: Method

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass
class EmbeddingSet:
    dimension: int
    method: Method
    entries: List[EmbeddingVector] = field(default_factory=list)

    def __post_init__(self):
        self.method = Method.parse(self.method)
        for e in self.entries:
            self._check(e)

    def _check(self, e: EmbeddingVector):
        if e.method != self.method:
            raise EmbeddingImportError(
                f"entry {e.speaker_id}#{e.index} has method {e.method}, set is {self.method}")
        if e.values.shape != (self.dimension,):
            raise EmbeddingImportError(
                f"entry {e.speaker_id}#{e.index} has dimension {e.values.shape[0]}, expected {self.dimension}")

    def append(self, e: EmbeddingVector):
        self._check(e)
        self.entries.append(e)

    def __len__(self):
        return len(self.entries)

    def speakers(self) -> List[str]:
        return sorted({e.speaker_id for e in self.entries})

    def by_speaker(self) -> Dict[str, List[EmbeddingVector]]:
        """Entries grouped per speaker (ascending id), each group ordered by segment index."""
        groups: Dict[str, List[EmbeddingVector]] = {}
        for e in self.entries:
            groups.setdefault(e.speaker_id, []).append(e)
        return {k: sorted(groups[k], key=lambda e: e.index) for k in sorted(groups)}

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.dimension))
        return np.stack([e.values for e in self.entries])


# --------------------------------------------------------------------------
# Spectral embedder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralEmbedderConfig:
    n_mels: int = 40
    frame_length: float = 0.025
    frame_hop: float = 0.010
    fft_size: Optional[int] = None
    output_dim: int = DEFAULT_DIM

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 < self.frame_hop <= self.frame_length):
            raise ValueError("need 0 < frame_hop <= frame_length")
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if self.fft_size is not None and (self.fft_size < 1 or self.fft_size & (self.fft_size - 1)):
            raise ValueError("fft_size must be a power of two")

    def frame_samples(self, sample_rate: int):
        n = int(round(self.frame_length * sample_rate))
        hop = max(1, int(round(self.frame_hop * sample_rate)))
        nfft = self.fft_size or 1 << max(0, (n - 1).bit_length())
        if nfft < n:
            raise ValueError(f"fft_size {nfft} is shorter than a frame of {n} samples")
        return n, hop, nfft


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, nfft: int, n_mels: int) -> np.ndarray:
    """Triangular filters, equally spaced in mel from 0 Hz to Nyquist.

    Returns an ``(n_mels, nfft // 2 + 1)`` weight matrix with unit peak height.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_frames(samples: np.ndarray, sample_rate: int, config: SpectralEmbedderConfig) -> np.ndarray:
    """``(n_frames, n_mels)`` log mel-filtered magnitude spectra (Hann-windowed frames)."""
    n, hop, nfft = config.frame_samples(sample_rate)
    if samples.shape[0] < n:
        raise EmbedError(f"signal of {samples.shape[0]} samples is shorter than one frame ({n})")
    n_frames = 1 + (samples.shape[0] - n) // hop
    idx = np.arange(n)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * np.hanning(n)
    mag = np.abs(np.fft.rfft(frames, n=nfft, axis=1))
    energies = mag @ mel_filterbank(sample_rate, nfft, config.n_mels).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def pooled_features(samples: np.ndarray, sample_rate: int, config: SpectralEmbedderConfig) -> np.ndarray:
    """Per-band mean followed by per-band (population) standard deviation, unnormalised."""
    logmel = log_mel_frames(samples, sample_rate, config)
    # centring on the first frame keeps constant bands at an exact zero std
    offset = logmel - logmel[0]
    return np.concatenate([logmel[0] + offset.mean(axis=0), offset.std(axis=0)])


def embed_spectral(signal: ProcessedSignal, config: SpectralEmbedderConfig = SpectralEmbedderConfig()) -> EmbeddingVector:
    samples = np.asarray(signal.samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise EmbedError("signal contains non-finite samples")
    feats = pooled_features(samples, signal.sample_rate, config)
    vec = np.zeros(config.output_dim)
    k = min(config.output_dim, feats.shape[0])
    vec[:k] = feats[:k]
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return EmbeddingVector(vec, signal.speaker_id, signal.index, signal.method)


# --------------------------------------------------------------------------
# DVEC import / export
# --------------------------------------------------------------------------

def format_header(dimension: int, method: Method) -> str:
    return f"DVEC v1 dim={dimension} method={Method.parse(method).value}"


def export_embeddings(emb_set: EmbeddingSet, stream: Optional[TextIO] = None,
                      comment: Optional[str] = None) -> str:
    """Serialise to DVEC text; floats use shortest round-trip repr.

    An optional ``comment`` goes on a ``#`` line right after the header.
    Returns the text, also writing it to ``stream`` when given.
    """
    lines = [format_header(emb_set.dimension, emb_set.method)]
    if comment:
        lines.append("# " + comment.replace("\n", " "))
    for e in emb_set.entries:
        if "," in e.speaker_id or "\n" in e.speaker_id or e.speaker_id.startswith("#"):
            raise ValueError(f"speaker id {e.speaker_id!r} cannot be written to a DVEC file")
        lines.append(",".join([e.speaker_id, str(e.index)] + [repr(float(v)) for v in e.values]))
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def import_embeddings(source: Union[str, bytes, TextIO, Iterable[str]]) -> EmbeddingSet:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        lines = source.splitlines()
    elif hasattr(source, "read"):
        data = source.read()
        lines = (data.decode("utf-8") if isinstance(data, bytes) else data).splitlines()
    else:
        lines = list(source)
    if not lines:
        raise EmbeddingImportError("empty embedding file")
    m = _HEADER_RE.match(lines[0].strip())
    if not m:
        raise EmbeddingImportError(f"bad header {lines[0]!r}")
    dim = int(m.group(1))
    try:
        method = Method.parse(m.group(2))
    except ValueError as exc:
        raise EmbeddingImportError(str(exc)) from None
    if dim < 1:
        raise EmbeddingImportError("dimension must be positive")

    out = EmbeddingSet(dim, method)
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != dim + 2:
            raise EmbeddingImportError(
                f"line {lineno}: {len(fields) - 2} values, header declares dim={dim}")
        speaker, idx_text = fields[0], fields[1]
        try:
            index = int(idx_text)
            values = np.array([float(v) for v in fields[2:]])
        except ValueError:
            raise EmbeddingImportError(f"line {lineno}: unparsable number") from None
        if not np.all(np.isfinite(values)):
            raise EmbeddingImportError(f"line {lineno}: non-finite value")
        key = (speaker, index, method)
        if key in seen:
            raise EmbeddingImportError(f"line {lineno}: duplicate entry {speaker}#{index}")
        seen.add(key)
        out.append(EmbeddingVector(values, speaker, index, method))
    return out


def read_embeddings(path) -> EmbeddingSet:
    with io.open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return import_embeddings(text)
    except EmbeddingImportError as exc:
        raise EmbeddingImportError(f"{path}: {exc}") from None


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))
