"""Seeded synthetic stereo corpus: filtered-noise talkers at fixed stereo positions.

Talkers come in pairs with nearly identical spectral envelopes but very
different left/right gain ratios, so a mono downmix leaves them hard to
separate while the channel combinations keep the inter-channel cue. Every
talker's gains satisfy left + right == 1, so the mono loudness carries no
speaker information either.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

import numpy as np

from .audio_io import StereoSignal, UtteranceSpan

# left-channel gains; right = 1 - left
PAN_POSITIONS = (0.15, 0.62, 0.30, 0.80, 0.45, 0.90, 0.22, 0.70, 0.38, 0.55)


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 6
    seconds_per_speaker: int = 30
    sample_rate: int = 16000
    gap_seconds: float = 0.5
    pair_offset: float = 0.08
    formant_jitter: float = 0.05
    loudness_jitter_db: float = 3.0
    sensor_noise: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_speakers <= len(PAN_POSITIONS):
            raise ValueError(f"n_speakers must be between 1 and {len(PAN_POSITIONS)}")
        if self.seconds_per_speaker < 1 or self.sample_rate < 1000:
            raise ValueError("need at least one second per speaker and a sample rate >= 1 kHz")


@dataclass(frozen=True)
class Talker:
    speaker_id: str
    formants: Tuple[float, ...]
    bandwidths: Tuple[float, ...]
    left_gain: float
    syllable_rate: float

    @property
    def right_gain(self) -> float:
        return 1.0 - self.left_gain


def make_talkers(config: SynthConfig) -> List[Talker]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    nyquist = config.sample_rate / 2
    talkers = []
    for k in range(config.n_speakers):
        if k % 2 == 0:
            # pair members share everything but a small formant shift
            base = np.minimum(np.sort(rng.uniform([250, 900, 2000], [700, 1800, 3200])), 0.8 * nyquist)
            bandwidths = rng.uniform(80, 250, size=3)
            syllable_rate = float(rng.uniform(3.0, 6.0))
            formants = base
        else:
            formants = base * (1 + config.pair_offset)
        talkers.append(Talker(
            speaker_id=f"spk{k + 1}",
            formants=tuple(float(f) for f in formants),
            bandwidths=tuple(float(b) for b in bandwidths),
            left_gain=PAN_POSITIONS[k],
            syllable_rate=syllable_rate,
        ))
    return talkers


def _talker_second(talker: Talker, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    sr = config.sample_rate
    freqs = np.fft.rfftfreq(sr, 1.0 / sr)
    jitter = 1 + config.formant_jitter * rng.standard_normal(len(talker.formants))
    envelope = np.full_like(freqs, 0.02)
    for amp, (f, bw, j) in enumerate(zip(talker.formants, talker.bandwidths, jitter)):
        envelope += (0.6 ** amp) * np.exp(-0.5 * ((freqs - f * j) / bw) ** 2)
    spectrum = np.fft.rfft(rng.standard_normal(sr)) * envelope
    source = np.fft.irfft(spectrum, n=sr)
    t = np.arange(sr) / sr
    am = 0.35 + 0.65 * np.abs(np.sin(np.pi * talker.syllable_rate * t + rng.uniform(0, np.pi)))
    source *= am
    source /= np.sqrt(np.mean(source ** 2)) + 1e-12
    gain_db = config.loudness_jitter_db * rng.uniform(-1, 1)
    return 0.1 * 10 ** (gain_db / 20) * source


def generate_corpus(config: SynthConfig = SynthConfig()) -> Tuple[StereoSignal, List[UtteranceSpan], List[Talker]]:
    """One stereo recording with talkers speaking in turn, plus its manifest spans."""
    sr = config.sample_rate
    gap = int(round(config.gap_seconds * sr))
    talkers = make_talkers(config)
    left_parts, right_parts, spans = [], [], []
    cursor = 0
    for k, talker in enumerate(talkers):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, k]))
        speech = np.concatenate([_talker_second(talker, config, rng)
                                 for _ in range(config.seconds_per_speaker)])
        silence = np.zeros(gap)
        left_parts += [silence, talker.left_gain * speech]
        right_parts += [silence, talker.right_gain * speech]
        start = cursor + gap
        end = start + speech.shape[0]
        spans.append(UtteranceSpan(talker.speaker_id, Fraction(start, sr), Fraction(end, sr)))
        cursor = end
    left_parts.append(np.zeros(gap))
    right_parts.append(np.zeros(gap))

    noise_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    left = np.concatenate(left_parts)
    right = np.concatenate(right_parts)
    left = left + config.sensor_noise * noise_rng.standard_normal(left.shape[0])
    right = right + config.sensor_noise * noise_rng.standard_normal(right.shape[0])
    return StereoSignal(sr, np.clip(left, -1, 1), np.clip(right, -1, 1)), spans, talkers


def format_manifest(spans: List[UtteranceSpan]) -> str:
    lines = ["# speaker_id,start_s,end_s"]
    for s in spans:
        lines.append(f"{s.speaker_id},{_decimal(s.start)},{_decimal(s.end)}")
    return "\n".join(lines) + "\n"


def _decimal(x: Fraction) -> str:
    """Exact decimal text when the fraction terminates, else 12 decimals."""
    text = f"{float(x):.12f}".rstrip("0").rstrip(".")
    return text if Fraction(text) == x else f"{float(x):.12f}"
