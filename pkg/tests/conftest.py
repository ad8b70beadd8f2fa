import io
import struct
import wave

import numpy as np
import pytest

from stereo_diarize.embedding import EmbeddingVector
from stereo_diarize.channel_ops import Method

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria.append((marker.args[0], marker.args[1], item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, name, outcome in sorted(_criteria, key=lambda c: (c[0], c[2])):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {number}: {text} ({name})")


def wav_bytes_stdlib(frames: np.ndarray, rate: int, width: int = 2) -> bytes:
    """Integer PCM via the stdlib wave writer; frames is (n, channels) of ints."""
    dtype = {2: "<i2", 4: "<i4"}[width]
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(frames.shape[1])
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.ascontiguousarray(frames, dtype=dtype).tobytes())
    return buf.getvalue()


def wav_bytes_raw(payload: bytes, rate: int, channels: int, bits: int, tag: int = 1) -> bytes:
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def make_vectors(X, speaker="s", method=Method.MONO):
    return [EmbeddingVector(np.asarray(row, dtype=float), speaker, i + 1, method) for i, row in enumerate(X)]


@pytest.fixture
def two_blobs():
    rng = np.random.default_rng(12345)
    a = rng.normal(size=(100, 2))
    b = rng.normal(size=(100, 2)) + 10.0
    return np.vstack([a, b])
