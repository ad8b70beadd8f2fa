import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stereo_diarize.channel_ops import Method, ProcessedSignal
from stereo_diarize.embedding import (
    EmbeddingSet,
    EmbeddingVector,
    SpectralEmbedderConfig,
    cosine,
    embed_spectral,
    export_embeddings,
    hz_to_mel,
    import_embeddings,
    log_mel_frames,
    mel_filterbank,
    pooled_features,
)
from stereo_diarize.errors import EmbedError, EmbeddingImportError

SR = 16000


def sig(x, method=Method.MONO, index=1):
    return ProcessedSignal("spk", index, method, np.asarray(x, float), SR)


def tone(freq, amp=1.0, seconds=1.0):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def test_mel_scale_reference_points():
    assert hz_to_mel(0) == 0
    assert hz_to_mel(700) == pytest.approx(2595 * np.log10(2))
    assert hz_to_mel(1000) == pytest.approx(999.985, abs=1e-3)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(SR, 512, 40)
    assert fb.shape == (40, 257)
    assert fb.min() >= 0 and fb.max() <= 1
    assert np.all(fb.sum(axis=1) > 0)
    peaks = np.argmax(fb, axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_log_mel_matches_naive_dft():
    cfg = SpectralEmbedderConfig(n_mels=8, frame_length=0.004, frame_hop=0.002)
    x = np.random.default_rng(3).normal(size=200)
    n, hop, nfft = cfg.frame_samples(SR)
    assert (n, hop, nfft) == (64, 32, 64)
    # independent DFT by explicit summation
    k = np.arange(nfft // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / nfft)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / (n - 1))
    fb = mel_filterbank(SR, nfft, 8)
    rows = []
    for start in range(0, len(x) - n + 1, hop):
        mag = np.abs(basis @ (x[start:start + n] * win))
        rows.append(np.log(np.maximum(fb @ mag, 1e-10)))
    np.testing.assert_allclose(log_mel_frames(x, SR, cfg), np.array(rows), rtol=1e-9, atol=1e-9)


def test_zero_signal_constant_mean_and_zero_std():
    v = embed_spectral(sig(np.zeros(SR))).values
    assert np.all(v[40:80] == 0)
    assert np.all(v[:40] == v[0]) and v[0] < 0
    assert np.all(v[80:] == 0)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def test_deterministic():
    x = np.random.default_rng(0).normal(size=SR)
    a, b = embed_spectral(sig(x)).values, embed_spectral(sig(x.copy())).values
    assert a.tobytes() == b.tobytes()


def test_tone_similarity():
    a = embed_spectral(sig(tone(440))).values
    b = embed_spectral(sig(tone(3000))).values
    c = embed_spectral(sig(tone(440, 0.5))).values
    assert cosine(a, b) < 0.9
    assert cosine(a, c) > 0.99


def test_unit_norm_and_dimension():
    rng = np.random.default_rng(1)
    for method, length in [(Method.MONO, SR), (Method.HSTACK, 2 * SR)]:
        v = embed_spectral(sig(rng.normal(size=length), method))
        assert v.values.shape == (256,)
        assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-9)
        assert v.method is method


def test_truncation_keeps_unit_norm():
    cfg = SpectralEmbedderConfig(output_dim=30)
    v = embed_spectral(sig(np.random.default_rng(2).normal(size=SR)), cfg).values
    assert v.shape == (30,) and np.linalg.norm(v) == pytest.approx(1.0)


def test_std_features_scale_invariant():
    cfg = SpectralEmbedderConfig()
    x = np.random.default_rng(4).normal(size=SR) * 0.1
    for scale in (2.0, 0.3, 17.0):
        a = pooled_features(x, SR, cfg)
        b = pooled_features(scale * x, SR, cfg)
        np.testing.assert_allclose(b[40:], a[40:], atol=1e-9)
        np.testing.assert_allclose(b[:40] - a[:40], np.log(scale), atol=1e-9)


def test_too_short():
    with pytest.raises(EmbedError):
        embed_spectral(sig(np.zeros(100)))


def test_config_validation():
    with pytest.raises(ValueError):
        SpectralEmbedderConfig(frame_hop=0.05)
    with pytest.raises(ValueError):
        SpectralEmbedderConfig(fft_size=300)
    with pytest.raises(ValueError):
        SpectralEmbedderConfig(fft_size=128).frame_samples(SR)


# ---------------------------------------------------------------------------
# DVEC format
# ---------------------------------------------------------------------------

def _set(n, dim=256, method=Method.SUMDIF, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingSet(dim, method, [
        EmbeddingVector(rng.normal(size=dim), f"spk{i % 3}", i + 1, method) for i in range(n)])


def test_import_single_row():
    text = "DVEC v1 dim=256 method=MONO\n" + "a,1," + ",".join(["0.5"] * 256) + "\n"
    s = import_embeddings(text)
    assert len(s) == 1 and s.dimension == 256 and s.method is Method.MONO
    assert s.entries[0].values[0] == 0.5


@pytest.mark.parametrize("body", [
    "a,1," + ",".join(["0.5"] * 255),
    "a,1," + ",".join(["nan"] + ["0.5"] * 255),
    "a,1," + ",".join(["inf"] + ["0.5"] * 255),
    "a,1," + ",".join(["0.5"] * 256) + "\na,1," + ",".join(["0.5"] * 256),
    "a,one," + ",".join(["0.5"] * 256),
])
def test_import_rejects(body):
    with pytest.raises(EmbeddingImportError):
        import_embeddings("DVEC v1 dim=256 method=MONO\n" + body + "\n")


@pytest.mark.parametrize("header", ["", "DVEC v2 dim=4 method=MONO", "DVEC v1 dim=4 method=MIDSIDE"])
def test_bad_headers(header):
    with pytest.raises(EmbeddingImportError):
        import_embeddings(header + "\n")


def test_set_rejects_mixed_methods():
    s = EmbeddingSet(2, Method.MONO)
    with pytest.raises(EmbeddingImportError):
        s.append(EmbeddingVector(np.zeros(2), "a", 1, Method.SUM))


def test_export_empty_and_order():
    assert export_embeddings(EmbeddingSet(8, Method.HSTACK)) == "DVEC v1 dim=8 method=HSTACK\n"
    s = _set(2, dim=3)
    lines = export_embeddings(s).splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("spk0,1,") and lines[2].startswith("spk1,2,")


def test_comment_line_and_streams():
    s = _set(3, dim=4)
    buf = io.StringIO()
    export_embeddings(s, buf, comment="config_sha256=abc")
    text = buf.getvalue()
    assert text.splitlines()[1] == "# config_sha256=abc"
    back = import_embeddings(io.BytesIO(text.encode()))
    assert len(back) == 3


def test_round_trip_100_entries():
    s = _set(100)
    back = import_embeddings(export_embeddings(s))
    assert [(e.speaker_id, e.index) for e in back.entries] == [(e.speaker_id, e.index) for e in s.entries]
    assert np.max(np.abs(back.matrix() - s.matrix())) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 20), st.integers(1, 12), st.sampled_from(list(Method)), st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(n, dim, method, seed):
    rng = np.random.default_rng(seed)
    s = EmbeddingSet(dim, method, [
        EmbeddingVector(rng.normal(size=dim) * 10.0 ** rng.integers(-8, 8), f"s{i}", i, method)
        for i in range(n)])
    back = import_embeddings(export_embeddings(s))
    assert back.method is method and back.dimension == dim
    np.testing.assert_array_equal(back.matrix(), s.matrix())
