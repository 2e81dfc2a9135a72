import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from sldsed import dsp
from sldsed.errors import InvalidArgument

SR = dsp.SAMPLE_RATE


def test_hamming_small_lengths():
    np.testing.assert_allclose(dsp.hamming_window(3), [0.08, 1.0, 0.08], atol=1e-15)
    w = dsp.hamming_window(4)
    assert w[0] == pytest.approx(0.08) and w[3] == pytest.approx(0.08)
    assert w[1] == pytest.approx(w[2])


def test_hamming_sum_closed_form():
    # sum_{n=0}^{L-1} cos(2 pi n / (L-1)) = 1, so the sum is 0.54 L - 0.46
    L = 2048
    assert dsp.hamming_window(L).sum() == pytest.approx(0.54 * L - 0.46, rel=1e-12)


def test_hamming_rejects_short():
    with pytest.raises(InvalidArgument):
        dsp.hamming_window(1)


def test_window_geometry_at_32k():
    assert dsp.window_length(SR) == 2048
    assert dsp.hop_length(SR) == 1024


def test_stft_frame_count_10s():
    w = dsp.Waveform(np.zeros(10 * SR), SR)
    assert dsp.stft_magnitude(w).shape == (311, 1025)
    assert (320000 - 2048) // 1024 + 1 == 311


def test_stft_constant_signal_is_dc():
    mag = dsp.stft_magnitude(dsp.Waveform(np.full(SR, 0.5), SR))
    assert np.all(mag >= 0)
    assert np.all(mag[:, 2:] < 0.01 * mag[:, :1])


def test_stft_sine_at_bin_centre_matches_direct_dft():
    k = 64
    f = k * SR / 2048  # 1000 Hz
    n = np.arange(SR)
    x = 0.5 * np.sin(2 * np.pi * f * n / SR)
    mag = dsp.stft_magnitude(dsp.Waveform(x, SR))
    assert np.all(mag.argmax(axis=1) == k)
    # direct DFT of the first frame, bin by bin
    frame = x[:2048] * dsp.hamming_window(2048)
    bins = np.arange(1025)
    basis = np.exp(-2j * np.pi * np.outer(bins, np.arange(2048)) / 2048)
    np.testing.assert_allclose(mag[0], np.abs(basis @ frame), atol=1e-8)


def test_stft_shift_covariance():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 20000)
    hop = dsp.hop_length(SR)
    a = dsp.stft_magnitude(dsp.Waveform(x, SR))
    b = dsp.stft_magnitude(dsp.Waveform(np.concatenate([np.zeros(hop), x]), SR))
    np.testing.assert_allclose(b[1:], a, atol=1e-9)


def test_stft_rejects_short_waveform():
    with pytest.raises(InvalidArgument):
        dsp.stft_magnitude(dsp.Waveform(np.zeros(100), SR))


def test_mel_scale_value():
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2), abs=1e-12)
    assert dsp.hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)
    assert dsp.mel_to_hz(dsp.hz_to_mel(1234.5)) == pytest.approx(1234.5)


def test_mel_filter_apex_on_bin():
    # one filter whose centre lands exactly on the 1000 Hz bin (sr 8 kHz, nfft 8)
    fmax = float(dsp.mel_to_hz(2 * dsp.hz_to_mel(1000.0)))
    bank = dsp.mel_filterbank(8, n_mels=1, sample_rate=8000, fmin=0.0, fmax=fmax)
    assert bank[0, 1] == pytest.approx(1.0)
    assert bank[0].argmax() == 1


def test_mel_filterbank_shape_and_overlap():
    bank = dsp.mel_filterbank(2048, 64, SR, 50.0)
    assert bank.shape == (64, 1025)
    assert np.all(bank >= 0)
    assert np.all(bank.sum(axis=1) > 0)
    for k in range(63):
        assert np.any((bank[k] > 0) & (bank[k + 1] > 0)), k


def test_mel_filter_rows_unimodal():
    bank = dsp.mel_filterbank(2048, 64, SR, 50.0)
    for row in bank:
        nz = row[row > 0]
        peak = nz.argmax()
        assert np.all(np.diff(nz[:peak + 1]) >= 0)
        assert np.all(np.diff(nz[peak:]) <= 0)


def test_mel_filterbank_errors():
    with pytest.raises(InvalidArgument):
        dsp.mel_filterbank(64, 64, SR)
    with pytest.raises(InvalidArgument):
        dsp.mel_filterbank(2048, 64, SR, fmin=5000, fmax=4000)


def test_log_mel_silence_is_floor():
    spec = dsp.log_mel(dsp.Waveform(np.zeros(SR), SR))
    np.testing.assert_allclose(spec.frames, np.log(dsp.LOG_FLOOR))
    assert spec.n_mels == 64
    assert spec.hop_seconds == pytest.approx(0.032)


def test_log_mel_white_noise_every_band_varies():
    rng = np.random.default_rng(0)
    n = 2048 + 99 * 1024
    spec = dsp.log_mel(dsp.Waveform(rng.uniform(-0.5, 0.5, n), SR))
    assert spec.n_frames == 100
    assert np.all(spec.frames.var(axis=0) > 0)


def test_log_mel_scaling_adds_log4():
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.4, 0.4, SR)
    a = dsp.log_mel(dsp.Waveform(x, SR)).frames
    b = dsp.log_mel(dsp.Waveform(2 * x, SR)).frames
    loud = a > np.log(dsp.LOG_FLOOR) + 20
    assert loud.mean() > 0.9
    np.testing.assert_allclose((b - a)[loud], np.log(4.0), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_log_mel_always_finite(seed, scale):
    x = np.random.default_rng(seed).uniform(-1, 1, 4096) * scale
    assert np.all(np.isfinite(dsp.log_mel(dsp.Waveform(x, SR)).frames))


def test_waveform_validation():
    with pytest.raises(InvalidArgument):
        dsp.Waveform(np.array([0.0, np.nan]), SR)
    with pytest.raises(InvalidArgument):
        dsp.Waveform(np.array([]), SR)
    with pytest.raises(InvalidArgument):
        dsp.Waveform(np.zeros(4), 0)


def test_matrix_roundtrip(tmp_path):
    frames = np.random.default_rng(0).standard_normal((7, 64))
    dsp.save_matrix(tmp_path / "m.bin", frames, 0.032, SR)
    back = dsp.load_matrix(tmp_path / "m.bin")
    np.testing.assert_allclose(back.frames, frames.astype(np.float32))
    assert back.hop_seconds == 0.032 and back.sample_rate == SR


def test_wav_roundtrip_pcm16_and_float(tmp_path):
    x = np.sin(np.linspace(0, 100, 4000)) * 0.8
    dsp.write_wav(tmp_path / "a.wav", dsp.Waveform(x, SR))
    back = dsp.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, x, atol=0.5 / 32768 + 1e-12)
    wavfile.write(tmp_path / "f.wav", SR, x.astype(np.float32))
    np.testing.assert_allclose(dsp.read_wav(tmp_path / "f.wav").samples, x, atol=1e-7)
