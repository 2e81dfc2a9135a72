"""Log-mel front-end: Hamming-windowed STFT, mel filterbank, log energy.

Defaults: 32 kHz audio, 64 ms window (2048 samples), 50% overlap, 64 mel bands.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, InvalidArgument

SAMPLE_RATE = 32000
WINDOW_MS = 64.0
OVERLAP = 0.5
N_MELS = 64
FMIN = 50.0
LOG_FLOOR = 1e-10

_MATRIX_MAGIC = b"SLDMAT01"
_MATRIX_HEADER = struct.Struct("<8sIIdI")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidArgument("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgument("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidArgument(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class LogMelSpectrogram:
    frames: np.ndarray  # (T, n_mels)
    hop_seconds: float
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window, ``0.54 - 0.46 cos(2 pi n / (L - 1))``."""
    if length < 2:
        raise InvalidArgument(f"window length must be >= 2, got {length}")
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def window_length(sample_rate: int, window_ms: float = WINDOW_MS) -> int:
    """Smallest power of two at or above the window duration in samples."""
    target = int(round(window_ms * 1e-3 * sample_rate))
    return 1 << max(1, int(np.ceil(np.log2(max(target, 2)))))


def hop_length(sample_rate: int, window_ms: float = WINDOW_MS, overlap: float = OVERLAP) -> int:
    if not 0.0 <= overlap < 1.0:
        raise InvalidArgument(f"overlap must be in [0, 1), got {overlap}")
    return max(1, int(round(window_length(sample_rate, window_ms) * (1.0 - overlap))))


def n_frames_for(n_samples: int, win: int, hop: int) -> int:
    return (n_samples - win) // hop + 1


def stft_magnitude(w: Waveform, window_ms: float = WINDOW_MS, overlap: float = OVERLAP) -> np.ndarray:
    """Magnitude STFT without padding; shape ``(T, nfft // 2 + 1)``.

    ``T = floor((len - win) / hop) + 1``; the FFT size equals the window length.
    """
    win = window_length(w.sample_rate, window_ms)
    hop = hop_length(w.sample_rate, window_ms, overlap)
    if w.samples.size < win:
        raise InvalidArgument(
            f"waveform has {w.samples.size} samples, shorter than one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop]
    return np.abs(np.fft.rfft(frames * hamming_window(win), axis=1))


def mel_filterbank(
    nfft: int,
    n_mels: int = N_MELS,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular filters with centres equally spaced on the HTK mel scale.

    Returns an ``(n_mels, nfft // 2 + 1)`` weight matrix; each triangle peaks at 1.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise InvalidArgument(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin}, fmax={fmax}")
    if n_mels < 1:
        raise InvalidArgument("n_mels must be positive")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (centre - lo)
    falling = (hi - bins[None, :]) / (hi - centre)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0.0)
    if empty.size:
        raise InvalidArgument(
            f"{n_mels} mel bands too many for nfft={nfft}: filter rows {empty.tolist()} are empty"
        )
    return bank


def log_mel(
    w: Waveform,
    n_mels: int = N_MELS,
    window_ms: float = WINDOW_MS,
    overlap: float = OVERLAP,
    fmin: float = FMIN,
    fmax: float | None = None,
) -> LogMelSpectrogram:
    mag = stft_magnitude(w, window_ms, overlap)
    nfft = window_length(w.sample_rate, window_ms)
    bank = mel_filterbank(nfft, n_mels, w.sample_rate, fmin, fmax)
    energy = (mag ** 2) @ bank.T
    hop = hop_length(w.sample_rate, window_ms, overlap)
    return LogMelSpectrogram(np.log(energy + LOG_FLOOR), hop / w.sample_rate, w.sample_rate)


# --- I/O -------------------------------------------------------------------


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read wav ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, sr)


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), w.sample_rate, pcm)


def save_matrix(path, frames: np.ndarray, hop_seconds: float, sample_rate: int) -> None:
    """Flat binary matrix: header then row-major little-endian float32."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise InvalidArgument("matrix must be 2-D")
    header = _MATRIX_HEADER.pack(_MATRIX_MAGIC, frames.shape[0], frames.shape[1],
                                 float(hop_seconds), int(sample_rate))
    Path(path).write_bytes(header + frames.tobytes())


def load_matrix(path) -> LogMelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _MATRIX_HEADER.size:
        raise DataError(f"{path}: truncated matrix header")
    magic, n_rows, n_cols, hop, sr = _MATRIX_HEADER.unpack_from(raw)
    if magic != _MATRIX_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[_MATRIX_HEADER.size:]
    if len(body) != 4 * n_rows * n_cols:
        raise DataError(f"{path}: expected {n_rows}x{n_cols} floats, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(n_rows, n_cols).astype(np.float64)
    return LogMelSpectrogram(frames, hop, sr)
