"""STFT analysis/synthesis and 16-bit PCM WAV I/O.

Frames are zero-padded by ``fft_size - hop`` on both sides so every input
sample is covered by a full set of overlapping windows. Synthesis divides by
the overlap-added squared window, so reconstruction is exact for any hop that
leaves no sample uncovered.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    hop: int = 256
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise ValueError(f"fft_size must be even and >= 2, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must satisfy 0 < hop <= fft_size, got {self.hop}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_freq(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.fft_size - self.hop

    def analysis_window(self) -> np.ndarray:
        return _WINDOWS[self.window](self.fft_size)

    @classmethod
    def for_bins(cls, n_freq: int, hop: int | None = None) -> "StftParams":
        """Params whose rfft size yields ``n_freq`` bins; hop defaults to a quarter frame."""
        fft_size = 2 * (n_freq - 1)
        return cls(fft_size=fft_size, hop=hop or max(1, fft_size // 4))


def _sqrt_hann(n):
    # periodic Hann, so the squared window is COLA at hop n/2 and n/4
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


_WINDOWS = {
    "sqrt_hann": _sqrt_hann,
    "rect": np.ones,
}


@dataclass(frozen=True, eq=False)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioSignal must be mono (1-D samples)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite audio samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """F x N complex STFT matrix; ``length`` is the analysed signal length."""

    values: np.ndarray
    params: StftParams
    length: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError("spectrogram values must be an F x N matrix")
        if v.shape[0] != self.params.n_freq:
            raise ValueError(
                f"spectrogram has {v.shape[0]} bins but fft_size={self.params.fft_size} "
                f"implies {self.params.n_freq}"
            )
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def n_frames(length: int, params: StftParams) -> int:
    padded = length + 2 * params.pad
    return 1 + max(0, -(-(padded - params.fft_size) // params.hop))


def stft(signal: AudioSignal | np.ndarray, params: StftParams = StftParams()) -> ComplexSpectrogram:
    if isinstance(signal, AudioSignal):
        x, sr = signal.samples, signal.sample_rate
    else:
        x, sr = np.asarray(signal, dtype=np.float64), DEFAULT_SAMPLE_RATE
    if x.size == 0:
        raise ValueError("empty signal")
    n = n_frames(len(x), params)
    total = (n - 1) * params.hop + params.fft_size
    padded = np.zeros(total)
    padded[params.pad:params.pad + len(x)] = x
    idx = np.arange(params.fft_size)[None, :] + params.hop * np.arange(n)[:, None]
    frames = padded[idx] * params.analysis_window()
    values = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(values, params, length=len(x), sample_rate=sr)


def frames_from_spectrogram(spec: ComplexSpectrogram) -> np.ndarray:
    """Inverse DFT of every column, before synthesis windowing. Shape (N, fft_size)."""
    return np.fft.irfft(spec.values.T, n=spec.params.fft_size, axis=1)


def istft(spec: ComplexSpectrogram) -> AudioSignal:
    p = spec.params
    n = spec.values.shape[1]
    if n == 0:
        raise ValueError("empty spectrogram")
    win = p.analysis_window()
    frames = frames_from_spectrogram(spec) * win
    total = (n - 1) * p.hop + p.fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n):
        sl = slice(i * p.hop, i * p.hop + p.fft_size)
        out[sl] += frames[i]
        norm[sl] += win ** 2
    covered = norm > 1e-10
    out[covered] /= norm[covered]
    length = spec.length if spec.length is not None else max(total - 2 * p.pad, 0)
    return AudioSignal(out[p.pad:p.pad + length], spec.sample_rate)


def read_wav(path: str | Path) -> AudioSignal:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        raw = w.readframes(w.getnframes())
        sr = w.getframerate()
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioSignal(pcm / 32768.0, sr)


def write_wav(path: str | Path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())
