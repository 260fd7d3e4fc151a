"""Audio front-end: band-limited resampling, short-time Fourier transform,
mel filterbank projection, and log compression.

Every 0.5 s capture-rate segment becomes a 64-band x 50-frame log-mel grid.
Conventions (the shape is fixed, the framing is ours): centered reflect-padded
STFT with a periodic Hann window, power spectrum, HTK mel scale spanning
0 Hz to Nyquist, natural log with a small positive clamp. The centered STFT
of an 8000-sample segment at hop 160 yields 51 frames; the final frame is
dropped to give exactly 50.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .sensordata import AudioChunk


class RateMismatchError(ValueError):
    """Segment sample rate differs from the rate the parameters assume."""


@dataclass(frozen=True)
class MelParams:
    target_rate: int = 16000
    window_length: int = 400  # 25 ms at 16 kHz
    hop_length: int = 160  # 10 ms
    n_mels: int = 64
    fft_size: int = 512
    log_floor: float = 1e-10
    segment_seconds: float = 0.5

    def __post_init__(self):
        if self.hop_length > self.window_length:
            raise ValueError("hop must not exceed window length")
        if self.n_mels > self.fft_size // 2 + 1:
            raise ValueError("more mel bands than spectrum bins")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.target_rate))

    @property
    def n_frames(self) -> int:
        # centered framing gives floor(n/hop)+1 frames; the last is dropped
        return self.segment_samples // self.hop_length


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames) float32, natural-log mel energies
    sample_rate_used: int
    params: MelParams = field(default_factory=MelParams, repr=False)


def resample(chunk: AudioChunk, target_rate: int) -> AudioChunk:
    """Band-limited sample-rate conversion; identity when rates match."""
    if chunk.sample_rate <= 0 or target_rate <= 0:
        raise ValueError("sample rates must be positive")
    if chunk.sample_rate == target_rate:
        return AudioChunk(chunk.samples.copy(), chunk.sample_rate, chunk.start_timestamp)
    n_out = int(round(len(chunk.samples) * target_rate / chunk.sample_rate))
    if len(chunk.samples) == 0:
        return AudioChunk(np.zeros(0, dtype=np.int16), target_rate, chunk.start_timestamp)
    g = np.gcd(target_rate, chunk.sample_rate)
    up, down = target_rate // g, chunk.sample_rate // g
    out = sp_signal.resample_poly(chunk.samples.astype(np.float64), up, down)
    if len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    else:
        out = out[:n_out]
    out = np.clip(np.rint(out), -32768, 32767).astype(np.int16)
    return AudioChunk(out, target_rate, chunk.start_timestamp)


def frame_signal(samples: np.ndarray, params: MelParams) -> np.ndarray:
    """Centered, reflect-padded, Hann-windowed frames, shape (n_frames, window)."""
    x = np.asarray(samples, dtype=np.float64)
    pad = params.fft_size // 2
    x = np.pad(x, (pad, pad), mode="reflect")
    window = sp_signal.get_window("hann", params.window_length, fftbins=True)
    n_frames = params.n_frames
    frames = np.empty((n_frames, params.window_length))
    for i in range(n_frames):
        start = pad + i * params.hop_length - params.window_length // 2
        frames[i] = x[start : start + params.window_length]
    return frames * window


def stft_magnitudes(samples: np.ndarray, params: MelParams) -> np.ndarray:
    """|STFT|, shape (fft_size//2 + 1, n_frames)."""
    frames = frame_signal(samples, params)
    padded = np.zeros((frames.shape[0], params.fft_size))
    padded[:, : params.window_length] = frames
    return np.abs(np.fft.rfft(padded, axis=1)).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: MelParams) -> np.ndarray:
    """Triangular filters on the HTK mel scale, 0 Hz to Nyquist,
    shape (n_mels, fft_size//2 + 1)."""
    n_bins = params.fft_size // 2 + 1
    nyquist = params.target_rate / 2.0
    band_edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), params.n_mels + 2))
    bin_freqs = np.linspace(0.0, nyquist, n_bins)
    fb = np.zeros((params.n_mels, n_bins))
    for m in range(params.n_mels):
        lo, center, hi = band_edges[m : m + 3]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_band_centers(params: MelParams) -> np.ndarray:
    edges = mel_to_hz(
        np.linspace(hz_to_mel(0.0), hz_to_mel(params.target_rate / 2.0), params.n_mels + 2)
    )
    return edges[1:-1]


def mel_spectrogram(segment: AudioChunk, params: MelParams | None = None) -> MelSpectrogram:
    """Log-mel grid of one 0.5 s segment at the target rate."""
    if params is None:
        params = MelParams()
    if segment.sample_rate != params.target_rate:
        raise RateMismatchError(
            f"segment at {segment.sample_rate} Hz, expected {params.target_rate} Hz"
        )
    n = params.segment_samples
    samples = np.asarray(segment.samples, dtype=np.float64) / 32768.0
    if len(samples) > n:
        raise ValueError(f"segment has {len(samples)} samples, expected at most {n}")
    if len(samples) < n:
        samples = np.pad(samples, (0, n - len(samples)))
    power = stft_magnitudes(samples, params) ** 2
    mel = mel_filterbank(params) @ power
    values = np.log(np.maximum(mel, params.log_floor)).astype(np.float32)
    return MelSpectrogram(values, params.target_rate, params)
