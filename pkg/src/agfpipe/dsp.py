"""Audio front end: WAV ingestion, mel spectrograms, MFCCs, deltas, segments.

Fixed analysis chain: 44.1 kHz mono input, 2048-sample Hann windows
(~46.4 ms) with 1024-sample hop (50% overlap), power spectrum through a
128-band triangular HTK-mel filterbank, 10*log10 compression clamped at
-100 dB. MFCCs are the first 25 coefficients of an orthonormal DCT-II over
the mel axis. Network input segments are 128x43 patches (~1 s).
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .errors import InvalidInputError

SAMPLE_RATE = 44100
N_FFT = 2048
HOP = 1024
N_MELS = 128
N_MFCC = 25
FLOOR_DB = -100.0
POWER_FLOOR = 1e-10
SEGMENT_FRAMES = 43
FRAME_HOP_S = HOP / SAMPLE_RATE


@dataclass
class AudioClip:
    samples: np.ndarray  # mono float, nominally in [-1, 1]
    sample_rate: int


def read_wav(path) -> AudioClip:
    """Load an uncompressed PCM WAV (16-bit int or 32-bit float).

    Stereo input is reduced to its first channel. Sample rates other than
    44100 Hz are rejected rather than resampled.
    """
    rate, data = scipy.io.wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise InvalidInputError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise InvalidInputError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples=samples, sample_rate=rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM."""
    x = np.clip(clip.samples, -1.0, 1.0)
    scipy.io.wavfile.write(path, clip.sample_rate, (x * 32767.0).astype(np.int16))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(n_mels: int = N_MELS, fmin: float = 0.0,
                       fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filterbank on the HTK mel scale, one row per filter.

    Rows are rescaled to unit peak over the sampled FFT bins so narrow
    low-frequency filters are not penalized by the bin grid.
    """
    fmin, fmax = 0.0, sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        peak = fb[i].max()
        if peak > 0:
            fb[i] /= peak
    return fb


_FILTERBANK_CACHE = {}


def _filterbank(n_mels, n_fft, sample_rate):
    key = (n_mels, n_fft, sample_rate)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank(n_mels, n_fft, sample_rate)
    return _FILTERBANK_CACHE[key]


def mel_spectrogram(clip: AudioClip) -> np.ndarray:
    """dB-scaled mel spectrogram, shape (128, n_frames).

    n_frames = floor((N - 2048) / 1024) + 1; no edge padding. Values are
    10*log10 of mel-filtered power, clamped at -100 dB.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if clip.sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"sample rate {clip.sample_rate}, expected {SAMPLE_RATE}")
    if x.ndim != 1:
        raise InvalidInputError("expected mono samples")
    if len(x) < N_FFT:
        raise InvalidInputError(f"clip has {len(x)} samples, need at least {N_FFT}")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite samples in clip")

    n_frames = (len(x) - N_FFT) // HOP + 1
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)  # periodic Hann
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # (n_frames, n_fft//2+1)
    mel_power = power @ _filterbank(N_MELS, N_FFT, SAMPLE_RATE).T
    db = 10.0 * np.log10(np.maximum(mel_power, POWER_FLOOR))
    return np.maximum(db, FLOOR_DB).T.astype(np.float32)


def mfcc(spec: np.ndarray) -> np.ndarray:
    """First 25 orthonormal DCT-II coefficients along the mel axis.

    Input is a dB mel spectrogram (n_mels, n_frames); output (25, n_frames).
    """
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise InvalidInputError("mel spectrogram must be 2-D")
    if not np.isfinite(spec).all():
        raise InvalidInputError("non-finite values in mel spectrogram")
    coeffs = scipy.fft.dct(spec.astype(np.float64), type=2, norm="ortho", axis=0)
    return coeffs[:N_MFCC].astype(np.float32)


def delta(seq: np.ndarray) -> np.ndarray:
    """First-order difference between subsequent frames: out[:, t] = in[:, t+1] - in[:, t]."""
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[1] < 2:
        raise InvalidInputError("need at least 2 frames for deltas")
    return (seq[:, 1:] - seq[:, :-1]).astype(seq.dtype)


def _pad_to_segment(spec: np.ndarray) -> np.ndarray:
    """Right-pad a too-short spectrogram with the dB floor to 43 frames."""
    n_mels, n = spec.shape
    out = np.full((n_mels, SEGMENT_FRAMES), FLOOR_DB, dtype=spec.dtype)
    out[:, :n] = spec
    return out


def segment_windows(spec: np.ndarray, mode: str, rng: np.random.Generator = None) -> list:
    """Carve 43-frame segments out of a mel spectrogram.

    mode="random_crop": one segment at a uniform random offset (training).
    mode="tiled": floor(n_frames / 43) consecutive non-overlapping segments
    (inference); the remainder is dropped. Spectrograms shorter than 43
    frames are right-padded with the dB floor and yield one segment.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] < 1:
        raise InvalidInputError("spectrogram must be 2-D with at least one frame")
    n = spec.shape[1]
    if n < SEGMENT_FRAMES:
        return [_pad_to_segment(spec)]
    if mode == "random_crop":
        if rng is None:
            raise InvalidInputError("random_crop requires an rng")
        off = int(rng.integers(0, n - SEGMENT_FRAMES + 1))
        return [spec[:, off:off + SEGMENT_FRAMES].copy()]
    if mode == "tiled":
        return [spec[:, i * SEGMENT_FRAMES:(i + 1) * SEGMENT_FRAMES].copy()
                for i in range(n // SEGMENT_FRAMES)]
    raise InvalidInputError(f"unknown segmentation mode {mode!r}")
