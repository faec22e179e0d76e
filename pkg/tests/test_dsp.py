import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from agfpipe import dsp
from agfpipe.errors import InvalidInputError


def tone(freq, seconds=1.0, amplitude=0.5):
    t = np.arange(int(seconds * dsp.SAMPLE_RATE)) / dsp.SAMPLE_RATE
    return (amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32)


def clip_of(x):
    return dsp.AudioClip(np.asarray(x, dtype=np.float32), dsp.SAMPLE_RATE)


# --- filterbank -------------------------------------------------------------

def test_filterbank_rows_nonnegative_unit_peak_contiguous():
    fb = dsp.mel_filterbank()
    assert fb.shape == (128, dsp.N_FFT // 2 + 1)
    assert (fb >= 0).all()
    for row in fb:
        assert row.max() == pytest.approx(1.0)
        support = np.flatnonzero(row > 0)
        assert support.size > 0
        assert np.array_equal(support, np.arange(support[0], support[-1] + 1))


def test_filter_centers_monotone():
    centers = dsp.mel_filter_centers()
    assert (np.diff(centers) > 0).all()
    assert 0 < centers[0] < centers[-1] < dsp.SAMPLE_RATE / 2


# --- mel spectrogram --------------------------------------------------------

def test_one_second_gives_42_frames():
    spec = dsp.mel_spectrogram(clip_of(tone(440.0, 1.0)))
    assert spec.shape == (128, 42)
    # padded to 43 frames when carved into a segment
    segs = dsp.segment_windows(spec, "tiled")
    assert segs[0].shape == (128, 43)


def test_silent_clip_hits_floor():
    spec = dsp.mel_spectrogram(clip_of(np.zeros(dsp.SAMPLE_RATE)))
    assert (spec == dsp.FLOOR_DB).all()


def test_pure_tone_argmax_matches_nearest_center():
    # independent oracle: HTK mel center frequencies computed inline
    n_mels = 128
    mel_max = 2595.0 * np.log10(1.0 + (dsp.SAMPLE_RATE / 2) / 700.0)
    grid = np.linspace(0.0, mel_max, n_mels + 2)
    centers = 700.0 * (10.0 ** (grid[1:-1] / 2595.0) - 1.0)
    expected_bin = int(np.argmin(np.abs(centers - 440.0)))

    spec = dsp.mel_spectrogram(clip_of(tone(440.0, 2.0)))
    per_frame_argmax = spec.argmax(axis=0)
    assert (per_frame_argmax == expected_bin).all()


def test_db_compression_monotone_under_gain():
    rng = np.random.default_rng(3)
    x = (0.2 * rng.standard_normal(3 * dsp.SAMPLE_RATE)).astype(np.float32)
    quiet = dsp.mel_spectrogram(clip_of(0.25 * x))
    loud = dsp.mel_spectrogram(clip_of(x))
    assert (loud >= quiet - 1e-9).all()


def test_mel_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        dsp.mel_spectrogram(clip_of(np.zeros(100)))  # shorter than a window
    bad = np.zeros(dsp.SAMPLE_RATE, dtype=np.float32)
    bad[5] = np.nan
    with pytest.raises(InvalidInputError):
        dsp.mel_spectrogram(clip_of(bad))
    with pytest.raises(InvalidInputError):
        dsp.mel_spectrogram(dsp.AudioClip(np.zeros(dsp.SAMPLE_RATE), 22050))


# --- mfcc --------------------------------------------------------------------

def naive_dct2_ortho(x):
    """Brute-force orthonormal DCT-II, O(n^2)."""
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        acc = 0.0
        for i in range(n):
            acc += x[i] * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
        scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
        out[k] = scale * acc
    return out


def test_mfcc_constant_frame():
    c = 7.25
    spec = np.full((128, 3), c)
    out = dsp.mfcc(spec)
    assert out.shape == (25, 3)
    assert out[0] == pytest.approx(c * np.sqrt(128), rel=1e-6)
    assert np.abs(out[1:]).max() < 1e-4


def test_mfcc_matches_naive_dct():
    frame = np.arange(128, dtype=np.float64)
    expected = naive_dct2_ortho(frame)[:25]
    out = dsp.mfcc(frame[:, None].astype(np.float32))
    np.testing.assert_allclose(out[:, 0], expected, atol=1e-3)
    # and at full float64 precision through the dct path itself
    import scipy.fft
    direct = scipy.fft.dct(frame, type=2, norm="ortho")[:25]
    np.testing.assert_allclose(direct, expected, atol=1e-9)


def test_mfcc_shape_from_43_frames():
    spec = np.random.default_rng(0).standard_normal((128, 43))
    assert dsp.mfcc(spec).shape == (25, 43)


def test_mfcc_of_mel_is_finite():
    rng = np.random.default_rng(1)
    x = (0.3 * rng.standard_normal(2 * dsp.SAMPLE_RATE)).astype(np.float32)
    out = dsp.mfcc(dsp.mel_spectrogram(clip_of(x)))
    assert np.isfinite(out).all()


# --- delta --------------------------------------------------------------------

def test_delta_constant_is_zero():
    seq = np.full((25, 10), 3.5, dtype=np.float32)
    assert (dsp.delta(seq) == 0).all()


def test_delta_small_example():
    seq = np.array([[1.0, 3.0, 6.0]])
    np.testing.assert_array_equal(dsp.delta(seq), [[2.0, 3.0]])


def test_delta_matches_subtraction_oracle():
    rng = np.random.default_rng(5)
    seq = rng.standard_normal((25, 43))
    expected = np.stack([seq[:, t + 1] - seq[:, t] for t in range(42)], axis=1)
    np.testing.assert_allclose(dsp.delta(seq), expected, atol=0)
    assert dsp.delta(seq).shape == (25, 42)


def test_delta_needs_two_frames():
    with pytest.raises(InvalidInputError):
        dsp.delta(np.ones((25, 1)))


# --- segmentation ---------------------------------------------------------------

def test_tiled_segments_are_disjoint_and_ordered():
    spec = np.arange(128 * 86, dtype=np.float32).reshape(128, 86)
    segs = dsp.segment_windows(spec, "tiled")
    assert len(segs) == 2
    np.testing.assert_array_equal(segs[0], spec[:, :43])
    np.testing.assert_array_equal(segs[1], spec[:, 43:86])
    np.testing.assert_array_equal(np.concatenate(segs, axis=1), spec[:, :86])


def test_exact_length_crop_is_identity():
    spec = np.random.default_rng(2).standard_normal((128, 43)).astype(np.float32)
    [seg] = dsp.segment_windows(spec, "random_crop", np.random.default_rng(0))
    np.testing.assert_array_equal(seg, spec)


def test_short_spec_padded_with_floor():
    spec = np.zeros((128, 20), dtype=np.float32)
    [seg] = dsp.segment_windows(spec, "tiled")
    assert seg.shape == (128, 43)
    assert (seg[:, 20:] == dsp.FLOOR_DB).all()
    [seg] = dsp.segment_windows(spec, "random_crop", np.random.default_rng(0))
    assert seg.shape == (128, 43)


def test_crop_offsets_uniform_chi_square():
    spec = np.zeros((2, 100), dtype=np.float32)
    spec[0] = np.arange(100)  # identify the offset from the first row
    rng = np.random.default_rng(123)
    n_draws, n_offsets = 10_000, 100 - 43 + 1
    counts = np.zeros(n_offsets)
    for _ in range(n_draws):
        [seg] = dsp.segment_windows(spec, "random_crop", rng)
        off = int(seg[0, 0])
        assert 0 <= off < n_offsets
        counts[off] += 1
    expected = n_draws / n_offsets
    stat = float(((counts - expected) ** 2 / expected).sum())
    p = scipy.stats.chi2.sf(stat, n_offsets - 1)
    assert p > 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=43, max_value=300), st.integers(min_value=0, max_value=2**31 - 1))
def test_tiling_reconstructs_prefix(n_frames, seed):
    spec = np.random.default_rng(seed).standard_normal((8, n_frames)).astype(np.float32)
    segs = dsp.segment_windows(spec, "tiled")
    k = n_frames // 43
    assert len(segs) == k
    if k:
        np.testing.assert_array_equal(np.concatenate(segs, axis=1), spec[:, :43 * k])


# --- wav io ----------------------------------------------------------------------

def test_wav_round_trip(tmp_path):
    x = tone(220.0, 0.5)
    path = tmp_path / "t.wav"
    dsp.write_wav(path, clip_of(x))
    clip = dsp.read_wav(path)
    assert clip.sample_rate == dsp.SAMPLE_RATE
    assert clip.samples.shape == x.shape
    assert np.abs(clip.samples - x).max() < 1e-3  # 16-bit quantization


def test_wav_rejects_wrong_rate(tmp_path):
    import scipy.io.wavfile
    path = tmp_path / "t.wav"
    scipy.io.wavfile.write(path, 22050, np.zeros(1000, dtype=np.int16))
    with pytest.raises(InvalidInputError, match="sample rate"):
        dsp.read_wav(path)


def test_wav_takes_first_channel(tmp_path):
    import scipy.io.wavfile
    stereo = np.zeros((1000, 2), dtype=np.int16)
    stereo[:, 0] = 1000
    path = tmp_path / "t.wav"
    scipy.io.wavfile.write(path, dsp.SAMPLE_RATE, stereo)
    clip = dsp.read_wav(path)
    assert clip.samples.ndim == 1
    assert clip.samples[0] == pytest.approx(1000 / 32768.0)
