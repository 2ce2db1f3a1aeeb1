import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegcf.tfa import (
    GridSpec,
    Spectrogram,
    TfaConfig,
    TfaError,
    build_spectrogram,
    cell_bounds,
    cell_means,
    downsample,
    freq_axis,
    morlet_cwt,
    morlet_wavelet,
)
from eegcf.trial_store import SynthConfig, synth_mi_trials

FS_LOW = 250.0 / 3


def direct_cwt(x, fs, freqs, n_cycles=6.0):
    """Time-domain convolution oracle: |sum_k x[t-k] psi[k]| with 'same' alignment."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.empty((len(freqs), n))
    for i, f in enumerate(freqs):
        psi = morlet_wavelet(f, fs, n_cycles)
        h = len(psi) // 2
        full = np.convolve(x, psi)
        out[i] = np.abs(full[h:h + n])
    return out


class TestFreqAxis:
    def test_endpoints_and_spacing(self):
        f = freq_axis()
        assert len(f) == 224
        assert f[0] == 1.0 and f[-1] == 41.0
        np.testing.assert_allclose(np.diff(f), 40.0 / 223, atol=1e-9)


class TestDownsample:
    def test_dc_invariance(self):
        np.testing.assert_allclose(downsample(np.ones(9), 3), np.ones(3), atol=1e-9)

    def test_length(self):
        assert downsample(np.zeros(750), 3).shape == (250,)
        assert downsample(np.zeros(751), 3).shape == (250,)

    def test_factor_one_is_copy(self):
        x = np.arange(5.0)
        y = downsample(x, 1)
        np.testing.assert_array_equal(x, y)
        assert y is not x

    @pytest.mark.parametrize("factor", [0, -2])
    def test_bad_factor(self, factor):
        with pytest.raises(TfaError):
            downsample(np.ones(9), factor)

    def test_too_short(self):
        with pytest.raises(TfaError):
            downsample(np.ones(2), 3)

    def test_tone_against_fft_oracle(self):
        fs, f0 = 250.0, 5.0
        x = np.sin(2 * np.pi * f0 * np.arange(750) / fs)
        y = downsample(x, 3)
        spec_in = np.abs(np.fft.rfft(x)) * 2 / len(x)
        spec_out = np.abs(np.fft.rfft(y)) * 2 / len(y)
        f_out = np.fft.rfftfreq(len(y), d=3 / fs)
        k = int(np.argmax(spec_out))
        assert f_out[k] == pytest.approx(f0)
        assert spec_out[k] == pytest.approx(spec_in.max(), rel=0.05)

    def test_rejects_above_new_nyquist(self):
        fs = 250.0
        x = np.sin(2 * np.pi * 60.0 * np.arange(750) / fs)
        y = downsample(x, 3)
        assert np.abs(y[50:-50]).max() < 0.05


class TestMorlet:
    def test_wavelet_odd_and_normalized(self):
        for f in (1.0, 10.0, 30.0):
            psi = morlet_wavelet(f, FS_LOW)
            assert len(psi) % 2 == 1
            lag = np.arange(len(psi)) - len(psi) // 2
            gain = lambda nu: abs(np.sum(psi * np.exp(-2j * np.pi * nu * lag / FS_LOW)))
            # residual error comes from truncating the envelope at 4 sigma
            assert gain(f) == pytest.approx(2.0, rel=1e-3)
            assert gain(-f) < 1e-4

    def test_high_tone_argmax(self):
        """Near Nyquist the scalogram still peaks at the tone (no negative-frequency leakage)."""
        n = 512
        freqs = freq_axis()
        edge = n // 10
        for f0 in (33.4, 36.0, 38.0):
            x = np.sin(2 * np.pi * f0 * np.arange(n) / FS_LOW)
            rows = np.argmax(direct_cwt(x, FS_LOW, freqs)[:, edge:-edge], axis=0)
            assert np.all(np.abs(rows - np.argmin(np.abs(freqs - f0))) <= 1)

    def test_zero_signal(self):
        out = morlet_cwt(np.zeros(300), FS_LOW, freq_axis())
        assert out.shape == (224, 300) and not out.any()

    def test_linearity_of_magnitude(self, rng):
        x = rng.standard_normal(256)
        freqs = np.linspace(2, 30, 15)
        np.testing.assert_allclose(morlet_cwt(2 * x, FS_LOW, freqs), 2 * morlet_cwt(x, FS_LOW, freqs), rtol=1e-12)

    @pytest.mark.parametrize("n", [64, 250, 512])
    def test_fft_path_matches_direct_convolution(self, rng, n):
        x = rng.standard_normal(n)
        freqs = freq_axis()
        fast = morlet_cwt(x, FS_LOW, freqs)
        slow = direct_cwt(x, FS_LOW, freqs)
        assert np.linalg.norm(fast - slow) / np.linalg.norm(slow) < 1e-6

    def test_batched_equals_loop(self, rng):
        x = rng.standard_normal((3, 200))
        freqs = np.linspace(1, 40, 12)
        batch = morlet_cwt(x, FS_LOW, freqs)
        for i in range(3):
            np.testing.assert_allclose(batch[i], morlet_cwt(x[i], FS_LOW, freqs), atol=1e-12)

    def test_unit_tone_magnitude_flat_in_frequency(self):
        n = 2000
        fs = 250.0
        for f0 in (5.0, 10.0, 30.0):
            x = np.sin(2 * np.pi * f0 * np.arange(n) / fs)
            mag = morlet_cwt(x, fs, [f0])[0, n // 2]
            assert mag == pytest.approx(1.0, abs=0.01)

    def test_10hz_tone_argmax(self):
        n = 512
        freqs = freq_axis()
        x = np.sin(2 * np.pi * 10.0 * np.arange(n) / FS_LOW)
        out = direct_cwt(x, FS_LOW, freqs)
        edge = n // 10
        rows = np.argmax(out[:, edge:-edge], axis=0)
        assert np.all(np.abs(rows - np.argmin(np.abs(freqs - 10.0))) <= 1)

    @pytest.mark.parametrize("bad", [[0.0], [-1.0], [FS_LOW / 2], [50.0]])
    def test_bad_freqs(self, bad):
        with pytest.raises(TfaError):
            morlet_cwt(np.zeros(10), FS_LOW, bad)


class TestBuildSpectrogram:
    def test_zero_trial(self):
        s = build_spectrogram(np.zeros((3, 750)), 250.0)
        assert s.values.shape == (224, 224) and not s.values.any()

    def test_default_shape_and_axes(self):
        ts = synth_mi_trials(SynthConfig(n_trials_per_class=1))
        s = build_spectrogram(ts.trials[0], ts.sample_rate_hz)
        assert s.values.shape == (224, 224) and s.values.dtype == np.float32
        assert s.freq_axis[0] == 1.0 and s.freq_axis[-1] == 41.0
        assert np.all(np.diff(s.time_axis) > 0)
        assert np.all(s.values >= 0) and np.all(np.isfinite(s.values))

    def test_too_few_samples(self):
        with pytest.raises(TfaError, match="too few samples"):
            build_spectrogram(np.zeros((1, 600)), 250.0)

    def test_clip_percentile(self, rng):
        sig = rng.standard_normal((2, 750))
        s = build_spectrogram(sig, 250.0, TfaConfig(clip_percentile=90.0))
        assert np.mean(s.values >= s.values.max()) >= 0.09

    def test_single_channel_selection(self, rng):
        sig = rng.standard_normal((3, 750))
        s = build_spectrogram(sig, 250.0, TfaConfig(channel_agg="single", channel_index=1, clip_percentile=100))
        ref = build_spectrogram(sig[1:2], 250.0, TfaConfig(clip_percentile=100))
        np.testing.assert_array_equal(s.values, ref.values)

    def test_alpha_evidence_cell(self):
        # without the label-free beta burst the strongest cell is the alpha burst
        cfg = SynthConfig(n_trials_per_class=1, seed=0, nuisance_gain=0.0)
        ts = synth_mi_trials(cfg)
        trial = ts.trials[0]
        assert trial.label == 0
        s = build_spectrogram(trial, ts.sample_rate_hz)
        g = GridSpec()
        brute = np.zeros((g.h, g.w))
        for cell in range(g.hw):
            (r0, r1), (c0, c1) = cell_bounds(g, cell)
            brute.flat[cell] = s.values[r0:r1, c0:c1].astype(np.float64).mean()
        np.testing.assert_allclose(cell_means(s.values, g), brute, rtol=1e-12)
        r, c = divmod(int(np.argmax(brute)), g.w)
        (r0, r1), _ = cell_bounds(g, r * g.w + c)
        assert s.freq_axis[r0] <= 10.0 <= s.freq_axis[r1 - 1]
        assert c in (2, 3, 4)

    def test_spectrogram_rejects_negative(self):
        with pytest.raises(TfaError):
            Spectrogram(-np.ones((2, 2)), np.arange(2), np.arange(2))


class TestCellBounds:
    @pytest.mark.parametrize("cell,expected", [
        (0, ((0, 32), (0, 32))),
        (48, ((192, 224), (192, 224))),
        (10, ((32, 64), (96, 128))),
    ])
    def test_examples(self, cell, expected):
        assert cell_bounds(GridSpec(), cell) == expected

    @pytest.mark.parametrize("cell", [-1, 49])
    def test_out_of_range(self, cell):
        with pytest.raises(TfaError):
            cell_bounds(GridSpec(), cell)

    @settings(max_examples=20, deadline=None)
    @given(h=st.sampled_from([1, 2, 4, 7, 8, 14, 16, 28, 32]), w=st.sampled_from([1, 2, 7, 8, 32]))
    def test_tiling(self, h, w):
        g = GridSpec(h, w)
        cover = np.zeros((224, 224), dtype=int)
        for cell in range(g.hw):
            (r0, r1), (c0, c1) = cell_bounds(g, cell)
            cover[r0:r1, c0:c1] += 1
        assert np.all(cover == 1)

    def test_grid_must_divide(self):
        with pytest.raises(TfaError):
            GridSpec(5, 7)
