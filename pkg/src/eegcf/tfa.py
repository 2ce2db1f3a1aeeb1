"""Time-frequency analysis: anti-aliased decimation, Morlet CWT, and the
224x224 spectrogram with its patch grid."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import signal as ssig

SPEC_SIZE = 224
MORLET_CYCLES = 6.0
_SUPPORT_SIGMAS = 4.0
_MIN_HALF_LEN = 64  # keeps the roll-off near Nyquist resolved for short envelopes
_ROLLOFF_START = 0.9  # fraction of Nyquist where the shared roll-off begins


class TfaError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    h: int = 7
    w: int = 7
    size: int = SPEC_SIZE

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.size % self.h or self.size % self.w:
            raise TfaError(f"grid {self.h}x{self.w} does not tile {self.size}")

    @property
    def hw(self) -> int:
        return self.h * self.w

    @property
    def patch_height(self) -> int:
        return self.size // self.h

    @property
    def patch_width(self) -> int:
        return self.size // self.w


def cell_bounds(g: GridSpec, cell: int):
    """Row-major cell index -> ((row_start, row_stop), (col_start, col_stop))."""
    if not 0 <= cell < g.hw:
        raise TfaError(f"cell {cell} out of range for {g.h}x{g.w} grid")
    r, c = divmod(int(cell), g.w)
    ph, pw = g.patch_height, g.patch_width
    return (r * ph, (r + 1) * ph), (c * pw, (c + 1) * pw)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray  # (n_freqs, n_times) float32, row 0 = lowest frequency
    freq_axis: np.ndarray
    time_axis: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise TfaError("spectrogram values must be 2-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise TfaError("spectrogram values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "freq_axis", np.asarray(self.freq_axis, dtype=np.float64))
        object.__setattr__(self, "time_axis", np.asarray(self.time_axis, dtype=np.float64))


@dataclass(frozen=True)
class TfaConfig:
    downsample_factor: int = 3
    n_freqs: int = SPEC_SIZE
    f_lo: float = 1.0
    f_hi: float = 41.0
    channel_agg: str = "mean"
    channel_index: int = 0
    clip_percentile: float = 99.5
    n_cycles: float = MORLET_CYCLES
    n_times: int = SPEC_SIZE

    def as_dict(self):
        return asdict(self)


def freq_axis(cfg: TfaConfig = TfaConfig()) -> np.ndarray:
    return np.linspace(cfg.f_lo, cfg.f_hi, cfg.n_freqs)


def downsample(x, factor: int) -> np.ndarray:
    """Zero-phase low-pass (cutoff 0.9 x new Nyquist) then keep every
    ``factor``-th sample; output length is ``len(x) // factor``."""
    if factor < 1:
        raise TfaError("downsample factor must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < factor:
        raise TfaError(f"signal of length {n} is shorter than factor {factor}")
    if factor == 1:
        return x.copy()
    sos = _antialias_sos(factor)
    y = ssig.sosfiltfilt(sos, x, axis=-1, padlen=min(3 * (2 * len(sos) + 1), n - 1))
    keep = (n // factor) * factor
    return y[..., :keep:factor]


@lru_cache(maxsize=16)
def _antialias_sos(factor: int):
    return ssig.butter(8, 0.9 / factor, btype="low", output="sos")


def morlet_wavelet(freq: float, sample_rate_hz: float, n_cycles: float = MORLET_CYCLES, half_len: int | None = None):
    """Analytic complex Morlet at ``freq`` Hz as an odd-length FIR kernel.

    The kernel is synthesized from its spectrum: a Gaussian bump at ``freq``
    with width ``freq / n_cycles`` (the transform of a Gaussian envelope of
    ``n_cycles`` cycles), zero at negative frequencies, times a raised-cosine
    roll-off to Nyquist shared by every wavelet. Sampling a Gaussian envelope
    in time instead lets high-frequency wavelets wrap past Nyquist and pick up
    the negative-frequency half of a real tone. The shared roll-off scales a
    tone's response equally at every wavelet frequency, so it never moves the
    peak. Peak gain is 2 so a unit-amplitude sinusoid yields magnitude 1.
    """
    sigma = n_cycles / (2 * np.pi * freq) * sample_rate_hz  # envelope width in samples
    if half_len is None:
        half_len = max(int(np.ceil(_SUPPORT_SIGMAS * sigma)), _MIN_HALF_LEN)
    nyquist = sample_rate_hz / 2
    nu = np.fft.fftfreq(2 * half_len + 1, d=1.0 / sample_rate_hz)
    bump = np.exp(-0.5 * ((nu - freq) / (freq / n_cycles)) ** 2)
    ramp = np.clip((nu - _ROLLOFF_START * nyquist) / ((1 - _ROLLOFF_START) * nyquist), 0.0, 1.0)
    gain = np.where(nu > 0, 0.5 * (1 + np.cos(np.pi * ramp)), 0.0)
    return np.fft.fftshift(np.fft.ifft(2.0 * bump * gain))


def _check_freqs(freqs, sample_rate_hz):
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any(freqs <= 0):
        raise TfaError("CWT frequencies must be positive")
    if np.any(freqs >= sample_rate_hz / 2):
        raise TfaError(f"CWT frequency {freqs.max()} Hz >= Nyquist {sample_rate_hz / 2} Hz")
    return freqs


@lru_cache(maxsize=8)
def _wavelet_bank(sample_rate_hz: float, freqs: tuple, n: int, n_cycles: float):
    bank = [morlet_wavelet(f, sample_rate_hz, n_cycles) for f in freqs]
    half = max(len(b) // 2 for b in bank)
    nfft = sfft.next_fast_len(n + 2 * half)
    padded = np.zeros((len(bank), nfft), dtype=np.complex128)
    for i, b in enumerate(bank):
        h = len(b) // 2
        padded[i, half - h:half + h + 1] = b
    spec = sfft.fft(padded, axis=-1)
    spec.setflags(write=False)
    return spec, half, nfft


def morlet_cwt(x, sample_rate_hz: float, freqs, n_cycles: float = MORLET_CYCLES) -> np.ndarray:
    """Magnitude scalogram ``|x * psi_f|`` for each frequency, 'same'-aligned.

    ``x`` may carry leading batch axes; the output has shape
    ``x.shape[:-1] + (len(freqs), x.shape[-1])``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise TfaError("signal must be finite")
    freqs = _check_freqs(freqs, sample_rate_hz)
    n = x.shape[-1]
    bank, half, nfft = _wavelet_bank(float(sample_rate_hz), tuple(freqs.tolist()), n, float(n_cycles))
    xf = sfft.fft(x, n=nfft, axis=-1)
    out = sfft.ifft(xf[..., None, :] * bank, axis=-1)
    return np.abs(out[..., half:half + n])


def build_spectrogram(trial, sample_rate_hz: float, cfg: TfaConfig = TfaConfig()) -> Spectrogram:
    sig = np.asarray(trial.signal if hasattr(trial, "signal") else trial, dtype=np.float64)
    if sig.ndim == 1:
        sig = sig[None, :]
    if cfg.channel_agg == "single":
        if not 0 <= cfg.channel_index < sig.shape[0]:
            raise TfaError(f"channel_index {cfg.channel_index} out of range")
        sig = sig[cfg.channel_index:cfg.channel_index + 1]
    elif cfg.channel_agg != "mean":
        raise TfaError(f"unknown channel_agg {cfg.channel_agg!r}")

    low = downsample(sig, cfg.downsample_factor)
    fs = sample_rate_hz / cfg.downsample_factor
    n = low.shape[-1]
    if n < cfg.n_times:
        raise TfaError(f"too few samples after downsampling: {n} < {cfg.n_times}")
    freqs = freq_axis(cfg)
    start = (n - cfg.n_times) // 2

    acc = np.zeros((cfg.n_freqs, cfg.n_times))
    for ch in range(low.shape[0]):
        acc += morlet_cwt(low[ch], fs, freqs, cfg.n_cycles)[:, start:start + cfg.n_times]
    acc /= low.shape[0]

    if cfg.clip_percentile < 100:
        acc = np.minimum(acc, np.percentile(acc, cfg.clip_percentile))
    times = (start + np.arange(cfg.n_times)) / fs
    return Spectrogram(acc.astype(np.float32), freqs, times)


def cell_means(values, g: GridSpec = GridSpec()) -> np.ndarray:
    """(h, w) matrix of per-cell mean magnitude."""
    v = np.asarray(values, dtype=np.float64)
    return v.reshape(g.h, g.patch_height, g.w, g.patch_width).mean(axis=(1, 3))
