"""Labeled multichannel trials: synthesis, stratified splitting, and the
manifest + blob on-disk format.

The manifest is a JSON document describing the trials; the blob holds the
raw samples as little-endian float32, trial-major, then channel-major, then
sample order, with no header.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
LABEL_MODES = ("task", "subject_x_task")
_BLOB_DTYPE = np.dtype("<f4")


class TrialStoreError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trial:
    signal: np.ndarray  # (n_channels, n_samples) float32
    label: int
    subject: int = 0
    session: int = 0

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float32)
        if sig.ndim != 2 or sig.shape[0] < 1 or sig.shape[1] < 1:
            raise TrialStoreError(f"signal must be (n_channels>=1, n_samples>=1), got {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise TrialStoreError("non-finite sample in trial signal")
        sig.setflags(write=False)
        object.__setattr__(self, "signal", sig)

    @property
    def n_channels(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]


@dataclass(frozen=True, eq=False)
class TrialSet:
    trials: tuple
    sample_rate_hz: float
    class_count: int
    class_names: tuple = ()
    label_mode: str = "task"

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(f"class_{k}" for k in range(self.class_count)))
        else:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.sample_rate_hz <= 0:
            raise TrialStoreError("sample_rate_hz must be positive")
        if self.class_count < 1:
            raise TrialStoreError("class_count must be positive")
        if len(self.class_names) != self.class_count:
            raise TrialStoreError("class_names length must equal class_count")
        if self.label_mode not in LABEL_MODES:
            raise TrialStoreError(f"unknown label_mode {self.label_mode!r}")
        shapes = {t.signal.shape for t in self.trials}
        if len(shapes) > 1:
            raise TrialStoreError(f"trials disagree on shape: {sorted(shapes)}")
        for i, t in enumerate(self.trials):
            if not 0 <= t.label < self.class_count:
                raise TrialStoreError(f"trial {i}: label {t.label} >= class_count {self.class_count}")

    def __len__(self):
        return len(self.trials)

    @property
    def n_channels(self) -> int:
        return self.trials[0].n_channels if self.trials else 0

    @property
    def n_samples(self) -> int:
        return self.trials[0].n_samples if self.trials else 0

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def subjects(self) -> np.ndarray:
        return np.array([t.subject for t in self.trials], dtype=np.int64)

    @property
    def sessions(self) -> np.ndarray:
        return np.array([t.session for t in self.trials], dtype=np.int64)

    def equals(self, other: "TrialSet") -> bool:
        """Bit-exact comparison of signals and metadata."""
        if (self.sample_rate_hz, self.class_count, self.class_names, self.label_mode, len(self)) != (
            other.sample_rate_hz, other.class_count, other.class_names, other.label_mode, len(other)
        ):
            return False
        return all(
            a.label == b.label and a.subject == b.subject and a.session == b.session
            and a.signal.shape == b.signal.shape and a.signal.tobytes() == b.signal.tobytes()
            for a, b in zip(self.trials, other.trials)
        )

    def subset(self, indices) -> "TrialSet":
        return TrialSet(
            trials=tuple(self.trials[i] for i in indices),
            sample_rate_hz=self.sample_rate_hz,
            class_count=self.class_count,
            class_names=self.class_names,
            label_mode=self.label_mode,
        )


def _blob_path(manifest_path: Path, blob: str) -> Path:
    return manifest_path.parent / blob


def save_trialset(ts: TrialSet, manifest_path) -> None:
    manifest_path = Path(manifest_path)
    blob_name = manifest_path.with_suffix(".bin").name
    manifest = {
        "version": FORMAT_VERSION,
        "n_trials": len(ts),
        "n_channels": ts.n_channels,
        "n_samples": ts.n_samples,
        "sample_rate_hz": float(ts.sample_rate_hz),
        "class_count": ts.class_count,
        "class_names": list(ts.class_names),
        "label_mode": ts.label_mode,
        "labels": [int(t.label) for t in ts.trials],
        "subjects": [int(t.subject) for t in ts.trials],
        "sessions": [int(t.session) for t in ts.trials],
        "blob": blob_name,
    }
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        with open(_blob_path(manifest_path, blob_name), "wb") as fh:
            for t in ts.trials:
                fh.write(np.ascontiguousarray(t.signal, dtype=_BLOB_DTYPE).tobytes())
        manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise TrialStoreError(f"cannot write trialset to {manifest_path}: {exc}") from exc


def load_trialset(manifest_path) -> TrialSet:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise TrialStoreError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise TrialStoreError(f"unsupported manifest version {manifest.get('version')!r}")
    blob_path = _blob_path(manifest_path, manifest["blob"])
    if not blob_path.is_file():
        raise TrialStoreError(f"missing blob: {blob_path}")

    n, n_ch, n_s = manifest["n_trials"], manifest["n_channels"], manifest["n_samples"]
    expected = n * n_ch * n_s * _BLOB_DTYPE.itemsize
    actual = os.path.getsize(blob_path)
    if actual != expected:
        raise TrialStoreError(f"size mismatch: blob has {actual} bytes, manifest implies {expected}")
    for key in ("labels", "subjects", "sessions"):
        if len(manifest[key]) != n:
            raise TrialStoreError(f"size mismatch: {key} has {len(manifest[key])} entries for {n} trials")

    data = np.fromfile(blob_path, dtype=_BLOB_DTYPE).reshape(n, n_ch, n_s) if n else None
    class_count = manifest["class_count"]
    trials = []
    for i in range(n):
        label = int(manifest["labels"][i])
        if not 0 <= label < class_count:
            raise TrialStoreError(f"trial {i}: label {label} >= class_count {class_count}")
        sig = data[i].astype(np.float32)
        if not np.all(np.isfinite(sig)):
            raise TrialStoreError(f"trial {i}: non-finite sample")
        trials.append(Trial(sig, label, int(manifest["subjects"][i]), int(manifest["sessions"][i])))
    return TrialSet(
        trials=tuple(trials),
        sample_rate_hz=float(manifest["sample_rate_hz"]),
        class_count=class_count,
        class_names=tuple(manifest.get("class_names") or ()),
        label_mode=manifest.get("label_mode", "task"),
    )


# --------------------------------------------------------------------------
# synthetic motor-imagery trials


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale stand-in for a two-task motor-imagery recording.

    Each trial carries an alpha burst in the central third of the trial on
    every channel. The two channel groups (first and second half of the
    montage) oscillate at slightly different alpha frequencies
    (``alpha_hz`` and ``alpha_hz - lateral_shift_hz``); the task attenuates
    the burst on one group by ``erd_depth`` (class 0: first group, class 1:
    second group). Background is 1/f noise with standard deviation
    ``1/snr`` relative to the unit alpha amplitude, plus a class-independent
    beta burst (random frequency in ``nuisance_band_hz``, random onset, random
    strength up to ``nuisance_gain / snr``) that carries no label information.
    """

    n_trials_per_class: int = 200
    n_channels: int = 22
    n_samples: int = 750
    sample_rate_hz: float = 250.0
    alpha_hz: float = 10.0
    snr: float = 2.0
    seed: int = 0
    alpha_amplitude: float = 1.0
    erd_depth: float = 0.8
    lateral_shift_hz: float = 2.0
    n_subjects: int = 1
    n_sessions: int = 1
    subject_spread_hz: float = 0.0
    label_mode: str = "task"
    nuisance_gain: float = 2.0
    nuisance_band_hz: tuple = (18.0, 30.0)

    def validate(self):
        if self.n_trials_per_class < 0:
            raise TrialStoreError("n_trials_per_class must be >= 0")
        if self.n_channels < 2:
            raise TrialStoreError("n_channels must be >= 2")
        if self.sample_rate_hz <= 0 or self.alpha_hz <= 0:
            raise TrialStoreError("sample_rate_hz and alpha_hz must be positive")
        if self.n_samples < 2 * self.sample_rate_hz / self.alpha_hz:
            raise TrialStoreError("n_samples must cover at least two alpha cycles")
        if not self.snr > 0:
            raise TrialStoreError("snr must be positive (use inf for noise-free)")
        if self.alpha_amplitude < 0 or not 0 <= self.erd_depth <= 1:
            raise TrialStoreError("alpha_amplitude must be >= 0 and erd_depth in [0, 1]")
        if self.alpha_hz - self.lateral_shift_hz <= 0:
            raise TrialStoreError("alpha_hz - lateral_shift_hz must be positive")
        if self.n_subjects < 1 or self.n_sessions < 1:
            raise TrialStoreError("n_subjects and n_sessions must be >= 1")
        if self.label_mode not in LABEL_MODES:
            raise TrialStoreError(f"unknown label_mode {self.label_mode!r}")
        lo, hi = self.nuisance_band_hz
        if self.nuisance_gain < 0 or not 0 < lo <= hi < self.sample_rate_hz / 2:
            raise TrialStoreError("nuisance_gain must be >= 0 and nuisance_band_hz inside (0, Nyquist)")


def pink_noise(rng: np.random.Generator, shape, sample_rate_hz: float) -> np.ndarray:
    """Unit-variance 1/f noise along the last axis (spectral shaping of white noise)."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    spec = np.fft.rfft(white, axis=-1)
    f = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    x = np.fft.irfft(spec * scale, n=n, axis=-1)
    std = x.std(axis=-1, keepdims=True)
    return x / np.where(std > 0, std, 1.0)


def _burst_envelope(n_samples: int, lo: int | None = None) -> np.ndarray:
    """Hann-tapered window one third of the trial long, starting at ``lo``
    (default: the central third)."""
    env = np.zeros(n_samples)
    width = n_samples // 3
    if lo is None:
        lo = n_samples // 3
    if width > 0:
        env[lo:lo + width] = np.hanning(width + 2)[1:-1] ** 0.5
    return env


def synth_mi_trials(cfg: SynthConfig) -> TrialSet:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_tasks = 2
    t = np.arange(cfg.n_samples) / cfg.sample_rate_hz
    env = _burst_envelope(cfg.n_samples)
    half = cfg.n_channels // 2
    noise_std = 0.0 if math.isinf(cfg.snr) else 1.0 / cfg.snr

    if cfg.label_mode == "task":
        class_count = n_tasks
        class_names = ("left_hand", "right_hand")
    else:
        class_count = n_tasks * cfg.n_subjects
        class_names = tuple(f"s{s}_{name}" for s in range(cfg.n_subjects) for name in ("left_hand", "right_hand"))

    trials = []
    for subject in range(cfg.n_subjects):
        if cfg.n_subjects > 1:
            offset = cfg.subject_spread_hz * (subject / (cfg.n_subjects - 1) - 0.5)
        else:
            offset = 0.0
        freqs = (cfg.alpha_hz + offset, cfg.alpha_hz - cfg.lateral_shift_hz + offset)
        for task in range(n_tasks):
            for k in range(cfg.n_trials_per_class):
                gains = np.ones(cfg.n_channels)
                if task == 0:
                    gains[:half] = 1.0 - cfg.erd_depth
                else:
                    gains[half:] = 1.0 - cfg.erd_depth
                phases = rng.uniform(0, 2 * np.pi, size=cfg.n_channels)
                ch_freq = np.where(np.arange(cfg.n_channels) < half, freqs[0], freqs[1])
                alpha = np.sin(2 * np.pi * ch_freq[:, None] * t[None, :] + phases[:, None])
                sig = cfg.alpha_amplitude * gains[:, None] * env[None, :] * alpha
                noise = pink_noise(rng, (cfg.n_channels, cfg.n_samples), cfg.sample_rate_hz)
                nf = rng.uniform(*cfg.nuisance_band_hz)
                n_env = _burst_envelope(cfg.n_samples, int(rng.integers(0, cfg.n_samples - cfg.n_samples // 3 + 1)))
                n_gain = cfg.nuisance_gain * rng.uniform()
                n_phase = rng.uniform(0, 2 * np.pi, size=cfg.n_channels)
                nuisance = n_gain * n_env[None, :] * np.sin(2 * np.pi * nf * t[None, :] + n_phase[:, None])
                if noise_std > 0:
                    sig = sig + noise_std * (noise + nuisance)
                label = task if cfg.label_mode == "task" else subject * n_tasks + task
                session = k % cfg.n_sessions
                trials.append(Trial(sig.astype(np.float32), label, subject, session))
    return TrialSet(
        trials=tuple(trials),
        sample_rate_hz=cfg.sample_rate_hz,
        class_count=class_count,
        class_names=class_names,
        label_mode=cfg.label_mode,
    )


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    val_fraction: float = 0.25
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise TrialStoreError("split fractions must lie in [0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise TrialStoreError(f"split fractions must sum to 1, got {sum(fr)!r}")


@dataclass(frozen=True)
class SplitIndices:
    train: tuple
    val: tuple
    test: tuple
    strata: dict = field(default_factory=dict, compare=False)

    def as_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def split_indices(ts: TrialSet, spec: SplitSpec) -> SplitIndices:
    """Stratified (subject, class) partition of trial indices."""
    rng = np.random.default_rng(spec.seed)
    labels, subjects = ts.labels, ts.subjects
    strata = {}
    for i, key in enumerate(zip(subjects.tolist(), labels.tolist())):
        strata.setdefault(key, []).append(i)
    train, val, test = [], [], []
    for key in sorted(strata):
        idx = np.array(strata[key])
        if len(idx) < 4:
            raise TrialStoreError(f"stratum too small: subject={key[0]} class={key[1]} has {len(idx)} trials (< 4)")
        perm = idx[rng.permutation(len(idx))]
        n_train = int(round(spec.train_fraction * len(idx)))
        n_val = int(round(spec.val_fraction * len(idx)))
        n_val = min(n_val, len(idx) - n_train)
        train.extend(perm[:n_train].tolist())
        val.extend(perm[n_train:n_train + n_val].tolist())
        test.extend(perm[n_train + n_val:].tolist())
    return SplitIndices(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), strata)


def split(ts: TrialSet, spec: SplitSpec):
    parts = split_indices(ts, spec)
    return ts.subset(parts.train), ts.subset(parts.val), ts.subset(parts.test)
