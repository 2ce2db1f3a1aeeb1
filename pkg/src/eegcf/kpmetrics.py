"""Keypoint-based scoring of counterfactual edits: Near-KP, Same-KP, #Edits."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from eegcf.tfa import GridSpec, TfaConfig, freq_axis as default_freq_axis

KEYPOINT_UPPER_HZ = 12.4


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class KeypointSet:
    cells: frozenset  # of (grid_row, grid_col), ascending-frequency rows
    grid: GridSpec = GridSpec()
    provenance: str = ""

    def __post_init__(self):
        cells = frozenset((int(r), int(c)) for r, c in self.cells)
        for r, c in cells:
            if not (0 <= r < self.grid.h and 0 <= c < self.grid.w):
                raise MetricsError(f"keypoint ({r}, {c}) outside {self.grid.h}x{self.grid.w} grid")
        object.__setattr__(self, "cells", cells)

    @property
    def flat(self) -> frozenset:
        return frozenset(r * self.grid.w + c for r, c in self.cells)

    def __len__(self):
        return len(self.cells)


def row_hz_ranges(g: GridSpec, freqs) -> list:
    """(low, high) Hz of the first and last frequency bin in each grid row."""
    freqs = np.asarray(freqs, dtype=np.float64)
    ph = g.patch_height
    return [(float(freqs[r * ph]), float(freqs[(r + 1) * ph - 1])) for r in range(g.h)]


def default_keypoints(g: GridSpec = GridSpec(), freqs=None) -> KeypointSet:
    """The ten cells covering the delta/theta/alpha rows (up to 12.4 Hz) at
    the five central time columns."""
    if (g.h, g.w) != (7, 7):
        raise MetricsError("default keypoints are defined for the 7x7 grid only; pass an explicit KeypointSet")
    if freqs is None:
        freqs = default_freq_axis(TfaConfig())
    freqs = np.asarray(freqs, dtype=np.float64)
    if len(freqs) != g.size or np.any(np.diff(freqs) <= 0):
        raise MetricsError("frequency axis must be ascending with one entry per spectrogram row")
    rows = [r for r, (lo, _) in enumerate(row_hz_ranges(g, freqs)) if lo < KEYPOINT_UPPER_HZ]
    if len(rows) != 2:
        raise MetricsError(f"expected 2 grid rows below {KEYPOINT_UPPER_HZ} Hz, found {len(rows)}")
    cells = {(r, c) for r in rows for c in range(1, g.w - 1)}
    return KeypointSet(frozenset(cells), g, f"rows {rows} (<= {KEYPOINT_UPPER_HZ} Hz) x columns 1..{g.w - 2}")


def _edits(results):
    results = list(results)
    if not results:
        raise MetricsError("no results to score")
    return [e for r in results for e in r.edits]


def near_kp(results, kp: KeypointSet, lenient: bool = False) -> float:
    """Percent of edits whose query and distractor cells are both keypoints
    (either one, when ``lenient``). No edits at all scores 0."""
    edits = _edits(results)
    if not edits:
        return 0.0
    flat = kp.flat
    if lenient:
        hits = [(q in flat) or (d in flat) for q, d in edits]
    else:
        hits = [(q in flat) and (d in flat) for q, d in edits]
    return 100.0 * sum(hits) / len(edits)


def same_kp(results, kp: KeypointSet) -> float:
    """Percent of edits that swap a keypoint cell with the same cell."""
    edits = _edits(results)
    if not edits:
        return 0.0
    flat = kp.flat
    return 100.0 * sum(q == d and q in flat for q, d in edits) / len(edits)


def avg_edits(results):
    """(mean edit count over flipped results or None, flip rate in %)."""
    results = list(results)
    if not results:
        raise MetricsError("no results to score")
    if any(r.mode == "single" for r in results):
        raise MetricsError("metric undefined for mode 'single'")
    flipped = [len(r.edits) for r in results if r.flipped]
    mean = float(np.mean(flipped)) if flipped else None
    return mean, 100.0 * len(flipped) / len(results)


@dataclass(frozen=True)
class MetricsReport:
    near_kp_pct: float
    same_kp_pct: float
    avg_edits: float | None
    flip_rate_pct: float
    n_pairs: int
    n_edits: int
    near_kp_lenient_pct: float
    setting_echo: dict

    def to_json(self) -> dict:
        return asdict(self)


def metrics_report(results, kp: KeypointSet, setting: dict | None = None) -> MetricsReport:
    results = sorted(results, key=lambda r: (r.query_id, r.distractor_id, r.edits))
    modes = {r.mode for r in results}
    if len(modes) > 1:
        raise MetricsError(f"mode mismatch: results mix {sorted(modes)}")
    setting = dict(setting or {})
    mode = modes.pop() if modes else setting.get("mode", "all")
    if setting.get("mode", mode) != mode:
        raise MetricsError(f"mode mismatch: setting says {setting['mode']!r}, results are {mode!r}")
    setting["mode"] = mode
    if mode == "all":
        mean, rate = avg_edits(results)
    else:
        mean = None
        rate = 100.0 * sum(r.flipped for r in results) / len(results) if results else 0.0
    return MetricsReport(
        near_kp_pct=near_kp(results, kp),
        same_kp_pct=same_kp(results, kp),
        avg_edits=mean,
        flip_rate_pct=rate,
        n_pairs=len(results),
        n_edits=sum(len(r.edits) for r in results),
        near_kp_lenient_pct=near_kp(results, kp, lenient=True),
        setting_echo=setting,
    )


def table2_csv(rows) -> str:
    """Rows of (regime, MetricsReport) -> CSV with one line per setting and
    regime; undefined #Edits is written as '-'."""
    lines = ["setting,class_mode,near_kp,same_kp,edits,flip_rate,n_pairs,regime"]
    for regime, rep in rows:
        setting = "Single Edit" if rep.setting_echo.get("mode") == "single" else "All Edits"
        edits = "-" if rep.avg_edits is None else f"{rep.avg_edits:.2f}"
        lines.append(f"{setting},{rep.setting_echo.get('class_mode', '')},{rep.near_kp_pct:.2f},"
                     f"{rep.same_kp_pct:.2f},{edits},{rep.flip_rate_pct:.2f},{rep.n_pairs},{regime}")
    return "\n".join(lines) + "\n"
