"""Edit-pair histograms, boundary-corrected 2-D KDE, and SVG/CSV emitters."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from eegcf.compactnet import REGIMES
from eegcf.kpmetrics import row_hz_ranges
from eegcf.tfa import GridSpec, TfaConfig, cell_bounds, freq_axis as default_freq_axis

DEFAULT_KDE_GRID = 196
BANDWIDTH_FLOOR = 0.5


class ReportError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EditPairHistogram:
    counts: np.ndarray  # (hw, hw) int, row = query cell, col = distractor cell
    n_edits: int

    @property
    def query_marginal(self):
        return self.counts.sum(axis=1)

    @property
    def distractor_marginal(self):
        return self.counts.sum(axis=0)


@dataclass(frozen=True, eq=False)
class KdeGrid:
    density: np.ndarray  # (G, G), axis 0 = query coordinate, axis 1 = distractor coordinate
    axis: np.ndarray  # G node coordinates in cell units over [0, hw)
    bandwidth: tuple
    marginals: tuple  # (query, distractor) probability mass of each of the hw cells


def edit_pair_histogram(results, hw: int = 49) -> EditPairHistogram:
    counts = np.zeros((hw, hw), dtype=np.int64)
    for r in results:
        for q, d in r.edits:
            counts[q, d] += 1
    return EditPairHistogram(counts, int(counts.sum()))


def _points(results):
    pts = np.array([(q, d) for r in results for q, d in r.edits], dtype=np.float64).reshape(-1, 2)
    return pts + 0.5  # cell k occupies [k, k + 1)


def scott_bandwidth(points) -> tuple:
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    sd = pts.std(axis=0, ddof=1) if n > 1 else np.zeros(2)
    bw = n ** (-1.0 / 6.0) * sd
    return tuple(float(max(b, BANDWIDTH_FLOOR)) for b in bw)


def _axis_kernel(centers, bw, nodes, upper):
    """(n_points, n_nodes) Gaussian kernels renormalized to unit mass on [0, upper]."""
    u = (nodes[None, :] - centers[:, None]) / bw
    mass = ndtr((upper - centers) / bw) - ndtr(-centers / bw)
    return np.exp(-0.5 * u * u) / (bw * np.sqrt(2 * np.pi) * mass[:, None])


def _axis_cell_mass(centers, bw, hw):
    """(hw,) mean over points of each truncated kernel's mass in [k, k + 1)."""
    edges = np.arange(hw + 1, dtype=np.float64)
    cdf = ndtr((edges[None, :] - centers[:, None]) / bw)
    mass = (cdf[:, 1:] - cdf[:, :-1]) / (cdf[:, -1] - cdf[:, 0])[:, None]
    return mass.mean(axis=0)


def kde_density(points, bandwidth, x, y, hw: int = 49) -> np.ndarray:
    """Product-Gaussian KDE, truncated to [0, hw]^2, evaluated on the x-by-y mesh."""
    pts = np.asarray(points, dtype=np.float64)
    kx = _axis_kernel(pts[:, 0], bandwidth[0], np.asarray(x, dtype=np.float64), hw)
    ky = _axis_kernel(pts[:, 1], bandwidth[1], np.asarray(y, dtype=np.float64), hw)
    return kx.T @ ky / len(pts)


def kde2d(results, bandwidth=None, grid: int = DEFAULT_KDE_GRID, hw: int = 49) -> KdeGrid:
    """Joint density of (query cell, distractor cell) edit pairs.

    Each kernel is renormalized to the [0, hw]^2 domain so the density
    integrates to one there. Default bandwidth is Scott's rule per axis with
    a floor of half a cell.
    """
    pts = _points(results)
    if len(pts) == 0:
        raise ReportError("kde2d needs at least one edit")
    bw = scott_bandwidth(pts) if bandwidth is None else tuple(float(b) for b in bandwidth)
    if min(bw) <= 0:
        raise ReportError("bandwidth must be positive")
    axis = (np.arange(grid) + 0.5) * (hw / grid)
    density = kde_density(pts, bw, axis, axis, hw)
    marginals = (_axis_cell_mass(pts[:, 0], bw[0], hw), _axis_cell_mass(pts[:, 1], bw[1], hw))
    return KdeGrid(density, axis, bw, marginals)


# --------------------------------------------------------------------------
# CSV


def histogram_csv(h: EditPairHistogram) -> str:
    n = h.counts.shape[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_cell"] + [str(d) for d in range(n)])
    for q in range(n):
        w.writerow([q] + [int(v) for v in h.counts[q]])
    return buf.getvalue()


def read_histogram_csv(path) -> EditPairHistogram:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    return EditPairHistogram(counts, int(counts.sum()))


def kde_csv(k: KdeGrid) -> str:
    lines = ["query_coord," + ",".join(f"{a:.4f}" for a in k.axis)]
    for a, row in zip(k.axis, k.density):
        lines.append(f"{a:.4f}," + ",".join(f"{v:.9e}" for v in row))
    return "\n".join(lines) + "\n"


def marginals_csv(h: EditPairHistogram, k: KdeGrid) -> str:
    lines = ["cell,query_count,distractor_count,query_kde_mass,distractor_kde_mass"]
    qc, dc = h.query_marginal, h.distractor_marginal
    for i in range(len(qc)):
        lines.append(f"{i},{qc[i]},{dc[i]},{k.marginals[0][i]:.9e},{k.marginals[1][i]:.9e}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# SVG


def _gray(v):
    g = int(round(255 * min(max(v, 0.0), 1.0)))
    return f"#{g:02x}{g:02x}{g:02x}"


def _heatmap_rects(values, x0, y0, px, flip=True):
    """Rects for a 2-D array; row 0 is drawn at the bottom when ``flip``."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max()
    scale = 1.0 / top if top > 0 else 0.0
    rows, cols = v.shape
    out = []
    for r in range(rows):
        yr = rows - 1 - r if flip else r
        for c in range(cols):
            out.append(f'<rect x="{x0 + c * px:.2f}" y="{y0 + yr * px:.2f}" width="{px:.2f}" height="{px:.2f}" '
                       f'fill="{_gray(v[r, c] * scale)}"/>')
    return out


def _block_mean(v, block):
    r, c = v.shape
    return v.reshape(r // block, block, c // block, block).mean(axis=(1, 3))


def _write(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def emit_edit_overlay(spec_q, spec_d, result, path, g: GridSpec = GridSpec(), block: int = 4) -> None:
    """Query and distractor spectrograms side by side (low frequencies at the
    bottom) with a numbered red box at every edited cell."""
    vq = _block_mean(np.asarray(getattr(spec_q, "values", spec_q), dtype=np.float64), block)
    vd = _block_mean(np.asarray(getattr(spec_d, "values", spec_d), dtype=np.float64), block)
    size = g.size
    gap, margin = 20, 20
    width = 2 * size + gap + 2 * margin
    height = size + 2 * margin + 20
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{margin}" y="{margin - 6}" font-size="11">query {result.query_id} (class {result.source_class})</text>',
        f'<text x="{margin + size + gap}" y="{margin - 6}" font-size="11">'
        f'distractor {result.distractor_id} (class {result.target_class})</text>',
    ]
    for k, (v, x0) in enumerate(((vq, margin), (vd, margin + size + gap))):
        parts.append(f'<g id="panel{k}">')
        parts.extend(_heatmap_rects(v, x0, margin, block))
        parts.append("</g>")
    for n, (q, d) in enumerate(result.edits, start=1):
        for cell, x0 in ((q, margin), (d, margin + size + gap)):
            (r0, r1), (c0, c1) = cell_bounds(g, cell)
            y = margin + size - r1
            parts.append(f'<rect class="edit" x="{x0 + c0}" y="{y}" width="{c1 - c0}" height="{r1 - r0}" '
                         f'fill="none" stroke="red" stroke-width="2"/>')
            parts.append(f'<text x="{x0 + c0 + 3}" y="{y + 12}" font-size="10" fill="red">{n}</text>')
    status = "flipped" if result.flipped else "not flipped"
    parts.append(f'<text x="{margin}" y="{height - 8}" font-size="11"># edits = {len(result.edits)}, {status}</text>')
    parts.append("</svg>")
    _write(path, "\n".join(parts) + "\n")


def _block_labels(g: GridSpec, freqs):
    return [f"{lo:.1f}-{hi:.1f} Hz" for lo, hi in row_hz_ranges(g, freqs)]


def emit_regime_grid(panels: dict, path_prefix, g: GridSpec = GridSpec(), freqs=None) -> list:
    """One KDE panel with marginal histograms per training regime plus CSV dumps.

    ``panels`` maps each of underfit / well_trained / overfit to
    ``(EditPairHistogram, KdeGrid)``. Returns the written paths.
    """
    for regime in REGIMES:
        if regime not in panels:
            raise ReportError(f"missing regime: {regime}")
    if freqs is None:
        freqs = default_freq_axis(TfaConfig())
    prefix = str(path_prefix)
    written = []
    for regime in REGIMES:
        h, k = panels[regime]
        for kind, text in (("hist", histogram_csv(h)), ("kde", kde_csv(k)), ("marginals", marginals_csv(h, k))):
            p = f"{prefix}_{regime}_{kind}.csv"
            _write(p, text)
            written.append(p)

    hw = g.hw
    cell_px = 4
    side = hw * cell_px
    bar = 40
    margin = 30
    panel_w = side + bar + 2 * margin + 60
    width = 3 * panel_w
    height = side + bar + 2 * margin + 40
    labels = _block_labels(g, freqs)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    for i, regime in enumerate(REGIMES):
        h, k = panels[regime]
        x0 = i * panel_w + margin
        y0 = margin + bar
        block = max(1, k.density.shape[0] // hw)
        dens = k.density
        if dens.shape[0] % block == 0 and dens.shape[0] // block == hw:
            dens = _block_mean(dens, block)
        parts.append(f'<g id="{regime}">')
        parts.append(f'<text x="{x0}" y="{margin - 10}" font-size="12">{regime}</text>')
        # density: query cell on the vertical axis (cell 0 at the bottom), distractor on the horizontal
        parts.extend(_heatmap_rects(dens, x0, y0, side / dens.shape[0]))
        qm, dm = h.query_marginal.astype(np.float64), h.distractor_marginal.astype(np.float64)
        top = max(qm.max(initial=0), dm.max(initial=0), 1.0)
        for c in range(hw):
            bh = bar * dm[c] / top
            parts.append(f'<rect class="marginal" x="{x0 + c * cell_px}" y="{y0 - bh:.2f}" width="{cell_px}" '
                         f'height="{bh:.2f}" fill="#4a4a4a"/>')
            bw_ = bar * qm[c] / top
            parts.append(f'<rect class="marginal" x="{x0 + side}" y="{y0 + side - (c + 1) * cell_px}" '
                         f'width="{bw_:.2f}" height="{cell_px}" fill="#4a4a4a"/>')
        for b in range(g.h):
            pos = b * g.w * cell_px
            parts.append(f'<text x="{x0 + pos}" y="{y0 + side + 12}" font-size="7">{labels[b]}</text>')
            parts.append(f'<text x="{x0 + side + bar + 4}" y="{y0 + side - pos - 10}" font-size="7">{labels[b]}</text>')
        parts.append(f'<text x="{x0}" y="{y0 + side + 26}" font-size="9">distractor cell (n={h.n_edits})</text>')
        parts.append("</g>")
    parts.append("</svg>")
    svg = f"{prefix}_grid.svg"
    _write(svg, "\n".join(parts) + "\n")
    written.append(svg)
    return written
