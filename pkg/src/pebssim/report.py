"""Turn a dump into per-mapping analysis artifacts (CSV and SVG).

Files are named ``<stem>.<mapping_id>.<artifact>.<ext>``; dump-wide
artifacts use ``all`` as the mapping id.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from . import analyzer as an
from .trace_io import TraceDump

ARTIFACTS = ("heatmap", "intervals", "histogram", "hot", "coverage")


@dataclass
class MappingReport:
    mapping: an.LiveRange
    samples: list
    heatmap: an.Heatmap
    histogram: an.PageHistogram
    hot: list
    coverage: int


@dataclass
class Report:
    history: an.MappingHistory
    classification: an.Classification
    intervals: an.IntervalStats
    mappings: list = field(default_factory=list)

    @property
    def coverage(self) -> int:
        return sum(m.coverage for m in self.mappings)


def analyze(
    dump: TraceDump,
    map_threshold: int = an.MAP_THRESHOLD,
    block_pages: int = an.BLOCK_PAGES,
    hot_threshold: int = an.HOT_THRESHOLD,
    bin_width: Optional[float] = None,
) -> Report:
    history = an.reconstruct(dump.mappings, map_threshold)
    cls = an.classify(dump, history)
    rep = Report(history, cls, an.interrupt_intervals(dump, bin_width))
    for rid in sorted(cls.samples):
        samples = cls.samples[rid]
        mapping = history[rid]
        hist = an.page_histogram(samples, dump.page_size)
        rep.mappings.append(
            MappingReport(
                mapping,
                samples,
                an.heatmap(samples, mapping, block_pages, dump.page_size),
                hist,
                an.hot_pages(hist, hot_threshold),
                an.coverage(samples, dump.page_size),
            )
        )
    return rep


def _writer(path: Path, header):
    fh = open(path, "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def write_heatmap_csv(hm: an.Heatmap, path: Path) -> None:
    fh, w = _writer(path, ["batch_seq"] + [f"b{i}" for i in range(hm.matrix.shape[1])])
    with fh:
        for seq, row in enumerate(hm.matrix):
            w.writerow([seq, *row.tolist()])


def _shrink(matrix: np.ndarray, max_rows: int, max_cols: int) -> np.ndarray:
    """Sum-pool a matrix so it fits a max_rows x max_cols grid."""
    r, c = matrix.shape
    fr, fc = max(1, -(-r // max_rows)), max(1, -(-c // max_cols))
    if fr == 1 and fc == 1:
        return matrix
    padded = np.zeros((-(-r // fr) * fr, -(-c // fc) * fc), dtype=matrix.dtype)
    padded[:r, :c] = matrix
    return padded.reshape(padded.shape[0] // fr, fr, padded.shape[1] // fc, fc).sum(axis=(1, 3))


def heatmap_svg(hm: an.Heatmap, title: str = "") -> str:
    """Sample set on x, address block on y (low addresses at the bottom)."""
    grid = _shrink(hm.matrix, 800, 600).T  # rows: blocks, cols: batches
    nb, ns = grid.shape if grid.size else (1, 1)
    cw = max(1.0, min(8.0, 800 / max(ns, 1)))
    ch = max(1.0, min(8.0, 600 / max(nb, 1)))
    ml, mt, mb = 60, 30, 40
    width, height = ml + ns * cw + 20, mt + nb * ch + mb
    top = float(grid.max()) if grid.size else 0.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml}" y="18" font-family="sans-serif" font-size="12">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{ns * cw:.1f}" height="{nb * ch:.1f}" fill="none" stroke="#999"/>',
    ]
    if top > 0:
        ys, xs = np.nonzero(grid)
        for y, x in zip(ys.tolist(), xs.tolist()):
            level = math.log1p(grid[y, x]) / math.log1p(top)
            shade = int(235 * (1 - level))
            py = mt + (nb - 1 - y) * ch
            parts.append(
                f'<rect x="{ml + x * cw:.1f}" y="{py:.1f}" width="{cw:.1f}" height="{ch:.1f}" '
                f'fill="rgb(255,{shade},{shade // 2})"/>'
            )
    parts.append(
        f'<text x="{ml}" y="{height - 12:.0f}" font-family="sans-serif" font-size="11">'
        f"sample set id (0..{hm.matrix.shape[0] - 1})</text>"
    )
    parts.append(
        f'<text x="12" y="{mt + nb * ch / 2:.0f}" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 12 {mt + nb * ch / 2:.0f})">{hm.block_pages}-page blocks from {hm.start:#x}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bars_svg(values: list, xlabel: str, ylabel: str, title: str = "") -> str:
    n = max(len(values), 1)
    bw = max(2.0, min(20.0, 600 / n))
    ml, mt, mb, ph = 60, 30, 40, 300
    width, height = ml + n * bw + 20, mt + ph + mb
    top = max(values, default=0) or 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height}" '
        f'viewBox="0 0 {width:.0f} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml}" y="18" font-family="sans-serif" font-size="12">{escape(title)}</text>',
    ]
    for i, v in enumerate(values):
        h = ph * v / top
        parts.append(
            f'<rect x="{ml + i * bw:.1f}" y="{mt + ph - h:.1f}" width="{bw * 0.9:.1f}" height="{h:.1f}" fill="#4a7ab5"/>'
        )
    parts.append(f'<text x="{ml}" y="{height - 12}" font-family="sans-serif" font-size="11">{escape(xlabel)}</text>')
    parts.append(
        f'<text x="12" y="{mt + ph / 2:.0f}" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 12 {mt + ph / 2:.0f})">{escape(ylabel)}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_reports(rep: Report, out_dir, stem: str, select=ARTIFACTS) -> list:
    """Write the selected artifacts plus ``<stem>.summary.txt``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def path(mid, artifact, ext):
        p = out / f"{stem}.{mid}.{artifact}.{ext}"
        written.append(p)
        return p

    for m in rep.mappings:
        mid = m.mapping.range_id
        if "heatmap" in select:
            write_heatmap_csv(m.heatmap, path(mid, "heatmap", "csv"))
            path(mid, "heatmap", "svg").write_text(
                heatmap_svg(m.heatmap, f"mapping {mid} @ {m.mapping.start:#x}"), encoding="utf-8"
            )
        if "histogram" in select:
            fh, w = _writer(path(mid, "histogram", "csv"), ["misses", "pages"])
            with fh:
                w.writerows(m.histogram.histogram.items())
            fh, w = _writer(path(mid, "pages", "csv"), ["page", "addr", "count"])
            with fh:
                for p, c in sorted(m.histogram.page_counts.items()):
                    w.writerow([p, hex(p * m.heatmap.page_size), c])
            top = max(m.histogram.histogram, default=0)
            bars = [m.histogram.histogram.get(i, 0) for i in range(1, top + 1)]
            path(mid, "histogram", "svg").write_text(
                bars_svg(bars, "sampled L2 misses per page (1..max)", "pages", f"mapping {mid}"), encoding="utf-8"
            )
        if "hot" in select:
            fh, w = _writer(path(mid, "hot", "csv"), ["rank", "page", "addr", "count"])
            with fh:
                for rank, p in enumerate(m.hot):
                    w.writerow([rank, p, hex(p * m.heatmap.page_size), m.histogram.page_counts[p]])

    if "coverage" in select:
        fh, w = _writer(path("all", "coverage", "csv"), ["mapping_id", "start", "length", "samples", "pages_touched"])
        with fh:
            for m in rep.mappings:
                w.writerow([m.mapping.range_id, hex(m.mapping.start), m.mapping.length, len(m.samples), m.coverage])
    if "intervals" in select:
        iv = rep.intervals
        fh, w = _writer(path("all", "intervals", "csv"), ["thread_id", "delta"])
        with fh:
            for tid in sorted(iv.deltas):
                w.writerows((tid, d) for d in iv.deltas[tid])
        fh, w = _writer(path("all", "intervals-hist", "csv"), ["bin_start", "bin_end", "count"])
        with fh:
            for i, c in enumerate(iv.histogram):
                w.writerow([i * iv.bin_width, (i + 1) * iv.bin_width, c])
        path("all", "intervals", "svg").write_text(
            bars_svg(iv.histogram, f"elapsed time between interrupts (bin {iv.bin_width:g})", "count"),
            encoding="utf-8",
        )

    summary = out / f"{stem}.summary.txt"
    summary.write_text(summary_text(rep), encoding="utf-8")
    written.append(summary)
    return written


def summary_text(rep: Report) -> str:
    cls = rep.classification
    lines = [
        f"samples: {cls.total}  assigned: {cls.assigned}  discarded: {cls.discarded}",
        f"tracked ranges: {len(rep.history.ranges)}  with samples: {len(rep.mappings)}",
    ]
    for w in rep.history.warnings + rep.history.violations:
        lines.append(f"warning: {w}")
    for m in rep.mappings:
        lines.append(
            f"mapping {m.mapping.range_id} [{m.mapping.start:#x}, +{m.mapping.length}): "
            f"samples={len(m.samples)} pages_touched={m.coverage} hot_pages={len(m.hot)} "
            f"diagonal_band={an.is_diagonal_band(m.heatmap.matrix)}"
        )
    iv = rep.intervals
    if iv.deltas:
        lines.append(f"interrupt intervals: n={len(iv.all_deltas)} mean={iv.mean:.1f} median={iv.median:g}")
    else:
        lines.append("interrupt intervals: none (fewer than two interrupts per thread)")
    return "\n".join(lines) + "\n"
