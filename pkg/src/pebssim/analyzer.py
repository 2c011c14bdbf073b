"""Offline viewer logic: mapping history, sample classification and the
per-mapping statistics (heatmaps, page histograms, hot pages, coverage,
interrupt intervals) plus the analytic handler-overhead estimate."""

from __future__ import annotations

import bisect
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .events import PAGE_SIZE, MappingEvent
from .sampler import SamplerConfig
from .trace_io import TraceDump

MAP_THRESHOLD = 4 << 20
HOT_THRESHOLD = 50
BLOCK_PAGES = 4


@dataclass
class LiveRange:
    range_id: int
    start: int
    length: int
    t_begin: int
    t_end: Optional[int] = None  # None while still mapped
    origin: int = -1  # range_id of the mmap this piece descends from

    @property
    def end(self) -> int:
        return self.start + self.length

    def live_at(self, t: int) -> bool:
        return self.t_begin <= t and (self.t_end is None or t < self.t_end)


@dataclass
class MappingHistory:
    ranges: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    threshold: int = MAP_THRESHOLD

    def live_at(self, t: int) -> list:
        return [r for r in self.ranges if r.live_at(t)]

    def __getitem__(self, range_id: int) -> LiveRange:
        return self.ranges[range_id]


def reconstruct(mappings: Iterable[MappingEvent], threshold: int = MAP_THRESHOLD) -> MappingHistory:
    """Replay mmap/munmap events into live address ranges.

    Only mmaps strictly larger than ``threshold`` are tracked.  Every munmap is
    applied: a covered range is closed at the munmap time and whatever is left
    on either side becomes a new range live from that instant.
    """
    hist = MappingHistory(threshold=threshold)
    live: list[LiveRange] = []
    prev_time = None
    for ev in mappings:
        if prev_time is not None and ev.time < prev_time:
            raise ValueError(f"mapping events out of time order at t={ev.time}")
        prev_time = ev.time
        lo, hi = ev.start, ev.start + ev.length
        if ev.kind == "mmap":
            if ev.length <= threshold:
                continue
            for r in live:
                if r.start < hi and lo < r.end:
                    hist.violations.append(
                        f"t={ev.time}: mmap [{lo:#x},{hi:#x}) overlaps live range {r.range_id}"
                    )
            rid = len(hist.ranges)
            r = LiveRange(rid, lo, ev.length, ev.time, None, rid)
            hist.ranges.append(r)
            live.append(r)
        elif ev.kind == "munmap":
            hit = [r for r in live if r.start < hi and lo < r.end]
            if not hit:
                hist.warnings.append(f"t={ev.time}: munmap [{lo:#x},{hi:#x}) covers no tracked range")
                continue
            for r in hit:
                r.t_end = ev.time
                live.remove(r)
                for a, b in ((r.start, lo), (hi, r.end)):
                    if a < b:
                        piece = LiveRange(len(hist.ranges), a, b - a, ev.time, None, r.origin)
                        hist.ranges.append(piece)
                        live.append(piece)
        else:
            raise ValueError(f"unknown mapping kind {ev.kind!r}")
    return hist


class Sample(NamedTuple):
    thread_id: int
    batch_seq: int
    timestamp: int
    addr: int


@dataclass
class Classification:
    samples: dict  # range_id -> list[Sample]
    discarded: int = 0
    ambiguous: int = 0  # subset of discarded: matched more than one live range

    @property
    def assigned(self) -> int:
        return sum(len(v) for v in self.samples.values())

    @property
    def total(self) -> int:
        return self.assigned + self.discarded


def classify(dump: TraceDump, history: MappingHistory) -> Classification:
    """Assign each sample to the live range holding its address at its batch's timestamp."""
    out = Classification({})
    cache: dict[int, tuple] = {}
    for b in dump.batches:
        view = cache.get(b.timestamp)
        if view is None:
            live = sorted(history.live_at(b.timestamp), key=lambda r: r.start)
            overlap = any(live[i].end > live[i + 1].start for i in range(len(live) - 1))
            view = cache[b.timestamp] = (live, [r.start for r in live], overlap)
        live, starts, overlap = view
        for a in b.addrs:
            if overlap:
                hits = [r for r in live if r.start <= a < r.end]
                if len(hits) > 1:
                    out.ambiguous += 1
                    out.discarded += 1
                    continue
                r = hits[0] if hits else None
            else:
                i = bisect.bisect_right(starts, a) - 1
                r = live[i] if i >= 0 and a < live[i].end else None
            if r is None:
                out.discarded += 1
            else:
                out.samples.setdefault(r.range_id, []).append(Sample(b.thread_id, b.batch_seq, b.timestamp, a))
    return out


@dataclass
class Heatmap:
    """Sample counts indexed by ``[batch_seq, block]`` for one mapping."""

    mapping_id: int
    block_pages: int
    matrix: np.ndarray
    start: int = 0
    page_size: int = PAGE_SIZE


def heatmap(
    samples: Sequence[Sample],
    mapping: LiveRange,
    block_pages: int = BLOCK_PAGES,
    page_size: int = PAGE_SIZE,
) -> Heatmap:
    block = block_pages * page_size
    nblocks = max(1, -(-mapping.length // block))
    rows = max((s.batch_seq for s in samples), default=-1) + 1
    matrix = np.zeros((rows, nblocks), dtype=np.int64)
    if samples:
        seqs = np.fromiter((s.batch_seq for s in samples), dtype=np.int64, count=len(samples))
        cols = np.fromiter(((s.addr - mapping.start) // block for s in samples), dtype=np.int64, count=len(samples))
        np.add.at(matrix, (seqs, cols), 1)
    return Heatmap(mapping.range_id, block_pages, matrix, mapping.start, page_size)


def band_windows(matrix: np.ndarray) -> list:
    """Per non-empty row, ``(first, last, contiguous)`` over its nonzero blocks."""
    out = []
    for row in matrix:
        nz = np.flatnonzero(row)
        if len(nz):
            out.append((int(nz[0]), int(nz[-1]), bool(nz[-1] - nz[0] + 1 == len(nz))))
    return out


def is_diagonal_band(matrix: np.ndarray) -> bool:
    """True if every row's nonzero blocks are contiguous and window starts never move back."""
    windows = band_windows(matrix)
    if not all(w[2] for w in windows):
        return False
    return all(a[0] <= b[0] for a, b in zip(windows, windows[1:]))


@dataclass
class PageHistogram:
    page_counts: dict  # absolute page number -> samples
    histogram: dict  # samples N -> number of pages with N

    @property
    def mass(self) -> int:
        return sum(self.page_counts.values())


def page_histogram(samples: Iterable[Sample], page_size: int = PAGE_SIZE) -> PageHistogram:
    counts = Counter(s.addr // page_size for s in samples)
    return PageHistogram(dict(counts), dict(sorted(Counter(counts.values()).items())))


def hot_pages(hist: PageHistogram, threshold: int = HOT_THRESHOLD, top_k: Optional[int] = None) -> list:
    """Pages with more than ``threshold`` samples, hottest first (ties by page number)."""
    ranked = sorted(
        ((p, c) for p, c in hist.page_counts.items() if c > threshold),
        key=lambda pc: (-pc[1], pc[0]),
    )
    if top_k is not None:
        ranked = ranked[:top_k]
    return [p for p, _ in ranked]


def coverage(samples: Iterable[Sample], page_size: int = PAGE_SIZE) -> int:
    return len({s.addr // page_size for s in samples})


@dataclass
class IntervalStats:
    deltas: dict  # thread_id -> list of timestamp deltas
    bin_width: float = 1.0
    histogram: list = field(default_factory=list)

    @property
    def all_deltas(self) -> list:
        return [d for tid in sorted(self.deltas) for d in self.deltas[tid]]

    @property
    def mean(self) -> Optional[float]:
        d = self.all_deltas
        return statistics.fmean(d) if d else None

    @property
    def median(self) -> Optional[float]:
        d = self.all_deltas
        return statistics.median(d) if d else None


def interrupt_intervals(dump: TraceDump, bin_width: Optional[float] = None, bins: int = 50) -> IntervalStats:
    """Timestamp gaps between consecutive harvests of each thread.

    A thread's last batch is left out when it holds fewer than
    ``threshold_records`` addresses: that is the exit flush, not an interrupt.
    """
    deltas = {}
    for th in dump.threads:
        bs = th.batches
        if bs and len(bs[-1].addrs) < dump.threshold_records:
            bs = bs[:-1]
        if len(bs) >= 2:
            deltas[th.thread_id] = [b.timestamp - a.timestamp for a, b in zip(bs, bs[1:])]
    stats = IntervalStats(deltas)
    flat = stats.all_deltas
    if not flat:
        return stats
    top = max(flat)
    if bin_width is None and top > 0:
        bin_width, nbins = top / bins, bins  # the max sits on the last bin's right edge
    else:
        bin_width = bin_width or 1.0
        nbins = int(top // bin_width) + 1
    hist = [0] * nbins
    for d in flat:
        hist[min(int(d // bin_width), nbins - 1)] += 1
    stats.bin_width = bin_width
    stats.histogram = hist
    return stats


def histogram_modes(hist: Sequence[int]) -> list:
    """Indices of local maxima (first index of a plateau), highest first."""
    modes = []
    n = len(hist)
    i = 0
    while i < n:
        if hist[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < n and hist[j + 1] == hist[i]:
            j += 1
        left = hist[i - 1] if i > 0 else -1
        right = hist[j + 1] if j + 1 < n else -1
        if hist[i] > left and hist[i] > right:
            modes.append(i)
        i = j + 1
    return sorted(modes, key=lambda k: (-hist[k], k))


def overhead_estimate(config: SamplerConfig, miss_rate: float, cpu_hz: float) -> float:
    """Fraction of CPU time spent in the threshold-interrupt handler."""
    if miss_rate < 0:
        raise ValueError("miss_rate must be non-negative")
    if cpu_hz <= 0:
        raise ValueError("cpu_hz must be positive")
    interrupts_per_sec = miss_rate / (config.reset * config.threshold_records)
    return interrupts_per_sec * config.handler_cycles / cpu_hz
