"""Synthetic load streams with known ground truth, plus CSV trace ingest.

Random patterns draw from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, ...])``, so a given spec yields the same stream on
every platform.
"""

from __future__ import annotations

import csv
import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .events import (
    PAGE_SIZE,
    LoadEvent,
    MappingEvent,
    MonotonicityError,
    check_mapping_event,
)

PATTERNS = ("stride_sweep", "hot_set", "uniform_random")
LOAD_HEADER = ["thread_id", "addr", "time"]
MAPPING_HEADER = ["kind", "start", "length", "time"]
LINE_BYTES = 64


@dataclass(frozen=True)
class WorkloadSpec:
    """Shape of a synthetic workload.

    ``iterations`` counts full sweeps for ``stride_sweep``; the random
    patterns emit ``loads`` accesses per thread instead.  Time advances one
    unit per load, scaled by ``events_per_unit_time``.
    """

    pattern: str
    region_len: int
    region_start: int = 0x7F0000000000
    stride_bytes: int = LINE_BYTES
    iterations: int = 1
    events_per_unit_time: float = 1.0
    seed: int = 0
    thread_count: int = 1
    loads: int = 10_000
    hot_pages: int = 10
    hot_share: float = 0.9
    time_offset: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.stride_bytes <= 0 or self.region_len < self.stride_bytes:
            raise ValueError("need region_len >= stride_bytes > 0")
        if self.region_start % PAGE_SIZE:
            raise ValueError(f"region_start {self.region_start:#x} is not page aligned")
        if self.iterations < 1 or self.thread_count < 1 or self.loads < 0:
            raise ValueError("iterations and thread_count must be >= 1, loads >= 0")
        if self.events_per_unit_time <= 0:
            raise ValueError("events_per_unit_time must be positive")
        if self.pattern != "stride_sweep" and self.region_len < PAGE_SIZE:
            raise ValueError("random patterns need a region of at least one page")
        if self.pattern == "hot_set":
            if not 1 <= self.hot_pages <= self.region_len // PAGE_SIZE:
                raise ValueError("hot_pages must be between 1 and the region's page count")
            if not 0.0 <= self.hot_share <= 1.0:
                raise ValueError("hot_share must be in [0, 1]")
        if self.time_offset < 0:
            raise ValueError("time_offset must be non-negative")

    @property
    def pages(self) -> int:
        return self.region_len // PAGE_SIZE


@dataclass
class Workload:
    """Generated loads and mapping log.  Unpacks as ``loads, mappings``."""

    loads: list
    mappings: list
    hot_set: frozenset = field(default_factory=frozenset)  # absolute page numbers

    def __iter__(self):
        return iter((self.loads, self.mappings))

    def page_counts(self) -> Counter:
        """Exact accesses per absolute page number (addr // 4096)."""
        return Counter(ev.addr // PAGE_SIZE for ev in self.loads)

    @property
    def end_time(self) -> int:
        return max((m.time for m in self.mappings), default=0)


def _times(n: int, spec: WorkloadSpec) -> list[int]:
    rate = spec.events_per_unit_time
    if rate == 1:
        return list(range(spec.time_offset, spec.time_offset + n))
    return [spec.time_offset + int(i // rate) for i in range(n)]


def _wrap(spec: WorkloadSpec, per_thread: list[list[int]], hot=frozenset()) -> Workload:
    loads = []
    last = spec.time_offset
    for tid, addrs in enumerate(per_thread):
        times = _times(len(addrs), spec)
        loads.extend(LoadEvent(tid, a, t) for a, t in zip(addrs, times))
        if times:
            last = max(last, times[-1])
    mappings = [
        MappingEvent("mmap", spec.region_start, spec.region_len, spec.time_offset),
        MappingEvent("munmap", spec.region_start, spec.region_len, last + 1),
    ]
    return Workload(loads, mappings, frozenset(hot))


def _thread_rng(spec: WorkloadSpec, tid: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 1 + tid])))


def _page_addrs(spec: WorkloadSpec, rng: np.random.Generator, pages: np.ndarray) -> list[int]:
    lines = rng.integers(0, PAGE_SIZE // LINE_BYTES, size=len(pages), dtype=np.int64)
    addrs = spec.region_start + pages.astype(np.int64) * PAGE_SIZE + lines * LINE_BYTES
    return addrs.tolist()


def gen_stride_sweep(spec: WorkloadSpec) -> Workload:
    """``iterations`` ascending sweeps; threads split the region into page-aligned slices."""
    if spec.pattern != "stride_sweep":
        raise ValueError(f"gen_stride_sweep got pattern {spec.pattern!r}")
    n = spec.thread_count
    pages = -(-spec.region_len // PAGE_SIZE)
    end = spec.region_start + spec.region_len
    per_thread = []
    for tid in range(n):
        lo = spec.region_start + (pages * tid // n) * PAGE_SIZE
        hi = min(end, spec.region_start + (pages * (tid + 1) // n) * PAGE_SIZE)
        sweep = list(range(lo, hi, spec.stride_bytes))
        per_thread.append(sweep * spec.iterations)
    return _wrap(spec, per_thread)


def gen_hot_set(spec: WorkloadSpec) -> Workload:
    """A seeded set of hot pages takes ``hot_share`` of the loads; the rest are uniform."""
    if spec.pattern != "hot_set":
        raise ValueError(f"gen_hot_set got pattern {spec.pattern!r}")
    choose = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0])))
    hot = np.sort(choose.choice(spec.pages, size=spec.hot_pages, replace=False))
    per_thread = []
    for tid in range(spec.thread_count):
        rng = _thread_rng(spec, tid)
        is_hot = rng.random(spec.loads) < spec.hot_share
        pages = np.where(
            is_hot,
            hot[rng.integers(0, len(hot), size=spec.loads)],
            rng.integers(0, spec.pages, size=spec.loads),
        )
        per_thread.append(_page_addrs(spec, rng, pages))
    first = spec.region_start // PAGE_SIZE
    return _wrap(spec, per_thread, frozenset(first + int(p) for p in hot))


def gen_uniform_random(spec: WorkloadSpec) -> Workload:
    if spec.pattern != "uniform_random":
        raise ValueError(f"gen_uniform_random got pattern {spec.pattern!r}")
    per_thread = []
    for tid in range(spec.thread_count):
        rng = _thread_rng(spec, tid)
        pages = rng.integers(0, spec.pages, size=spec.loads)
        per_thread.append(_page_addrs(spec, rng, pages))
    return _wrap(spec, per_thread)


GENERATORS = {
    "stride_sweep": gen_stride_sweep,
    "hot_set": gen_hot_set,
    "uniform_random": gen_uniform_random,
}


def generate(spec: WorkloadSpec) -> Workload:
    return GENERATORS[spec.pattern](spec)


def gen_phased(specs: Sequence[WorkloadSpec]) -> Workload:
    """Run workloads back to back; each phase starts one unit after the previous ends."""
    loads: list = []
    mappings: list = []
    hot: set = set()
    start = specs[0].time_offset if specs else 0
    for spec in specs:
        w = generate(dataclasses.replace(spec, time_offset=start))
        loads.extend(w.loads)
        mappings.extend(w.mappings)
        hot |= w.hot_set
        start = w.end_time + 1
    loads.sort(key=lambda ev: ev.thread_id)  # stable: keeps per-thread time order
    return Workload(loads, mappings, frozenset(hot))


class TraceParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def write_csv(workload: Workload, path, mappings_path=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOAD_HEADER)
        for ev in workload.loads:
            w.writerow([ev.thread_id, hex(ev.addr), ev.time])
    if mappings_path is not None:
        with open(mappings_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MAPPING_HEADER)
            for m in workload.mappings:
                w.writerow([m.kind, hex(m.start), m.length, m.time])


def _rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise TraceParseError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if row:
                yield reader.line_num, row


def ingest_csv(path, mappings_path=None) -> Workload:
    """Read a load CSV (and optionally a mapping CSV) into a validated workload."""
    loads = []
    last: dict[int, int] = {}
    for lineno, row in _rows(path, LOAD_HEADER):
        if len(row) != 3:
            raise TraceParseError(path, lineno, f"expected 3 fields, got {len(row)}")
        try:
            tid = int(row[0])
            if not row[1].lower().startswith("0x"):
                raise ValueError("addr must be hex with 0x prefix")
            addr = int(row[1], 16)
            time = int(row[2])
        except ValueError as exc:
            raise TraceParseError(path, lineno, str(exc)) from None
        if tid < 0 or addr < 0 or time < 0 or addr >= 1 << 64:
            raise TraceParseError(path, lineno, "fields out of range")
        if tid in last and time < last[tid]:
            raise MonotonicityError(f"{path}:{lineno}: thread {tid} time {time} after {last[tid]}")
        last[tid] = time
        loads.append(LoadEvent(tid, addr, time))

    mappings = []
    if mappings_path is not None:
        prev: Optional[int] = None
        for lineno, row in _rows(mappings_path, MAPPING_HEADER):
            if len(row) != 4:
                raise TraceParseError(mappings_path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                ev = MappingEvent(row[0], int(row[1], 0), int(row[2], 0), int(row[3]))
                check_mapping_event(ev)
            except ValueError as exc:
                raise TraceParseError(mappings_path, lineno, str(exc)) from None
            if prev is not None and ev.time < prev:
                raise MonotonicityError(f"{mappings_path}:{lineno}: mapping events out of time order")
            prev = ev.time
            mappings.append(ev)
    return Workload(loads, mappings)
