"""Binary dump written at thread exit, and its reader.

Layout (little-endian, u64 unless noted)::

    header   magic "PEBSDUMP" | version u32 | page_size u32
             | reset | buffer_bytes | threshold_records          (40 bytes)
    mappings count, then per event: kind u8 | 7 pad | start | length | time
    threads  count, then per thread: thread_id | dropped | batch_count,
             then per batch: batch_seq | timestamp | addr_count | addrs...
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .events import MAPPING_KINDS, PAGE_SIZE, MappingEvent
from .sampler import HarvestBatch

MAGIC = b"PEBSDUMP"
VERSION = 1

_HEADER = struct.Struct("<8sIIQQQ")
_U64 = struct.Struct("<Q")
_MAPPING = struct.Struct("<B7xQQQ")
_THREAD = struct.Struct("<QQQ")
_BATCH = struct.Struct("<QQQ")
HEADER_SIZE = _HEADER.size  # 40

_KIND_CODE = {kind: code for code, kind in enumerate(MAPPING_KINDS)}


class DumpError(Exception):
    """Base class for unreadable or invalid dump files."""


class BadMagic(DumpError):
    pass


class UnsupportedVersion(DumpError):
    pass


class Truncated(DumpError):
    pass


class OrderingViolation(DumpError):
    pass


@dataclass
class ThreadTrace:
    thread_id: int
    batches: list = field(default_factory=list)
    dropped: int = 0


@dataclass
class TraceDump:
    reset: int
    buffer_bytes: int
    threshold_records: int
    page_size: int = PAGE_SIZE
    version: int = VERSION
    mappings: list = field(default_factory=list)
    threads: list = field(default_factory=list)

    def validate(self) -> None:
        """Raise :class:`OrderingViolation` (or ValueError) if the dump is malformed."""
        prev = None
        for m in self.mappings:
            if m.kind not in _KIND_CODE:
                raise ValueError(f"unknown mapping kind {m.kind!r}")
            if prev is not None and m.time < prev:
                raise OrderingViolation(f"mapping event at {m.time} after {prev}")
            prev = m.time
        for th in self.threads:
            prev_seq = prev_ts = None
            for b in th.batches:
                if b.thread_id != th.thread_id:
                    raise ValueError(f"batch of thread {b.thread_id} stored under {th.thread_id}")
                if prev_seq is not None and b.batch_seq <= prev_seq:
                    raise OrderingViolation(f"thread {th.thread_id}: batch_seq {b.batch_seq} after {prev_seq}")
                if prev_ts is not None and b.timestamp < prev_ts:
                    raise OrderingViolation(f"thread {th.thread_id}: timestamp {b.timestamp} after {prev_ts}")
                prev_seq, prev_ts = b.batch_seq, b.timestamp

    @property
    def batches(self):
        """All batches ordered by (thread_id, batch_seq)."""
        for th in sorted(self.threads, key=lambda t: t.thread_id):
            yield from th.batches

    @property
    def sample_count(self) -> int:
        return sum(len(b.addrs) for b in self.batches)


def encode_dump(dump: TraceDump) -> bytes:
    dump.validate()
    out = [
        _HEADER.pack(MAGIC, dump.version, dump.page_size, dump.reset, dump.buffer_bytes, dump.threshold_records),
        _U64.pack(len(dump.mappings)),
    ]
    for m in dump.mappings:
        out.append(_MAPPING.pack(_KIND_CODE[m.kind], m.start, m.length, m.time))
    out.append(_U64.pack(len(dump.threads)))
    for th in dump.threads:
        out.append(_THREAD.pack(th.thread_id, th.dropped, len(th.batches)))
        for b in th.batches:
            n = len(b.addrs)
            out.append(_BATCH.pack(b.batch_seq, b.timestamp, n))
            out.append(struct.pack(f"<{n}Q", *b.addrs))
    return b"".join(out)


def write_dump(dump: TraceDump, path, fsync: bool = False) -> None:
    """Serialize ``dump``; refuses (raises) if its invariants do not hold."""
    data = encode_dump(dump)
    with open(path, "wb") as fh:
        fh.write(data)
        if fsync:
            fh.flush()
            os.fsync(fh.fileno())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, st: struct.Struct, what: str):
        if self.pos + st.size > len(self.data):
            raise Truncated(f"file ends inside {what} at offset {self.pos}")
        vals = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return vals

    def addrs(self, n: int) -> tuple:
        size = 8 * n
        if self.pos + size > len(self.data):
            raise Truncated(f"file ends inside a batch of {n} addresses at offset {self.pos}")
        vals = struct.unpack_from(f"<{n}Q", self.data, self.pos)
        self.pos += size
        return vals


def decode_dump(data: bytes) -> TraceDump:
    if data[: len(MAGIC)] != MAGIC:
        if len(data) < len(MAGIC) and MAGIC.startswith(data):
            raise Truncated("file ends inside the magic")
        raise BadMagic("not a PEBS dump (bad magic)")
    r = _Reader(data)
    _, version, page_size, reset, buffer_bytes, threshold = r.take(_HEADER, "header")
    if version != VERSION:
        raise UnsupportedVersion(f"dump version {version}, reader supports {VERSION}")
    dump = TraceDump(reset, buffer_bytes, threshold, page_size, version)
    (count,) = r.take(_U64, "mapping count")
    for _ in range(count):
        code, start, length, time = r.take(_MAPPING, "mapping record")
        if code >= len(MAPPING_KINDS):
            raise DumpError(f"unknown mapping kind code {code}")
        dump.mappings.append(MappingEvent(MAPPING_KINDS[code], start, length, time))
    (count,) = r.take(_U64, "thread count")
    for _ in range(count):
        tid, dropped, nbatches = r.take(_THREAD, "thread header")
        th = ThreadTrace(tid, [], dropped)
        for _ in range(nbatches):
            seq, ts, n = r.take(_BATCH, "batch header")
            th.batches.append(HarvestBatch(tid, seq, ts, r.addrs(n)))
        dump.threads.append(th)
    if r.pos != len(data):
        raise DumpError(f"{len(data) - r.pos} trailing bytes after last thread")
    try:
        dump.validate()
    except OrderingViolation:
        raise
    except ValueError as exc:
        raise DumpError(str(exc)) from None
    return dump


def read_dump(path) -> TraceDump:
    return decode_dump(Path(path).read_bytes())


def dump_to_csv(dump: TraceDump, path, thread_id: Optional[int] = None) -> None:
    """Write ``batch_seq,timestamp,addr`` rows for one thread (or all, in thread order)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch_seq", "timestamp", "addr"])
        for b in dump.batches:
            if thread_id is not None and b.thread_id != thread_id:
                continue
            for a in b.addrs:
                w.writerow([b.batch_seq, b.timestamp, hex(a)])
