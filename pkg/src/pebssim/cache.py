"""Set-associative LRU cache used to turn loads into L2 misses."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

from .events import LoadEvent, MissEvent, MonotonicityError


class Outcome(enum.Enum):
    HIT = "hit"
    MISS = "miss"


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Private per-thread cache geometry.  Defaults approximate a 1 MiB KNL tile L2.

    ``bypass=True`` skips the cache entirely: every load is reported as a miss.
    """

    line_bytes: int = 64
    ways: int = 16
    sets: int = 1024
    bypass: bool = False

    def __post_init__(self):
        if not _is_pow2(self.line_bytes):
            raise ValueError(f"line_bytes must be a power of two, got {self.line_bytes}")
        if not _is_pow2(self.sets):
            raise ValueError(f"sets must be a power of two, got {self.sets}")
        if self.ways < 1:
            raise ValueError(f"ways must be positive, got {self.ways}")

    @property
    def capacity(self) -> int:
        return self.line_bytes * self.ways * self.sets


class CacheState:
    """Resident line tags per set, most recently used first."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.sets: dict[int, list[int]] = {}

    def access(self, addr: int) -> Outcome:
        cfg = self.config
        line = addr // cfg.line_bytes
        index = line % cfg.sets
        ways = self.sets.get(index)
        if ways is None:
            self.sets[index] = [line]
            return Outcome.MISS
        # the line number doubles as the tag; it is unique within a set
        if ways[0] == line:
            return Outcome.HIT
        try:
            ways.remove(line)
        except ValueError:
            ways.insert(0, line)
            if len(ways) > cfg.ways:
                ways.pop()
            return Outcome.MISS
        ways.insert(0, line)
        return Outcome.HIT


def access(state: CacheState, config: CacheConfig, addr: int) -> Outcome:
    if config.bypass:
        return Outcome.MISS
    return state.access(addr)


def classify_stream(loads: Iterable[LoadEvent], config: CacheConfig):
    """Filter a load stream down to its misses.

    Each thread gets its own cache.  Returns ``(misses, hit_count, miss_count)``
    with misses in input order and carrying the load's timestamp.
    """
    states: dict[int, CacheState] = {}
    last: dict[int, int] = {}
    misses: list[MissEvent] = []
    hits = 0
    bypass = config.bypass
    for ev in loads:
        tid = ev.thread_id
        prev = last.get(tid)
        if prev is not None and ev.time < prev:
            raise MonotonicityError(f"thread {tid}: load time {ev.time} after {prev}")
        last[tid] = ev.time
        if not bypass:
            state = states.get(tid)
            if state is None:
                state = states[tid] = CacheState(config)
            if state.access(ev.addr) is Outcome.HIT:
                hits += 1
                continue
        misses.append(MissEvent(tid, ev.addr, ev.time))
    return misses, hits, len(misses)
