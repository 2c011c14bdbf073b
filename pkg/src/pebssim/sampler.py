"""PEBS sampling state machine.

One :class:`Sampler` models a single hardware thread: a countdown armed with
the reset value, a bounded CPU record buffer, a threshold interrupt (or a
polling harvester), and the per-thread ring the handler copies load addresses
into.  Records keep only the load address; every batch carries the single
timestamp taken when it was harvested.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .events import MissEvent, MonotonicityError

RECORD_BYTES = 192  # 24 x 64-bit fields on Knights Landing
HANDLER_CYCLES = 20_000
RING_CAPACITY = 1 << 20


class HarvestMode(str, enum.Enum):
    INTERRUPT = "interrupt"
    POLLING = "polling"


class HarvestModeError(RuntimeError):
    """Operation not available in the sampler's harvest mode."""


@dataclass(frozen=True)
class SamplerConfig:
    """Tunables of the sampling driver.

    ``threshold_records`` defaults to the full buffer capacity.
    ``poll_period`` is required (and only meaningful) in polling mode.
    ``ring_capacity=None`` gives an unbounded harvest ring.
    """

    reset: int
    buffer_bytes: int
    record_bytes: int = RECORD_BYTES
    threshold_records: Optional[int] = None
    harvest_mode: HarvestMode = HarvestMode.INTERRUPT
    poll_period: Optional[int] = None
    handler_cycles: int = HANDLER_CYCLES
    handler_latency: int = 0
    ring_capacity: Optional[int] = RING_CAPACITY

    def __post_init__(self):
        for name in ("reset", "buffer_bytes", "record_bytes"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        capacity = self.buffer_bytes // self.record_bytes
        if capacity < 1:
            raise ValueError(
                f"buffer of {self.buffer_bytes} bytes cannot hold one "
                f"{self.record_bytes}-byte record"
            )
        if self.threshold_records is None:
            object.__setattr__(self, "threshold_records", capacity)
        elif not isinstance(self.threshold_records, int) or not 1 <= self.threshold_records <= capacity:
            raise ValueError(
                f"threshold_records must be in [1, {capacity}], got {self.threshold_records!r}"
            )
        object.__setattr__(self, "harvest_mode", HarvestMode(self.harvest_mode))
        if self.harvest_mode is HarvestMode.POLLING:
            if not isinstance(self.poll_period, int) or self.poll_period < 1:
                raise ValueError("polling harvest needs a positive integer poll_period")
        if self.handler_cycles < 0 or self.handler_latency < 0:
            raise ValueError("handler_cycles and handler_latency must be non-negative")
        if self.ring_capacity is not None and self.ring_capacity < 1:
            raise ValueError("ring_capacity must be positive or None")

    @property
    def capacity(self) -> int:
        return buffer_capacity(self)


def buffer_capacity(config: SamplerConfig) -> int:
    """Number of whole records the CPU buffer holds."""
    return config.buffer_bytes // config.record_bytes


@dataclass(frozen=True)
class HarvestBatch:
    thread_id: int
    batch_seq: int
    timestamp: int
    addrs: tuple = field(default_factory=tuple)


class Sampler:
    """Per-thread sampler state: countdown, CPU buffer, harvest counter."""

    def __init__(self, config: SamplerConfig, thread_id: int = 0):
        self.config = config
        self.thread_id = thread_id
        self.countdown = config.reset
        self.records = 0  # records written by PEBS assists
        self.lost = 0  # records refused because the buffer was full (polling only)
        self._buffer: list[int] = []
        self._next_seq = 0
        self._last_time: Optional[int] = None
        self._last_stamp: Optional[int] = None

    @property
    def occupancy(self) -> int:
        return len(self._buffer)

    @property
    def last_time(self) -> Optional[int]:
        return self._last_time

    def feed(self, event: MissEvent) -> Optional[HarvestBatch]:
        """Count one qualifying event; return a batch if it raised the interrupt."""
        if event.thread_id != self.thread_id:
            raise ValueError(f"event for thread {event.thread_id} fed to sampler of thread {self.thread_id}")
        if self._last_time is not None and event.time < self._last_time:
            raise MonotonicityError(
                f"thread {self.thread_id}: time {event.time} after {self._last_time}"
            )
        self._last_time = event.time
        self.countdown -= 1
        if self.countdown:
            return None
        cfg = self.config
        self.countdown = cfg.reset
        if len(self._buffer) >= cfg.threshold_records:
            # only reachable when polling: no interrupt ever drains the buffer
            self.lost += 1
            return None
        self._buffer.append(event.addr)
        self.records += 1
        if cfg.harvest_mode is HarvestMode.INTERRUPT and len(self._buffer) == cfg.threshold_records:
            return self._harvest(event.time + cfg.handler_latency)
        return None

    def poll_harvest(self, now: int) -> Optional[HarvestBatch]:
        if self.config.harvest_mode is not HarvestMode.POLLING:
            raise HarvestModeError("poll_harvest requires polling harvest mode")
        return self._drain(now)

    def flush(self, now: Optional[int] = None) -> Optional[HarvestBatch]:
        """Drain residual records at thread exit.  Idempotent once empty."""
        if now is None:
            now = self._last_time if self._last_time is not None else 0
        return self._drain(now)

    def _drain(self, now: int) -> Optional[HarvestBatch]:
        if self._last_time is not None and now < self._last_time:
            raise MonotonicityError(f"harvest at {now} precedes event time {self._last_time}")
        if not self._buffer:
            return None
        return self._harvest(now)

    def _harvest(self, stamp: int) -> HarvestBatch:
        if self._last_stamp is not None and stamp < self._last_stamp:
            raise MonotonicityError(f"harvest at {stamp} precedes previous harvest {self._last_stamp}")
        batch = HarvestBatch(self.thread_id, self._next_seq, stamp, tuple(self._buffer))
        self._buffer.clear()
        self._next_seq += 1
        self._last_stamp = stamp
        return batch


class ThreadResult(NamedTuple):
    batches: list
    dropped: int  # addresses lost to ring overwrites
    lost: int = 0  # records refused by a full CPU buffer (polling mode)


def run_thread(
    config: SamplerConfig, events: Iterable[MissEvent], thread_id: Optional[int] = None
) -> ThreadResult:
    """Run one thread's miss stream through a fresh sampler and flush at exit.

    Harvested batches land in a ring of ``config.ring_capacity`` batches; on
    overflow the oldest batch is overwritten and its addresses are counted as
    dropped.
    """
    ring: deque = deque()
    dropped = 0
    cap = config.ring_capacity
    polling = config.harvest_mode is HarvestMode.POLLING
    period = config.poll_period or 0
    next_poll = period
    sampler: Optional[Sampler] = None

    def push(batch: HarvestBatch) -> None:
        nonlocal dropped
        if cap is not None and len(ring) == cap:
            dropped += len(ring.popleft().addrs)
        ring.append(batch)

    for ev in events:
        if sampler is None:
            sampler = Sampler(config, ev.thread_id if thread_id is None else thread_id)
        if polling and ev.time >= next_poll:
            # pending records all predate next_poll; later polls up to ev.time are empty
            if sampler.last_time is not None:
                batch = sampler.poll_harvest(next_poll)
                if batch is not None:
                    push(batch)
            next_poll = (ev.time // period + 1) * period
        batch = sampler.feed(ev)
        if batch is not None:
            push(batch)

    if sampler is None:
        return ThreadResult([], 0, 0)
    batch = sampler.flush(sampler.last_time + config.handler_latency)
    if batch is not None:
        push(batch)
    return ThreadResult(list(ring), dropped, sampler.lost)
