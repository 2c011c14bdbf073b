"""Event records shared across the pipeline."""

from __future__ import annotations

from typing import NamedTuple

PAGE_SIZE = 4096


class LoadEvent(NamedTuple):
    """A retired load: issuing thread, virtual address, logical time."""

    thread_id: int
    addr: int
    time: int


class MissEvent(NamedTuple):
    """A load that missed L2 (the sampled event stream)."""

    thread_id: int
    addr: int
    time: int


class MappingEvent(NamedTuple):
    kind: str  # "mmap" | "munmap"
    start: int
    length: int
    time: int


MAPPING_KINDS = ("mmap", "munmap")


class MonotonicityError(ValueError):
    """An event arrived with a timestamp earlier than its predecessor."""


def check_mapping_event(ev: MappingEvent, page_size: int = PAGE_SIZE) -> None:
    if ev.kind not in MAPPING_KINDS:
        raise ValueError(f"unknown mapping kind {ev.kind!r}")
    if ev.start % page_size:
        raise ValueError(f"mapping start {ev.start:#x} not aligned to {page_size}")
    if ev.length <= 0:
        raise ValueError(f"mapping length must be positive, got {ev.length}")
