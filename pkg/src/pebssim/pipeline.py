"""Workload -> cache -> per-thread samplers -> dump."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .cache import CacheConfig, classify_stream
from .sampler import SamplerConfig, run_thread
from .trace_io import ThreadTrace, TraceDump
from .workloads import Workload


@dataclass
class SimulationResult:
    dump: TraceDump
    loads: int
    hits: int
    misses: int
    records: int
    batches: int
    dropped: int
    lost: int
    duration: int  # logical time spanned by the load stream

    def summary(self) -> dict:
        return {
            "events": self.loads,
            "hits": self.hits,
            "misses": self.misses,
            "records": self.records,
            "batches": self.batches,
            "dropped": self.dropped,
            "lost": self.lost,
            "duration": self.duration,
        }


def simulate(
    workload: Workload,
    sampler: SamplerConfig,
    cache: Optional[CacheConfig] = None,
    page_size: int = 4096,
) -> SimulationResult:
    """Run every thread of ``workload`` through its own cache and sampler.

    ``cache=None`` means bypass: every load counts as a miss.
    """
    misses, hits, nmiss = classify_stream(workload.loads, cache or CacheConfig(bypass=True))
    per_thread: dict[int, list] = {}
    for ev in misses:
        per_thread.setdefault(ev.thread_id, []).append(ev)

    dump = TraceDump(sampler.reset, sampler.buffer_bytes, sampler.threshold_records, page_size)
    dump.mappings = list(workload.mappings)
    records = batches = dropped = lost = 0
    for tid in sorted(per_thread):
        res = run_thread(sampler, per_thread[tid], tid)
        dump.threads.append(ThreadTrace(tid, res.batches, res.dropped))
        records += sum(len(b.addrs) for b in res.batches) + res.dropped
        batches += len(res.batches)
        dropped += res.dropped
        lost += res.lost

    times = [ev.time for ev in workload.loads]
    duration = (max(times) - min(times) + 1) if times else 0
    return SimulationResult(dump, len(workload.loads), hits, nmiss, records, batches, dropped, lost, duration)
