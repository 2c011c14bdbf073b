import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pebssim import analyzer as an
from pebssim.cache import CacheConfig
from pebssim.events import PAGE_SIZE, MappingEvent
from pebssim.pipeline import simulate
from pebssim.sampler import HarvestBatch, SamplerConfig
from pebssim.trace_io import ThreadTrace, TraceDump
from pebssim.workloads import WorkloadSpec, generate

MiB = 1 << 20
A = 0x10000000


def mmap(start, length, t):
    return MappingEvent("mmap", start, length, t)


def munmap(start, length, t):
    return MappingEvent("munmap", start, length, t)


def dump_of(batches, mappings=(), threshold=42):
    d = TraceDump(64, 8192, threshold, mappings=list(mappings))
    for tid in sorted({b.thread_id for b in batches}):
        d.threads.append(ThreadTrace(tid, [b for b in batches if b.thread_id == tid]))
    return d


def samples_at(addrs, seq=0, ts=0):
    return [an.Sample(0, seq, ts, a) for a in addrs]


# --- reconstruct -----------------------------------------------------------


def test_single_large_mapping_tracked():
    h = an.reconstruct([mmap(A, 8 * MiB, 0)])
    assert [(r.start, r.length, r.t_begin, r.t_end) for r in h.ranges] == [(A, 8 * MiB, 0, None)]


def test_small_mapping_filtered():
    assert an.reconstruct([mmap(A, 3 * MiB, 0)]).ranges == []


def test_exactly_four_mib_is_not_tracked():
    assert an.reconstruct([mmap(A, 4 * MiB, 0)]).ranges == []
    assert len(an.reconstruct([mmap(A, 4 * MiB, 0)], threshold=2 * MiB).ranges) == 1


def test_mid_munmap_splits_range():
    h = an.reconstruct([mmap(A, 8 * MiB, 0), munmap(A + 2 * MiB, MiB, 5)])
    first, left, right = h.ranges
    assert (first.t_begin, first.t_end) == (0, 5)
    assert (left.start, left.length, left.t_begin, left.t_end) == (A, 2 * MiB, 5, None)
    assert (right.start, right.length, right.t_begin, right.t_end) == (A + 3 * MiB, 5 * MiB, 5, None)
    assert left.origin == right.origin == first.range_id


def test_munmap_truncates_and_closes():
    h = an.reconstruct([mmap(A, 8 * MiB, 0), munmap(A + 6 * MiB, 4 * MiB, 3), munmap(A, 6 * MiB, 9)])
    assert [(r.start, r.length, r.t_begin, r.t_end) for r in h.ranges] == [
        (A, 8 * MiB, 0, 3),
        (A, 6 * MiB, 3, 9),
    ]


def test_munmap_over_nothing_is_warning():
    h = an.reconstruct([munmap(A, PAGE_SIZE, 1)])
    assert h.ranges == [] and len(h.warnings) == 1


def test_overlapping_mmaps_reported():
    h = an.reconstruct([mmap(A, 8 * MiB, 0), mmap(A + MiB, 8 * MiB, 1)])
    assert len(h.violations) == 1


def test_unordered_events_rejected():
    with pytest.raises(ValueError):
        an.reconstruct([mmap(A, 8 * MiB, 5), mmap(A, 8 * MiB, 1)])


@settings(max_examples=150, deadline=None)
@given(
    st.lists(
        st.tuples(st.booleans(), st.integers(0, 63), st.integers(1, 64)),
        max_size=25,
    )
)
def test_history_never_overlaps_without_violation(ops):
    unit = MiB
    events = [
        (mmap if is_map else munmap)(A + s * unit, n * unit, t) for t, (is_map, s, n) in enumerate(ops)
    ]
    h = an.reconstruct(events)
    if h.violations:
        return
    for t in range(len(ops) + 1):
        live = sorted(h.live_at(t), key=lambda r: r.start)
        assert all(a.end <= b.start for a, b in zip(live, live[1:]))


# --- classify --------------------------------------------------------------


def test_classify_inside_below_and_before():
    maps = [mmap(A, 8 * MiB, 10)]
    h = an.reconstruct(maps)
    d = dump_of(
        [
            HarvestBatch(0, 0, 5, (A + 64,)),  # before the mmap completed
            HarvestBatch(0, 1, 20, (A + 128, A - 1)),  # inside, below
        ],
        maps,
    )
    c = an.classify(d, h)
    assert c.samples == {0: [an.Sample(0, 1, 20, A + 128)]}
    assert c.discarded == 2 and c.total == 3


def test_classify_after_munmap_uses_remainders():
    maps = [mmap(A, 8 * MiB, 0), munmap(A + 2 * MiB, MiB, 5)]
    h = an.reconstruct(maps)
    d = dump_of([HarvestBatch(0, 0, 3, (A + 2 * MiB,)), HarvestBatch(0, 1, 6, (A + 2 * MiB, A, A + 7 * MiB))], maps)
    c = an.classify(d, h)
    assert {rid: len(v) for rid, v in c.samples.items()} == {0: 1, 1: 1, 2: 1}
    assert c.discarded == 1


def test_ambiguous_samples_discarded():
    maps = [mmap(A, 8 * MiB, 0), mmap(A + MiB, 8 * MiB, 1)]
    c = an.classify(dump_of([HarvestBatch(0, 0, 2, (A + 2 * MiB, A))], maps), an.reconstruct(maps))
    assert c.ambiguous == 1 and c.discarded == 1 and c.assigned == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(A - MiB, A + 10 * MiB), max_size=200), st.integers(0, 30))
def test_classification_conservation(addrs, ts):
    maps = [mmap(A, 8 * MiB, 10), munmap(A + MiB, MiB, 20)]
    d = dump_of([HarvestBatch(0, 0, ts, tuple(addrs))], maps)
    c = an.classify(d, an.reconstruct(maps))
    assert c.assigned + c.discarded == len(addrs)


# --- heatmap ----------------------------------------------------------------


def test_heatmap_single_cell():
    r = an.LiveRange(0, A, 8 * MiB, 0)
    hm = an.heatmap(samples_at([A]), r)
    assert hm.matrix.shape == (1, 512)
    assert hm.matrix[0, 0] == 1 and hm.matrix.sum() == 1


def test_heatmap_four_page_blocks():
    r = an.LiveRange(0, A, 8 * MiB, 0)
    hm = an.heatmap(samples_at([A, A + 3 * PAGE_SIZE]), r)
    assert hm.matrix[0, 0] == 2
    hm = an.heatmap(samples_at([A, A + 4 * PAGE_SIZE]), r)
    assert hm.matrix[0, 0] == 1 and hm.matrix[0, 1] == 1


def test_heatmap_empty():
    hm = an.heatmap([], an.LiveRange(0, A, 8 * MiB, 0))
    assert hm.matrix.shape == (0, 512)


def test_diagonal_band_detector():
    assert an.is_diagonal_band(np.array([[1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 0, 0], [0, 0, 0, 2]]))
    assert not an.is_diagonal_band(np.array([[1, 0, 1, 0]]))
    assert not an.is_diagonal_band(np.array([[0, 1, 0], [1, 0, 0]]))


def test_stride_sweep_heatmap_is_diagonal():
    w = generate(WorkloadSpec("stride_sweep", 6 * MiB, stride_bytes=64))
    res = simulate(w, SamplerConfig(64, 8192), CacheConfig())
    h = an.reconstruct(res.dump.mappings)
    c = an.classify(res.dump, h)
    hm = an.heatmap(c.samples[0], h[0])
    assert hm.matrix.sum() == c.assigned
    assert an.is_diagonal_band(hm.matrix)
    assert hm.matrix.shape[0] > 30


# --- histogram, hot pages, coverage ----------------------------------------


def test_page_histogram_examples():
    assert an.page_histogram(samples_at([A, A + 8, A + 100])).histogram == {3: 1}
    h = an.page_histogram(samples_at([A + PAGE_SIZE * k for k in range(5)]))
    assert h.histogram == {1: 5} and h.mass == 5


def test_hot_pages_threshold():
    h = an.PageHistogram({1: 60, 2: 10}, {})
    assert an.hot_pages(h, 50) == [1]
    assert an.hot_pages(an.PageHistogram({1: 0, 2: 0}, {})) == []
    h = an.PageHistogram({1: 60, 2: 90, 3: 90, 4: 51}, {})
    assert an.hot_pages(h) == [2, 3, 1, 4]
    assert an.hot_pages(h, 0, top_k=2) == [2, 3]


def test_coverage_examples():
    assert an.coverage(samples_at([A, A + 1, A + PAGE_SIZE])) == 2
    assert an.coverage([]) == 0


def _hot_run(reset, seed=1):
    spec = WorkloadSpec("hot_set", 8 * MiB, hot_pages=10, hot_share=0.9, loads=100_000, seed=seed)
    w = generate(spec)
    res = simulate(w, SamplerConfig(reset, 8192, ring_capacity=None))
    c = an.classify(res.dump, an.reconstruct(res.dump.mappings))
    return w, an.page_histogram(c.samples.get(0, []))


def test_exact_trace_matches_ground_truth():
    w, hist = _hot_run(1)
    assert hist.page_counts == dict(w.page_counts())
    top10 = sorted(hist.page_counts, key=lambda p: -hist.page_counts[p])[:10]
    assert set(top10) == set(w.hot_set)


def test_recall_non_increasing_with_reset():
    recalls = []
    for reset in (64, 128, 256):
        w, hist = _hot_run(reset)
        found = set(an.hot_pages(hist, 50))
        recalls.append(len(found & w.hot_set) / len(w.hot_set))
    assert recalls == sorted(recalls, reverse=True)


def test_coverage_exact_trace_and_single_page():
    w = generate(WorkloadSpec("uniform_random", 6 * MiB, loads=3000, seed=2))
    res = simulate(w, SamplerConfig(1, 8192))
    c = an.classify(res.dump, an.reconstruct(res.dump.mappings))
    assert an.coverage(c.samples[0]) == len(w.page_counts())
    one = WorkloadSpec("hot_set", 6 * MiB, hot_pages=1, hot_share=1.0, loads=1000)
    for reset in (1, 64, 256):
        res = simulate(generate(one), SamplerConfig(reset, 8192))
        c = an.classify(res.dump, an.reconstruct(res.dump.mappings))
        assert an.coverage(c.samples[0]) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.sampled_from([1, 2, 4, 8]), st.sampled_from([2, 3, 4]))
def test_nested_reset_coverage_monotone(seed, r, k):
    w = generate(WorkloadSpec("uniform_random", 6 * MiB, loads=4000, seed=seed))

    def cov(reset):
        res = simulate(w, SamplerConfig(reset, 8192, ring_capacity=None))
        return an.coverage(an.classify(res.dump, an.reconstruct(res.dump.mappings)).samples.get(0, []))

    assert cov(r * k) <= cov(r)


# --- intervals ----------------------------------------------------------------


def _intervals(reset, rate=1.0, n=64 * 42 * 20):
    w = generate(WorkloadSpec("stride_sweep", 8 * MiB, stride_bytes=64, events_per_unit_time=rate))
    w.loads = w.loads[:n]
    return an.interrupt_intervals(simulate(w, SamplerConfig(reset, 8192)).dump)


def test_intervals_constant_rate():
    st64 = _intervals(64)
    assert set(st64.all_deltas) == {2688}
    st128 = _intervals(128)
    assert set(st128.all_deltas) == {5376}
    assert st128.mean == 2 * st64.mean


def test_intervals_scale_with_rate():
    assert set(_intervals(64, rate=0.5).all_deltas) == {5376}


def test_intervals_exclude_flush_batch():
    d = dump_of([HarvestBatch(0, i, 100 * i, (1,) * 2) for i in range(3)] + [HarvestBatch(0, 3, 301, (1,))], threshold=2)
    s = an.interrupt_intervals(d)
    assert s.deltas == {0: [100, 100]}


def test_intervals_empty_when_too_few_batches():
    s = an.interrupt_intervals(dump_of([HarvestBatch(0, 0, 1, (1,))], threshold=1))
    assert s.deltas == {} and s.histogram == [] and s.mean is None


def test_interval_histogram_default_bins():
    d = dump_of([HarvestBatch(0, i, t, (1,)) for i, t in enumerate([0, 10, 20, 70, 120])], threshold=1)
    s = an.interrupt_intervals(d)
    assert s.bin_width == 1.0 and len(s.histogram) == 50
    assert s.histogram[10] == 2 and s.histogram[49] == 2
    assert an.histogram_modes(s.histogram) == [10, 49]


def test_histogram_modes():
    assert an.histogram_modes([0, 3, 1, 0, 5, 5, 0]) == [4, 1]
    assert an.histogram_modes([]) == []


# --- overhead -------------------------------------------------------------------


def test_overhead_examples():
    cfg = SamplerConfig(64, 8192)
    assert an.overhead_estimate(cfg, 0, 1.4e9) == 0
    # 1e7 / 2688 interrupts/s x 2e4 cycles / 1.4e9 Hz
    assert an.overhead_estimate(cfg, 1e7, 1.4e9) == pytest.approx(0.05314625850340136, rel=1e-12)
    assert an.overhead_estimate(SamplerConfig(256, 8192), 1e7, 1.4e9) == pytest.approx(0.05314625850340136 / 4)


def test_overhead_linearity():
    base = an.overhead_estimate(SamplerConfig(64, 8192), 1e6, 1e9)
    assert an.overhead_estimate(SamplerConfig(64, 8192), 3e6, 1e9) == pytest.approx(3 * base)
    assert an.overhead_estimate(SamplerConfig(64, 8192, handler_cycles=40_000), 1e6, 1e9) == pytest.approx(2 * base)
    assert an.overhead_estimate(SamplerConfig(64, 8192, threshold_records=21), 1e6, 1e9) == pytest.approx(2 * base)


def test_overhead_rejects_bad_inputs():
    with pytest.raises(ValueError):
        an.overhead_estimate(SamplerConfig(64, 8192), -1, 1e9)
    with pytest.raises(ValueError):
        an.overhead_estimate(SamplerConfig(64, 8192), 1, 0)
