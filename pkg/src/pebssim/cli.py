"""Command-line entry point: ``pebssim {simulate,analyze,sweep,dump-to-csv}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analyzer import BLOCK_PAGES, HOT_THRESHOLD, MAP_THRESHOLD, overhead_estimate
from .cache import CacheConfig
from .pipeline import simulate
from .report import ARTIFACTS, analyze, write_reports
from .sampler import HANDLER_CYCLES, RECORD_BYTES, RING_CAPACITY, SamplerConfig
from .trace_io import DumpError, dump_to_csv, read_dump, write_dump
from .workloads import WorkloadSpec, generate

DEFAULT_OUT = "pebssim-out"
KNL_HZ = 1.4e9

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DUMP = 3

# built-in values for every option a config file or flag may set
DEFAULTS = {
    "pattern": "stride_sweep",
    "seed": 0,
    "threads": 1,
    "region_start": 0x7F0000000000,
    "region_bytes": 6 << 20,
    "stride": 64,
    "iterations": 1,
    "loads": 10_000,
    "hot_pages": 10,
    "hot_share": 0.9,
    "rate": 1.0,
    "reset": 64,
    "buffer_bytes": 8192,
    "record_bytes": RECORD_BYTES,
    "threshold_records": None,
    "harvest": "interrupt",
    "handler_cycles": HANDLER_CYCLES,
    "handler_latency": 0,
    "ring_capacity": RING_CAPACITY,
    "cache": "1024,16,64",
    "map_threshold_bytes": MAP_THRESHOLD,
    "hot_threshold": HOT_THRESHOLD,
    "block_pages": BLOCK_PAGES,
    "cpu_hz": KNL_HZ,
    "miss_rate": None,
    "name": None,
    "out": None,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    workload: WorkloadSpec
    sampler: SamplerConfig
    cache: Optional[CacheConfig]
    out_dir: Path
    name: str
    map_threshold: int = MAP_THRESHOLD
    hot_threshold: int = HOT_THRESHOLD
    block_pages: int = BLOCK_PAGES
    cpu_hz: float = KNL_HZ
    artifacts: tuple = ARTIFACTS
    options: dict = field(default_factory=dict)


def parse_cache(text: str) -> Optional[CacheConfig]:
    if text == "bypass":
        return None
    try:
        sets, ways, line = (int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"--cache expects 'bypass' or '<sets>,<ways>,<line>', got {text!r}") from None
    return CacheConfig(line_bytes=line, ways=ways, sets=sets)


def parse_harvest(text: str) -> tuple:
    if text == "interrupt":
        return "interrupt", None
    if text.startswith("polling:"):
        try:
            return "polling", int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"--harvest expects 'interrupt' or 'polling:<period>', got {text!r}")


def _safe_name(name: str) -> str:
    if not name or "/" in name or "\\" in name or name in (".", ".."):
        raise ConfigError(f"output name must be a plain file stem, got {name!r}")
    return name


def merge_options(ns: argparse.Namespace) -> dict:
    """Built-in defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(ns, "config", None):
        try:
            loaded = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {ns.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(loaded)
    for key in DEFAULTS:
        value = getattr(ns, key, None)
        if value is not None:
            opts[key] = value
    return opts


def build_run_config(opts: dict) -> RunConfig:
    """Validate every option up front; raise ConfigError on the first bad one."""
    try:
        mode, period = parse_harvest(opts["harvest"])
        sampler = SamplerConfig(
            reset=opts["reset"],
            buffer_bytes=opts["buffer_bytes"],
            record_bytes=opts["record_bytes"],
            threshold_records=opts["threshold_records"],
            harvest_mode=mode,
            poll_period=period,
            handler_cycles=opts["handler_cycles"],
            handler_latency=opts["handler_latency"],
            ring_capacity=opts["ring_capacity"],
        )
        workload = WorkloadSpec(
            pattern=str(opts["pattern"]).replace("-", "_"),
            region_len=opts["region_bytes"],
            region_start=opts["region_start"],
            stride_bytes=opts["stride"],
            iterations=opts["iterations"],
            events_per_unit_time=opts["rate"],
            seed=opts["seed"],
            thread_count=opts["threads"],
            loads=opts["loads"],
            hot_pages=opts["hot_pages"],
            hot_share=opts["hot_share"],
        )
        cache = parse_cache(opts["cache"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for key in ("map_threshold_bytes", "block_pages"):
        if opts[key] < 1:
            raise ConfigError(f"{key.replace('_', '-')} must be positive")
    if opts["hot_threshold"] < 0 or opts["cpu_hz"] <= 0:
        raise ConfigError("hot-threshold must be >= 0 and cpu-hz > 0")
    if opts["miss_rate"] is not None and opts["miss_rate"] < 0:
        raise ConfigError("miss-rate must be >= 0")
    name = opts["name"] or f"{workload.pattern}-r{sampler.reset}-b{sampler.buffer_bytes}-s{workload.seed}"
    out = opts["out"] or os.environ.get("PEBSSIM_OUT") or DEFAULT_OUT
    return RunConfig(
        workload,
        sampler,
        cache,
        Path(out),
        _safe_name(name),
        opts["map_threshold_bytes"],
        opts["hot_threshold"],
        opts["block_pages"],
        float(opts["cpu_hz"]),
        options=opts,
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, stem: str, command: str, config: dict, outputs: list) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "versions": {
            "pebssim": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / f"{stem}.{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def cmd_simulate(rc: RunConfig) -> Path:
    workload = generate(rc.workload)
    res = simulate(workload, rc.sampler, rc.cache)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    path = rc.out_dir / f"{rc.name}.pebs"
    write_dump(res.dump, path)
    if read_dump(path) != res.dump:
        raise DumpError(f"{path}: re-read dump differs from the one written")
    write_manifest(rc.out_dir, rc.name, "simulate", rc.options, [path])
    print(" ".join(f"{k}={v}" for k, v in res.summary().items()))
    print(f"dump: {path}")
    return path


def cmd_analyze(dump_path: Path, rc: RunConfig, artifacts=ARTIFACTS) -> list:
    dump = read_dump(dump_path)
    rep = analyze(dump, rc.map_threshold, rc.block_pages, rc.hot_threshold)
    stem = Path(dump_path).stem
    paths = write_reports(rep, rc.out_dir, stem, artifacts)
    write_manifest(
        rc.out_dir,
        stem,
        "analyze",
        {"dump": str(dump_path), "artifacts": list(artifacts), **rc.options},
        paths,
    )
    sys.stdout.write((rc.out_dir / f"{stem}.summary.txt").read_text(encoding="utf-8"))
    return paths


def sweep_cell(rc: RunConfig, reset: int, buffer_bytes: int, workload=None) -> dict:
    """Simulate and analyze one (reset, buffer) cell of a sweep."""
    threshold = rc.options.get("threshold_records")
    sampler = SamplerConfig(
        reset=reset,
        buffer_bytes=buffer_bytes,
        record_bytes=rc.sampler.record_bytes,
        threshold_records=threshold,
        harvest_mode=rc.sampler.harvest_mode,
        poll_period=rc.sampler.poll_period,
        handler_cycles=rc.sampler.handler_cycles,
        handler_latency=rc.sampler.handler_latency,
        ring_capacity=rc.sampler.ring_capacity,
    )
    res = simulate(workload if workload is not None else generate(rc.workload), sampler, rc.cache)
    rep = analyze(res.dump, rc.map_threshold, rc.block_pages, rc.hot_threshold)
    miss_rate = rc.options.get("miss_rate")
    if miss_rate is None:
        # logical time is in cycles, so misses per cycle * cpu_hz is misses per second
        miss_rate = res.misses / res.duration * rc.cpu_hz if res.duration else 0.0
    return {
        "reset": reset,
        "buffer_bytes": buffer_bytes,
        "threshold_records": sampler.threshold_records,
        "misses": res.misses,
        "records": res.records,
        "batches": res.batches,
        "dropped": res.dropped,
        "coverage": rep.coverage,
        "est_overhead": overhead_estimate(sampler, miss_rate, rc.cpu_hz),
    }


def _cell(args):
    return sweep_cell(*args)


def cmd_sweep(rc: RunConfig, resets: list, buffers: list, jobs: int = 1) -> list:
    if not resets or not buffers:
        raise ConfigError("sweep needs non-empty --resets and --buffers")
    cells = [(r, b) for r in resets for b in buffers]
    try:
        for r, b in cells:
            SamplerConfig(reset=r, buffer_bytes=b, record_bytes=rc.sampler.record_bytes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, [(rc, r, b) for r, b in cells]))
    else:
        workload = generate(rc.workload)
        rows = [sweep_cell(rc, r, b, workload) for r, b in cells]

    rc.out_dir.mkdir(parents=True, exist_ok=True)
    path = rc.out_dir / f"{rc.name}.sweep.csv"
    cols = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[c]:.6g}" if c == "est_overhead" else str(row[c]) for c in cols) + "\n")
    write_manifest(rc.out_dir, rc.name, "sweep", {"resets": resets, "buffers": buffers, **rc.options}, [path])
    widths = [max(len(c), 10) for c in cols]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    for row in rows:
        cells_txt = [f"{row[c]:.4%}" if c == "est_overhead" else str(row[c]) for c in cols]
        print("  ".join(t.rjust(w) for t, w in zip(cells_txt, widths)))
    return rows


def cmd_dump_to_csv(dump_path: Path, out_dir: Path, thread: Optional[int] = None) -> list:
    dump = read_dump(dump_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(dump_path).stem
    tids = [thread] if thread is not None else [t.thread_id for t in dump.threads]
    paths = []
    for tid in tids:
        p = out_dir / f"{stem}.t{tid}.csv"
        dump_to_csv(dump, p, tid)
        paths.append(p)
        print(p)
    return paths


def _int(text: str) -> int:
    return int(text, 0)


def _int_list(text: str) -> list:
    return [int(x, 0) for x in text.split(",") if x]


def _add_run_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--config", help="JSON file of option values; flags override it")
    g.add_argument("--pattern", choices=["stride-sweep", "hot-set", "uniform-random",
                                         "stride_sweep", "hot_set", "uniform_random"])
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--region-start", type=_int)
    g.add_argument("--region-bytes", type=_int)
    g.add_argument("--stride", type=_int, help="sweep stride in bytes")
    g.add_argument("--iterations", type=int, help="number of sweeps (stride-sweep)")
    g.add_argument("--loads", type=int, help="loads per thread (random patterns)")
    g.add_argument("--hot-pages", type=int)
    g.add_argument("--hot-share", type=float)
    g.add_argument("--rate", type=float, help="loads per unit of logical time")
    g = p.add_argument_group("sampler")
    g.add_argument("--reset", type=int)
    g.add_argument("--buffer-bytes", type=_int)
    g.add_argument("--record-bytes", type=int)
    g.add_argument("--threshold-records", type=int)
    g.add_argument("--harvest", help="interrupt | polling:<period>")
    g.add_argument("--handler-cycles", type=int)
    g.add_argument("--handler-latency", type=int)
    g.add_argument("--ring-capacity", type=int)
    g.add_argument("--cache", help="bypass | <sets>,<ways>,<line>")
    _add_analysis_options(p)
    p.add_argument("--name", help="output file stem")


def _add_analysis_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("analysis")
    g.add_argument("--map-threshold-bytes", type=_int)
    g.add_argument("--hot-threshold", type=int)
    g.add_argument("--block-pages", type=int)
    g.add_argument("--cpu-hz", type=float)
    p.add_argument("--out", help="output directory (default: $PEBSSIM_OUT or ./pebssim-out)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pebssim", description="PEBS memory-access sampling simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a workload through cache and sampler, write a dump")
    _add_run_options(p)

    p = sub.add_parser("analyze", help="produce heatmaps, histograms and stats from a dump")
    p.add_argument("dump", type=Path)
    _add_analysis_options(p)
    p.add_argument("--config", help="JSON file of option values; flags override it")
    for art in ARTIFACTS:
        p.add_argument(f"--{art}", action="store_true", help=f"emit {art} artifacts")

    p = sub.add_parser("sweep", help="simulate a reset x buffer grid and tabulate")
    _add_run_options(p)
    p.add_argument("--resets", type=_int_list, default=[64, 128, 256])
    p.add_argument("--buffers", type=_int_list, default=[8192, 16384, 32768])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--miss-rate", type=float, help="misses/s fed to the overhead model (default: measured)")

    p = sub.add_parser("dump-to-csv", help="write batch_seq,timestamp,addr rows per thread")
    p.add_argument("dump", type=Path)
    p.add_argument("--thread", type=int)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    ns = make_parser().parse_args(argv)
    try:
        if ns.command == "dump-to-csv":
            out = Path(ns.out or os.environ.get("PEBSSIM_OUT") or DEFAULT_OUT)
            cmd_dump_to_csv(ns.dump, out, ns.thread)
            return 0
        rc = build_run_config(merge_options(ns))
        if ns.command == "simulate":
            cmd_simulate(rc)
        elif ns.command == "analyze":
            chosen = tuple(a for a in ARTIFACTS if getattr(ns, a)) or ARTIFACTS
            cmd_analyze(ns.dump, rc, chosen)
        elif ns.command == "sweep":
            cmd_sweep(rc, ns.resets, ns.buffers, ns.jobs)
    except ConfigError as exc:
        print(f"pebssim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DumpError as exc:
        print(f"pebssim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DUMP
    except OSError as exc:
        print(f"pebssim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
