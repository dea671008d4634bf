"""
Desk-scale versions of the fio, fileserver and webserver workloads.

Each workload is scaled down, then driven by as many logical streams as the
workload has threads. Streams take turns one I/O at a time, so every run is
deterministic. A stream opens a file for writing, performs ios_per_txn reads
and writes in the workload's read:write ratio, and closes it, which commits.
"""
import hashlib
import math
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from logger import logger
from pmsim.device import PmDevice
from dfs.filesystem import DurableFS, FileHandle
from dfs.layout import minimum_size_kb
from harness.workload import pattern_bytes
from utils.constants import (
    DEFAULT_BENCH_SCALE, DEFAULT_IOS_PER_TXN, DEFAULT_LOG_BLOCKS, DEFAULT_SEED,
    LINES_PER_BLOCK, MODE_DURABLE, MODE_NOFLUSH, WORKLOAD_TABLE,
)
from utils.errors import ScriptError
from utils.resource_monitor import ResourceMonitor


@dataclass
class BenchResult:
    workload: str
    mode: str
    scale: float
    files: int
    file_size: int
    ops: int
    reads: int
    writes: int
    wall_s: float
    ops_per_s: float
    bytes_written: int
    stores: int
    nt_stores: int
    clwbs: int
    sfences: int
    data_clwbs: int
    tree_clwbs: int
    meta_clwbs: int
    data_blocks_written: int
    commits: int
    peak_rss_mb: float
    content_digest: str

    @property
    def device_ops(self) -> int:
        return self.stores + self.nt_stores + self.clwbs + self.sfences

    def as_dict(self) -> Dict:
        values = asdict(self)
        values["device_ops"] = self.device_ops
        return values

    def render(self) -> str:
        return (
            f"{self.workload:<10} {self.mode:<8} ops={self.ops} ops/s={self.ops_per_s:.0f} "
            f"wall={self.wall_s:.3f}s bytes_written={self.bytes_written} clwb={self.clwbs} "
            f"(data={self.data_clwbs} tree={self.tree_clwbs} meta={self.meta_clwbs}) "
            f"sfence={self.sfences} blocks={self.data_blocks_written}"
        )


@dataclass
class Degradation:
    workload: str
    wall_pct: float
    device_ops_pct: float
    clwb_pct: float
    contents_match: bool

    @property
    def acceptable(self) -> bool:
        """Durability costs something measurable and both modes end with the same files."""
        return self.contents_match and self.device_ops_pct > 0

    def render(self) -> str:
        return (f"{self.workload:<10} degradation wall={self.wall_pct:+.1f}% device_ops={self.device_ops_pct:+.1f}% "
                f"clwb={self.clwb_pct:+.1f}% contents_match={self.contents_match}")


def scaled_params(workload: str, scale: float = DEFAULT_BENCH_SCALE) -> Dict:
    """Workload parameters with the scaled dimension shrunk (file size for fio, file count otherwise)."""
    if workload not in WORKLOAD_TABLE:
        raise ScriptError(f"Unknown workload {workload!r}; expected one of {sorted(WORKLOAD_TABLE)}")
    if not 0 < scale <= 1:
        raise ScriptError(f"Scale must be in (0, 1], got {scale}")
    params = dict(WORKLOAD_TABLE[workload])
    dimension = params["scale_dimension"]
    if dimension == "file_size":
        blocks = max(1, math.ceil(params["file_size"] * scale / params["io_size"]))
        params["file_size"] = blocks * params["io_size"]
    else:
        params["files"] = max(1, math.ceil(params["files"] * scale))
    return params


def required_size_kb(params: Dict, log_blocks: int) -> int:
    """Room for every file twice over (copy-on-write keeps old blocks until commit) plus tree nodes."""
    data_kb = params["files"] * params["file_size"] // 1024
    size_kb = minimum_size_kb(log_blocks) + 2 * data_kb + 4 * params["files"] + 1024
    return math.ceil(size_kb / 4) * 4


class _Stream:
    def __init__(self, stream_id: int, files: List[int]):
        self.stream_id = stream_id
        self.files = files
        self.next_file = 0
        self.handle: Optional[FileHandle] = None
        self.done_in_txn = 0


def _pattern(params: Dict) -> List[str]:
    return ["r"] * params["read_ratio"] + ["w"] * params["write_ratio"]


def run_bench(workload: str, mode: str = MODE_DURABLE, scale: float = DEFAULT_BENCH_SCALE,
              seed: int = DEFAULT_SEED, ios_per_txn: int = DEFAULT_IOS_PER_TXN,
              log_blocks: int = DEFAULT_LOG_BLOCKS, image_path: Optional[str] = None) -> BenchResult:
    if mode not in (MODE_DURABLE, MODE_NOFLUSH):
        raise ScriptError(f"Unknown bench mode {mode!r}")
    params = scaled_params(workload, scale)
    size_kb = required_size_kb(params, log_blocks)
    device = PmDevice(size_kb * 1024, rng_seed=seed)
    fs = DurableFS.format(device, log_blocks, flush_data=(mode == MODE_DURABLE))
    rng = np.random.default_rng(seed)
    monitor = ResourceMonitor()
    logger.info(f"Bench {workload}/{mode}: {params['files']} files of {params['file_size']} bytes, "
                f"{size_kb} KB image")

    paths = [f"/{workload}{i}" for i in range(params["files"])]
    for path in paths:
        _prefill(fs, path, params, ios_per_txn, rng)
    monitor.check()

    device.reset_stats()
    fs.flush_stats.reset()
    io_size = params["io_size"]
    blocks_per_file = params["file_size"] // io_size
    total_ios = params["files"] * blocks_per_file
    threads = min(params["threads"], params["files"])
    streams = [_Stream(s, list(range(s, params["files"], threads))) for s in range(threads)]
    pattern = _pattern(params)
    reads = writes = 0

    started = time.perf_counter()
    for step in range(total_ios):
        stream = streams[step % threads]
        if stream.handle is None:
            path = paths[stream.files[stream.next_file % len(stream.files)]]
            stream.next_file += 1
            stream.handle = fs.open(path, "w")
        offset = int(rng.integers(blocks_per_file)) * io_size
        if pattern[step // threads % len(pattern)] == "r":
            fs.read(stream.handle, io_size, offset)
            reads += 1
        else:
            fs.write(stream.handle, pattern_bytes(int(rng.integers(1 << 30)), io_size), offset=offset)
            writes += 1
        stream.done_in_txn += 1
        if stream.done_in_txn >= ios_per_txn:
            fs.close(stream.handle)
            stream.handle, stream.done_in_txn = None, 0
    for stream in streams:
        if stream.handle is not None:
            fs.close(stream.handle)
    wall = time.perf_counter() - started
    monitor.check()

    if image_path:
        device.persist_all()
        device.save(image_path)

    stats, flush = device.stats, fs.flush_stats
    ops = reads + writes
    result = BenchResult(
        workload=workload, mode=mode, scale=scale, files=params["files"], file_size=params["file_size"],
        ops=ops, reads=reads, writes=writes, wall_s=wall, ops_per_s=ops / wall if wall > 0 else 0.0,
        bytes_written=stats.bytes_written, stores=stats.stores, nt_stores=stats.nt_stores,
        clwbs=stats.clwbs, sfences=stats.sfences, data_clwbs=flush.data_clwbs,
        tree_clwbs=flush.tree_clwbs, meta_clwbs=flush.meta_clwbs,
        data_blocks_written=flush.data_blocks_written, commits=flush.commits,
        peak_rss_mb=monitor.peak_rss_mb, content_digest=content_digest(fs, paths),
    )
    if mode == MODE_DURABLE and result.data_clwbs != LINES_PER_BLOCK * result.data_blocks_written:
        logger.error(f"Flush accounting: {result.data_clwbs} data clwbs for {result.data_blocks_written} blocks")
    logger.info(result.render())
    return result


def _prefill(fs: DurableFS, path: str, params: Dict, ios_per_txn: int, rng: np.random.Generator):
    io_size = params["io_size"]
    handle = fs.open(path, "c")
    for index in range(params["file_size"] // io_size):
        if index and index % ios_per_txn == 0:
            fs.close(handle)
            handle = fs.open(path, "w")
        fs.write(handle, pattern_bytes(int(rng.integers(1 << 30)), io_size), offset=index * io_size)
    fs.close(handle)


def content_digest(fs: DurableFS, paths: List[str]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(path.encode())
        digest.update(fs.read_file(path))
    return digest.hexdigest()


def _pct(durable: float, noflush: float) -> float:
    return 100.0 * (durable - noflush) / noflush if noflush else 0.0


def compare_modes(workload: str, scale: float = DEFAULT_BENCH_SCALE, seed: int = DEFAULT_SEED,
                  ios_per_txn: int = DEFAULT_IOS_PER_TXN,
                  log_blocks: int = DEFAULT_LOG_BLOCKS,
                  image_path: Optional[str] = None) -> Tuple[BenchResult, BenchResult, Degradation]:
    """Durable against noflush on identical inputs. image_path receives the durable run's image."""
    durable = run_bench(workload, MODE_DURABLE, scale, seed, ios_per_txn, log_blocks, image_path)
    noflush = run_bench(workload, MODE_NOFLUSH, scale, seed, ios_per_txn, log_blocks)
    degradation = Degradation(
        workload=workload,
        wall_pct=_pct(durable.wall_s, noflush.wall_s),
        device_ops_pct=_pct(durable.device_ops, noflush.device_ops),
        clwb_pct=_pct(durable.clwbs, noflush.clwbs),
        contents_match=durable.content_digest == noflush.content_digest,
    )
    if degradation.device_ops_pct <= 0:
        logger.warning(f"{workload}: durable mode issued no more device ops than noflush")
    if noflush.data_clwbs:
        logger.error(f"{workload}: noflush mode issued {noflush.data_clwbs} data clwbs")
    logger.info(degradation.render())
    return durable, noflush, degradation
