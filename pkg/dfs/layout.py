"""
On-image format.

    byte 0..3   TS  total image size in KB (u32)
    byte 4      BS  block size in KB (always 4)
    byte 5      BB  blocks of free-block bitmap
    byte 6      IB  blocks of inode bitmap
    byte 7..    FB map, FI map, inode table, log, data blocks

The FB and FI maps and the inode table follow each other without padding.
The log starts on the next cache-line boundary after the inode table so that
its 8-byte words can be written with non-temporal stores, and the data region
starts on the next 4KB boundary after the log.
"""
import math
import struct
from dataclasses import dataclass, replace

from logger import logger
from pmsim.device import PmDevice
from utils.constants import (
    BLOCK_SIZE, BLOCK_SIZE_KB, CACHE_LINE_SIZE, FB_MAP_OFFSET, INODE_SIZE,
    INODE_TYPES, INODE_TYPE_DIRECTORY, INODE_TYPE_FILE, INODE_TYPE_FREE,
    LOG_ENTRY_SIZE, LOG_HEADER_SIZE, MAX_MAP_BLOCKS, ROOT_INODE, SUPERBLOCK_SIZE,
)
from utils.errors import CorruptionError, FormatError

SUPERBLOCK_FORMAT = "<IBBB"
INODE_FORMAT = "<IIQB15x"
LOG_HEADER_FORMAT = "<QQQ8x"

# Field offsets inside an inode record
I_BLOCKS_OFFSET = 0
I_BLOCK_OFFSET = 4
I_SIZE_OFFSET = 8
TYPE_OFFSET = 16


@dataclass(frozen=True)
class Superblock:
    ts: int
    bs: int
    bb: int
    ib: int

    def encode(self) -> bytes:
        return struct.pack(SUPERBLOCK_FORMAT, self.ts, self.bs, self.bb, self.ib)

    @classmethod
    def decode(cls, raw: bytes) -> "Superblock":
        return cls(*struct.unpack(SUPERBLOCK_FORMAT, raw[:SUPERBLOCK_SIZE]))


@dataclass(frozen=True)
class RegionMap:
    """Byte extents of every region, derived from the superblock and the log size."""
    capacity_bytes: int
    fb_map_off: int
    fb_map_len: int
    fi_map_off: int
    fi_map_len: int
    itable_off: int
    itable_len: int
    inode_count: int
    log_off: int
    log_blocks: int
    log_len: int
    data_off: int
    data_blocks: int
    total_blocks: int

    @property
    def first_data_block(self) -> int:
        return self.data_off // BLOCK_SIZE

    @property
    def log_capacity(self) -> int:
        return (self.log_len - LOG_HEADER_SIZE) // LOG_ENTRY_SIZE

    @property
    def metadata_end(self) -> int:
        return self.log_off + self.log_len

    def inode_addr(self, inum: int) -> int:
        return self.itable_off + inum * INODE_SIZE

    def block_addr(self, block: int) -> int:
        return block * BLOCK_SIZE

    def is_data_block(self, block: int) -> bool:
        return self.first_data_block <= block < self.total_blocks


@dataclass
class Inode:
    i_blocks: int = 0
    i_block: int = 0
    i_size: int = 0
    type: int = INODE_TYPE_FREE

    def encode(self) -> bytes:
        return struct.pack(INODE_FORMAT, self.i_blocks, self.i_block, self.i_size, self.type)

    @classmethod
    def decode(cls, raw: bytes) -> "Inode":
        i_blocks, i_block, i_size, itype = struct.unpack(INODE_FORMAT, raw[:INODE_SIZE])
        if itype not in INODE_TYPES:
            raise CorruptionError(f"Inode has unknown type {itype}")
        return cls(i_blocks, i_block, i_size, itype)

    def copy(self) -> "Inode":
        return replace(self)

    @property
    def is_free(self) -> bool:
        return self.type == INODE_TYPE_FREE

    @property
    def is_dir(self) -> bool:
        return self.type == INODE_TYPE_DIRECTORY

    @property
    def is_file(self) -> bool:
        return self.type == INODE_TYPE_FILE


def _round_up(value: int, multiple: int) -> int:
    return -(-value // multiple) * multiple


def compute_regions(ts: int, bb: int, ib: int, log_blocks: int) -> RegionMap:
    """Region extents for a (TS, BB, IB, K) tuple."""
    bs = BLOCK_SIZE_KB
    capacity = ts * 1024
    fb_map_len = bs * 1024 * bb
    fi_map_off = FB_MAP_OFFSET + fb_map_len
    fi_map_len = bs * 1024 * ib
    itable_off = fi_map_off + fi_map_len
    inode_count = bs * 1024 * ib * 8
    itable_len = inode_count * INODE_SIZE
    log_off = _round_up(itable_off + itable_len, CACHE_LINE_SIZE)
    log_len = log_blocks * BLOCK_SIZE
    data_off = _round_up(log_off + log_len, BLOCK_SIZE)
    total_blocks = capacity // BLOCK_SIZE
    data_blocks = max(0, total_blocks - data_off // BLOCK_SIZE)
    return RegionMap(
        capacity_bytes=capacity,
        fb_map_off=FB_MAP_OFFSET,
        fb_map_len=fb_map_len,
        fi_map_off=fi_map_off,
        fi_map_len=fi_map_len,
        itable_off=itable_off,
        itable_len=itable_len,
        inode_count=inode_count,
        log_off=log_off,
        log_blocks=log_blocks,
        log_len=log_len,
        data_off=data_off,
        data_blocks=data_blocks,
        total_blocks=total_blocks,
    )


def minimum_bitmap_blocks(ts: int) -> int:
    """Blocks of free-block bitmap needed to give every block of a TS-KB image one bit."""
    total_blocks = ts // BLOCK_SIZE_KB
    return max(1, math.ceil(total_blocks / (BLOCK_SIZE * 8)))


def minimum_size_kb(log_blocks: int, ib: int = 1) -> int:
    """Smallest image (in KB) that holds every metadata region plus one data block."""
    ts = BLOCK_SIZE_KB
    while True:
        regions = compute_regions(ts, minimum_bitmap_blocks(ts), ib, log_blocks)
        if regions.data_blocks >= 1:
            return ts
        ts = regions.data_off // 1024 + BLOCK_SIZE_KB


def read_superblock(device: PmDevice) -> Superblock:
    superblock = Superblock.decode(device.read(0, SUPERBLOCK_SIZE))
    if superblock.bs != BLOCK_SIZE_KB:
        raise CorruptionError(f"Superblock block size {superblock.bs} KB, expected {BLOCK_SIZE_KB}")
    if superblock.ts * 1024 != device.capacity_bytes:
        raise CorruptionError(
            f"Superblock total size {superblock.ts} KB does not match device of {device.capacity_bytes} bytes"
        )
    if superblock.bb == 0 or superblock.ib == 0:
        raise CorruptionError("Superblock has empty bitmap regions")
    return superblock


def read_log_header(device: PmDevice, log_off: int):
    """Returns (log_size_blocks, start, end) from the log header."""
    return struct.unpack(LOG_HEADER_FORMAT, device.read(log_off, LOG_HEADER_SIZE))


def load_regions(device: PmDevice) -> RegionMap:
    """Recompute the region map of a formatted image."""
    superblock = read_superblock(device)
    probe = compute_regions(superblock.ts, superblock.bb, superblock.ib, 0)
    log_blocks, start, end = read_log_header(device, probe.log_off)
    if log_blocks == 0:
        raise CorruptionError("Log header records zero log blocks")
    regions = compute_regions(superblock.ts, superblock.bb, superblock.ib, log_blocks)
    if regions.data_blocks < 1:
        raise CorruptionError("Regions leave no room for data blocks")
    if superblock.bb * BLOCK_SIZE * 8 < regions.total_blocks:
        raise CorruptionError("Free-block bitmap is smaller than the image")
    if start > end or end - start > regions.log_capacity:
        raise CorruptionError(f"Log header start={start} end={end} is inconsistent")
    return regions


def mkfs(device: PmDevice, log_blocks: int, ib: int = 1, bb: int = None) -> RegionMap:
    """Format the device and make the whole image durable."""
    if log_blocks < 1:
        raise FormatError(f"Log needs at least one block, got {log_blocks}")
    if not 1 <= ib <= MAX_MAP_BLOCKS:
        raise FormatError(f"Inode bitmap blocks must be in [1, {MAX_MAP_BLOCKS}], got {ib}")

    ts = device.capacity_bytes // 1024
    bb = bb or minimum_bitmap_blocks(ts)
    if bb > MAX_MAP_BLOCKS:
        raise FormatError(f"Image of {ts} KB needs {bb} bitmap blocks, more than {MAX_MAP_BLOCKS}")
    if bb * BLOCK_SIZE * 8 < ts // BLOCK_SIZE_KB:
        raise FormatError(f"{bb} bitmap blocks cannot cover an image of {ts} KB")

    regions = compute_regions(ts, bb, ib, log_blocks)
    if regions.data_blocks < 1:
        raise FormatError(
            f"Image of {ts} KB is too small; at least {minimum_size_kb(log_blocks, ib)} KB needed"
        )

    # Metadata area is rebuilt from scratch, data blocks are left as they are
    device.store(0, bytes(regions.data_off))
    device.store(0, Superblock(ts, BLOCK_SIZE_KB, bb, ib).encode())

    fb_map = bytearray(regions.fb_map_len)
    reserved = list(range(regions.first_data_block)) + list(range(regions.total_blocks, regions.fb_map_len * 8))
    for block in reserved:
        fb_map[block // 8] |= 1 << (block % 8)
    device.store(regions.fb_map_off, bytes(fb_map))

    fi_map = bytearray(regions.fi_map_len)
    fi_map[ROOT_INODE // 8] |= 1 << (ROOT_INODE % 8)
    device.store(regions.fi_map_off, bytes(fi_map))
    device.store(regions.inode_addr(ROOT_INODE), Inode(type=INODE_TYPE_DIRECTORY).encode())

    device.store(regions.log_off, struct.pack(LOG_HEADER_FORMAT, log_blocks, 0, 0))
    device.persist_all()

    logger.info(
        f"mkfs: {ts} KB image, bb={bb} ib={ib} log={log_blocks} blocks "
        f"({regions.log_capacity} entries), {regions.data_blocks} data blocks from block {regions.first_data_block}"
    )
    return regions


def inode_read(device: PmDevice, regions: RegionMap, inum: int) -> Inode:
    _check_inum(regions, inum)
    return Inode.decode(device.read(regions.inode_addr(inum), INODE_SIZE))


def inode_write(device: PmDevice, regions: RegionMap, inum: int, inode: Inode):
    """Store the 32-byte record; only commit, recovery and mkfs write the inode table."""
    _check_inum(regions, inum)
    device.store(regions.inode_addr(inum), inode.encode())


def _check_inum(regions: RegionMap, inum: int):
    if not 0 <= inum < regions.inode_count:
        raise IndexError(f"Inode {inum} out of range [0, {regions.inode_count})")
