import struct

import pytest

from pmsim.device import PmDevice
from dfs.layout import (
    Inode, Superblock, compute_regions, inode_read, load_regions, minimum_bitmap_blocks,
    minimum_size_kb, mkfs, read_log_header,
)
from dfs.recovery import fsck
from utils.constants import INODE_TYPE_DIRECTORY, INODE_TYPE_FILE, ROOT_INODE
from utils.errors import CorruptionError, FormatError

# (ts KB, bb, ib, log blocks) -> fi_map_off, itable_off, log_off, data_off, data_blocks
GOLDEN = [
    ((4096, 1, 1, 64), 4103, 8199, 1056832, 1323008, 701),
    ((8192, 1, 2, 16), 4103, 12295, 2109504, 2179072, 1516),
    ((2048, 1, 1, 8), 4103, 8199, 1056832, 1093632, 245),
    ((16384, 1, 1, 32), 4103, 8199, 1056832, 1191936, 3805),
    ((3072, 1, 1, 4), 4103, 8199, 1056832, 1077248, 505),
    ((65536, 2, 1, 128), 8199, 12295, 1060928, 1589248, 15996),
    ((1048576, 8, 1, 256), 32775, 36871, 1085504, 2138112, 261622),
]


@pytest.mark.parametrize("params, fi_map_off, itable_off, log_off, data_off, data_blocks", GOLDEN)
def test_region_offsets(params, fi_map_off, itable_off, log_off, data_off, data_blocks):
    ts, bb, ib, k = params
    regions = compute_regions(ts, bb, ib, k)
    assert regions.fb_map_off == 7
    assert regions.fb_map_len == 4096 * bb
    assert regions.fi_map_off == fi_map_off
    assert regions.itable_off == itable_off
    assert regions.inode_count == 4096 * 8 * ib
    assert regions.log_off == log_off
    assert regions.log_off % 64 == 0
    assert regions.data_off == data_off
    assert regions.data_off % 4096 == 0
    assert regions.data_blocks == data_blocks
    assert regions.log_capacity == (k * 4096 - 32) // 16


@pytest.mark.parametrize("params", [g[0] for g in GOLDEN if g[0][0] <= 16384])
def test_mkfs_headers_match_formulas(params):
    ts, bb, ib, k = params
    device = PmDevice(ts * 1024)
    regions = mkfs(device, k, ib, bb)
    expected = compute_regions(ts, bb, ib, k)
    assert regions == expected

    assert device.persistent(0, 7) == struct.pack("<IBBB", ts, 4, bb, ib)
    assert device.persistent(regions.log_off, 32) == struct.pack("<QQQ8x", k, 0, 0)
    # every metadata block is marked allocated, the first data block is free
    fb_map = device.persistent(regions.fb_map_off, regions.fb_map_len)
    for block in range(regions.first_data_block):
        assert fb_map[block // 8] >> (block % 8) & 1
    first = regions.first_data_block
    assert not fb_map[first // 8] >> (first % 8) & 1
    assert device.persistent(regions.fi_map_off, 1) == b"\x01"
    assert inode_read(device, regions, ROOT_INODE) == Inode(type=INODE_TYPE_DIRECTORY)
    assert device.is_quiescent()


def test_fresh_image_passes_fsck(device):
    assert fsck(device) == []


def test_load_regions_round_trip(device):
    regions = load_regions(device)
    assert regions == compute_regions(1280, 1, 1, 8)
    assert read_log_header(device, regions.log_off) == (8, 0, 0)


def test_mkfs_rejects_small_image():
    with pytest.raises(FormatError):
        mkfs(PmDevice(1024 * 1024), 8)


def test_minimum_size_is_exact():
    size = minimum_size_kb(8)
    assert size == 1072
    mkfs(PmDevice(size * 1024), 8)
    with pytest.raises(FormatError):
        mkfs(PmDevice((size - 4) * 1024), 8)


def test_mkfs_rejects_bad_arguments():
    with pytest.raises(FormatError):
        mkfs(PmDevice(4096 * 1024), 0)
    with pytest.raises(FormatError):
        mkfs(PmDevice(4096 * 1024), 8, ib=0)


def test_minimum_bitmap_blocks():
    assert minimum_bitmap_blocks(4096) == 1
    assert minimum_bitmap_blocks(128 * 1024) == 1
    assert minimum_bitmap_blocks(128 * 1024 + 4) == 2


def test_remkfs_over_used_image(fs):
    fs.write_file("/a", b"x" * 5000)
    regions = mkfs(fs.device, 8)
    assert fsck(fs.device) == []
    assert inode_read(fs.device, regions, ROOT_INODE).i_size == 0


def test_superblock_and_inode_codecs():
    sb = Superblock(4096, 4, 1, 1)
    assert Superblock.decode(sb.encode()) == sb
    inode = Inode(3, 900, 9000, INODE_TYPE_FILE)
    raw = inode.encode()
    assert len(raw) == 32
    assert raw[:16] == struct.pack("<IIQ", 3, 900, 9000)
    assert Inode.decode(raw) == inode


def test_inode_decode_rejects_unknown_type():
    raw = bytearray(Inode(type=INODE_TYPE_FILE).encode())
    raw[16] = 9
    with pytest.raises(CorruptionError):
        Inode.decode(bytes(raw))


def test_load_regions_rejects_mismatched_size(device):
    device.store(0, struct.pack("<I", 4096))
    with pytest.raises(CorruptionError):
        load_regions(device)


def test_inode_type_predicates():
    assert Inode(type=INODE_TYPE_FILE).is_file
    assert not Inode(type=INODE_TYPE_FILE).is_dir
    assert Inode(type=INODE_TYPE_DIRECTORY).is_dir
    assert not Inode(type=INODE_TYPE_DIRECTORY).is_file
    assert Inode().is_free
