"""
Redo-only crash recovery and the offline consistency checker.

Recovery never undoes anything. A transaction whose Commit entry is in the
active log but has no End entry pointing at it is replayed by walking its
back-chain from the Commit, oldest entry first. Every change is an absolute
write, so replaying twice lands on the same image.
"""
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Set

import numpy as np

from logger import logger
from pmsim.device import PmDevice
from dfs.bitmap import Bitmap
from dfs.directory import parse_block
from dfs.layout import RegionMap, load_regions
from dfs.tree import BlockTree, height_for
from dfs.txn import apply_entry, flush_touched
from dfs.wal import EntryType, RedoLog
from utils.constants import (
    BLOCK_SIZE, INODE_TYPE_DIRECTORY, INODE_TYPE_FREE, INODE_TYPES, NO_PREV, POINTERS_PER_BLOCK,
    ROOT_INODE,
)
from utils.errors import CorruptionError, DurableFSError

INODE_DTYPE = np.dtype([
    ("i_blocks", "<u4"),
    ("i_block", "<u4"),
    ("i_size", "<u8"),
    ("type", "u1"),
    ("reserved", "V15"),
])


@dataclass
class RecoveryReport:
    replayed: int = 0
    discarded: int = 0
    skipped: int = 0
    entries_scanned: int = 0
    ends_written: int = 0

    def summary(self) -> str:
        return (f"replayed={self.replayed} discarded={self.discarded} skipped={self.skipped} "
                f"entries={self.entries_scanned}")


def _begin_of(log: RedoLog, index: int) -> int:
    """Index of the oldest entry of a chain still inside the active log."""
    while True:
        entry = log.read_entry(index)
        if entry.prev == NO_PREV or entry.prev < log.start or entry.prev >= index:
            return index
        index = entry.prev


def recover(device: PmDevice) -> RecoveryReport:
    """Replay committed but unended transactions, then clear the log."""
    regions = load_regions(device)
    log = RedoLog(device, regions)
    report = RecoveryReport()

    entries = list(log.scan())
    report.entries_scanned = len(entries)
    if not entries:
        logger.debug("Recovery: log is empty")
        return report

    commits = [(index, entry) for index, entry in entries if entry.type == EntryType.COMMIT]
    ended = {entry.prev for _, entry in entries if entry.type == EntryType.END}
    begins = {index for index, entry in entries if entry.type == EntryType.BEGIN}

    reached: Set[int] = set()
    pending_ends = []
    touched: Set[int] = set()
    for commit_index, commit in commits:
        if commit_index in ended:
            # entries of a finished transaction may already be trimmed
            reached.add(_begin_of(log, commit_index))
            report.skipped += 1
            continue
        chain = log.chain_oldest_first(commit_index)
        if chain[0][1].type != EntryType.BEGIN:
            raise CorruptionError(f"Chain of commit {commit_index} does not start with a Begin entry")
        reached.add(chain[0][0])
        for _, entry in chain:
            apply_entry(device, regions, entry, touched)
        pending_ends.append((commit.txn_no, commit_index))
        report.replayed += 1

    flush_touched(device, touched)
    device.sfence()

    for txn_no, commit_index in pending_ends:
        if len(log) >= log.capacity:
            logger.warning("Recovery: log full, relying on the final clear instead of End entries")
            break
        log.append(txn_no, EntryType.END, prev=commit_index)
        report.ends_written += 1

    report.discarded = len(begins - reached)
    log.clear()
    logger.info(f"Recovery: {report.summary()}")
    return report


@dataclass
class Violation:
    check: str
    message: str

    def __str__(self):
        return f"({self.check}) {self.message}"


@dataclass
class _InodeScan:
    leaves: Dict[int, List[int]] = field(default_factory=dict)
    references: Counter = field(default_factory=Counter)


def fsck(device: PmDevice) -> List[Violation]:
    """
    Check a recovered image. Returns an empty list when consistent:

    a  tree blocks set in the free-block map
    b  no block referenced twice
    c  allocated inodes reachable from the root and dirents name live inodes
    d  i_size within i_blocks blocks and leaf count equal to i_blocks
    e  directory blocks tiled by their records
    f  metadata blocks set in the free-block map
    g  undecodable superblock, log header or inode
    h  data blocks set in the free-block map but referenced by nothing
    """
    try:
        regions = load_regions(device)
    except DurableFSError as e:
        return [Violation("g", str(e))]

    violations: List[Violation] = []
    fbb = Bitmap.from_device(device, regions.fb_map_off, regions.fb_map_len, regions.total_blocks)
    fib = Bitmap.from_device(device, regions.fi_map_off, regions.fi_map_len, regions.inode_count)
    table = np.frombuffer(device.read(regions.itable_off, regions.itable_len), dtype=INODE_DTYPE)

    unset_meta = np.flatnonzero(~fbb.bits[:regions.first_data_block])
    for block in unset_meta:
        violations.append(Violation("f", f"metadata block {int(block)} is free in the free-block map"))

    bad_types = np.flatnonzero(~np.isin(table["type"], sorted(INODE_TYPES)))
    for inum in bad_types:
        violations.append(Violation("g", f"inode {int(inum)} has unknown type {int(table['type'][inum])}"))

    allocated = table["type"] != INODE_TYPE_FREE
    for inum in np.flatnonzero(allocated != fib.bits):
        state = "set" if fib.is_set(int(inum)) else "clear"
        violations.append(Violation("c", f"inode {int(inum)} has type {int(table['type'][inum])} but its map bit is {state}"))

    bad = {int(inum) for inum in bad_types}
    live = [int(inum) for inum in np.flatnonzero(allocated & fib.bits) if int(inum) not in bad]
    scan = _scan_trees(device, regions, table, live, fbb, violations)
    _check_namespace(device, regions, table, live, scan, violations)

    referenced = set(scan.references)
    data_set = fbb.set_indices()
    for block in data_set[data_set >= regions.first_data_block]:
        if int(block) not in referenced:
            violations.append(Violation("h", f"block {int(block)} is allocated but referenced by nothing"))

    if violations:
        logger.warning(f"fsck: {len(violations)} violations")
    else:
        logger.info("fsck: image is consistent")
    return violations


def _scan_trees(device: PmDevice, regions: RegionMap, table: np.ndarray, live: List[int],
                fbb: Bitmap, violations: List[Violation]) -> _InodeScan:
    tree = BlockTree(device)
    scan = _InodeScan()
    for inum in live:
        record = table[inum]
        i_size, i_blocks, root = int(record["i_size"]), int(record["i_blocks"]), int(record["i_block"])
        height = height_for(i_size)
        if i_size > i_blocks * BLOCK_SIZE:
            violations.append(Violation("d", f"inode {inum}: i_size {i_size} exceeds {i_blocks} blocks"))
        try:
            blocks = _tree_blocks(tree, regions, root, height)
        except CorruptionError as e:
            violations.append(Violation("a", f"inode {inum}: {e}"))
            continue
        leaves, nodes = blocks
        scan.leaves[inum] = [block for _, block in leaves]
        if len(leaves) != i_blocks:
            violations.append(Violation("d", f"inode {inum}: {len(leaves)} leaves, i_blocks is {i_blocks}"))
        for block in nodes + scan.leaves[inum]:
            if not fbb.is_set(block):
                violations.append(Violation("a", f"inode {inum}: block {block} is free in the free-block map"))
            scan.references[block] += 1
    for block, count in scan.references.items():
        if count > 1:
            violations.append(Violation("b", f"block {block} is referenced {count} times"))
    return scan


def _tree_blocks(tree: BlockTree, regions: RegionMap, root: int, height: int):
    """(leaves, interior nodes) of a tree, refusing pointers outside the data region."""
    if root == 0:
        return [], []
    leaves, nodes = [], []
    stack = [(root, height, 0)]
    while stack:
        block, level, base = stack.pop()
        if not regions.is_data_block(block):
            raise CorruptionError(f"tree points at block {block} outside the data region")
        if level == 0:
            leaves.append((base, block))
            continue
        nodes.append(block)
        children = tree.read_node(block)
        span = POINTERS_PER_BLOCK ** (level - 1)
        for slot in np.flatnonzero(children):
            stack.append((int(children[slot]), level - 1, base + int(slot) * span))
    leaves.sort()
    return leaves, nodes


def _check_namespace(device: PmDevice, regions: RegionMap, table: np.ndarray, live: List[int],
                     scan: _InodeScan, violations: List[Violation]):
    live_set = set(live)
    if ROOT_INODE not in live_set or int(table[ROOT_INODE]["type"]) != INODE_TYPE_DIRECTORY:
        violations.append(Violation("c", "root inode is not a directory"))
        return

    reachable = {ROOT_INODE}
    queue = [ROOT_INODE]
    while queue:
        inum = queue.pop()
        for block in scan.leaves.get(inum, []):
            try:
                dirents = parse_block(device.read(regions.block_addr(block), BLOCK_SIZE))
            except CorruptionError as e:
                violations.append(Violation("e", f"directory {inum} block {block}: {e}"))
                continue
            for dirent in dirents:
                if not dirent.in_use:
                    continue
                child = dirent.inode
                if child not in live_set:
                    violations.append(Violation("c", f"directory {inum} entry {dirent.name!r} names free inode {child}"))
                    continue
                if child in reachable:
                    violations.append(Violation("c", f"inode {child} is linked more than once"))
                    continue
                reachable.add(child)
                if int(table[child]["type"]) == INODE_TYPE_DIRECTORY:
                    queue.append(child)

    for inum in sorted(live_set - reachable):
        violations.append(Violation("c", f"inode {inum} is allocated but not reachable from the root"))
