"""
Transactions over RAM copies of the metadata.

Allocation bits are set in the RAM bitmaps immediately so no other
transaction can be granted the same block or inode. Releases are logged but
deferred: neither the RAM nor the image bitmap changes until commit, so a
block freed by an uncommitted transaction can never be reused by another.
"""
import threading
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from logger import logger
from pmsim.device import PmDevice
from dfs.bitmap import Bitmap, pm_write_bit
from dfs.layout import (
    Inode, RegionMap, inode_read, inode_write, I_BLOCKS_OFFSET, I_BLOCK_OFFSET,
    I_SIZE_OFFSET,
)
from dfs.wal import EntryType, LogEntry, RedoLog
from utils.constants import (
    CACHE_LINE_SIZE, DEFAULT_TRIM_THRESHOLD, INODE_SIZE, NO_PREV, ROOT_INODE,
    ROOT_SLOT, TXN_NO_MASK,
)
from utils.errors import (
    BusyError, DoubleFreeError, NoSpaceError, NotFoundError, ReadBackMismatchError,
    TxnStateError,
)


class TxnState(Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ENDED = "ended"
    ABORTED = "aborted"


class BitmapKind(Enum):
    BLOCK = "fbb"
    INODE = "fib"


class InodeField(Enum):
    BLOCK_ADDR = EntryType.UPD_BLOCK_ADDR
    I_SIZE = EntryType.UPD_I_SIZE
    I_BLOCKS = EntryType.UPD_I_BLOCKS


@dataclass
class FlushStats:
    data_clwbs: int = 0
    tree_clwbs: int = 0
    meta_clwbs: int = 0
    data_blocks_written: int = 0
    commits: int = 0
    aborts: int = 0

    def reset(self):
        for item in fields(self):
            setattr(self, item.name, 0)


@dataclass
class Txn:
    txn_no: int
    inum: Optional[int]
    inodes: Dict[int, Inode] = field(default_factory=dict)
    pending_blocks: Dict[Tuple[int, int], int] = field(default_factory=dict)
    owned_blocks: Set[int] = field(default_factory=set)
    deferred_resets: List[Tuple[BitmapKind, int]] = field(default_factory=list)
    set_bits: List[Tuple[BitmapKind, int]] = field(default_factory=list)
    unlogged_sets: List[int] = field(default_factory=list)
    last_entry: int = NO_PREV
    state: TxnState = TxnState.ACTIVE

    @property
    def ram_inode(self) -> Inode:
        return self.inodes[self.inum]

    def freed_inodes(self) -> Set[int]:
        return {index for kind, index in self.deferred_resets if kind is BitmapKind.INODE}


@dataclass
class RamMetadata:
    fbb: Bitmap
    fib: Bitmap
    inode_cache: Dict[int, Inode] = field(default_factory=dict)


def apply_entry(device: PmDevice, regions: RegionMap, entry: LogEntry, touched: Set[int]):
    """
    Apply one logged metadata change to its home location on the image with an
    absolute write. Byte addresses of changed bytes are added to touched.
    """
    kind = entry.type
    if kind in (EntryType.SET_FBB_BIT, EntryType.RESET_FBB_BIT):
        addr = pm_write_bit(device, regions.fb_map_off, entry.data3, kind == EntryType.SET_FBB_BIT)
        if addr is not None:
            touched.add(addr)
    elif kind == EntryType.SET_INODE_BIT:
        addr = pm_write_bit(device, regions.fi_map_off, entry.data3, True)
        if addr is not None:
            touched.add(addr)
        inode_write(device, regions, entry.data3, Inode(type=entry.data1))
        touched.update(range(regions.inode_addr(entry.data3), regions.inode_addr(entry.data3) + INODE_SIZE))
    elif kind == EntryType.RESET_INODE_BIT:
        addr = pm_write_bit(device, regions.fi_map_off, entry.data3, False)
        if addr is not None:
            touched.add(addr)
        inode_write(device, regions, entry.data3, Inode())
        touched.update(range(regions.inode_addr(entry.data3), regions.inode_addr(entry.data3) + INODE_SIZE))
    elif kind == EntryType.UPD_BLOCK_ADDR:
        if entry.data2 in (0, ROOT_SLOT):
            _store_field(device, regions.inode_addr(entry.data1) + I_BLOCK_OFFSET, entry.data3, 4, touched)
    elif kind == EntryType.UPD_I_SIZE:
        _store_field(device, regions.inode_addr(entry.data1) + I_SIZE_OFFSET, entry.data3, 8, touched)
    elif kind == EntryType.UPD_I_BLOCKS:
        _store_field(device, regions.inode_addr(entry.data1) + I_BLOCKS_OFFSET, entry.data3, 4, touched)


def _store_field(device: PmDevice, addr: int, value: int, width: int, touched: Set[int]):
    raw = value.to_bytes(width, "little")
    if device.read(addr, width) != raw:
        device.store(addr, raw)
        touched.update(range(addr, addr + width))


def flush_touched(device: PmDevice, touched: Set[int]) -> int:
    """clwb each line holding a touched byte once; returns the number of clwbs."""
    lines = sorted({addr // CACHE_LINE_SIZE for addr in touched})
    for line in lines:
        device.clwb(line * CACHE_LINE_SIZE)
    return len(lines)


def _stage_on_inode(inode: Inode, entry_type: EntryType, data2: int, value: int):
    """Mirror of apply_entry's inode rules on a RAM copy."""
    if entry_type == EntryType.UPD_BLOCK_ADDR:
        if data2 in (0, ROOT_SLOT):
            inode.i_block = value
    elif entry_type == EntryType.UPD_I_SIZE:
        inode.i_size = value
    elif entry_type == EntryType.UPD_I_BLOCKS:
        inode.i_blocks = value


class TxnManager:
    """
    Owns the RAM metadata and the log. One coarse guard serializes allocation,
    log appends and commit application across threads.
    """
    def __init__(self, device: PmDevice, regions: RegionMap, ram: RamMetadata,
                 trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
                 flush_stats: Optional[FlushStats] = None):
        self.device = device
        self.regions = regions
        self.ram = ram
        self.guard = threading.RLock()
        self.active: Dict[int, Txn] = {}
        self.writers: Dict[int, Txn] = {}
        self.flush_stats = flush_stats or FlushStats()
        self.log = RedoLog(device, regions, trim_threshold, active_txns=self.active_txn_numbers)
        self._next_txn_no = 1
        self._block_hint = regions.first_data_block
        self._inode_hint = ROOT_INODE + 1

    def active_txn_numbers(self) -> Set[int]:
        return set(self.active)

    # Lifecycle

    def begin(self, inum: Optional[int] = None) -> Txn:
        """Start a transaction; with an inode number it becomes that inode's writer."""
        with self.guard:
            if inum is not None:
                self.load_inode(inum)
                self._check_not_busy(inum)
            txn = Txn(txn_no=self._allocate_txn_no(), inum=inum)
            txn.last_entry = self.log.append(txn.txn_no, EntryType.BEGIN)
            self.active[txn.txn_no] = txn
            if inum is not None:
                self._attach(txn, inum)
            logger.debug(f"txn {txn.txn_no} begin on inode {inum}")
            return txn

    def attach(self, txn: Txn, inum: int):
        """Make txn the writer of another existing inode."""
        with self.guard:
            self._require_active(txn)
            if inum in txn.inodes:
                return
            self.load_inode(inum)
            self._check_not_busy(inum)
            self._attach(txn, inum)
            if txn.inum is None:
                txn.inum = inum

    def _attach(self, txn: Txn, inum: int):
        # working copy of the inode in RAM
        txn.inodes[inum] = self.load_inode(inum).copy()
        self.writers[inum] = txn

    def _check_not_busy(self, inum: int):
        if inum in self.writers:
            raise BusyError(f"Inode {inum} already has a writer (txn {self.writers[inum].txn_no})")

    def load_inode(self, inum: int) -> Inode:
        """Last committed copy of an allocated inode."""
        cached = self.ram.inode_cache.get(inum)
        if cached is not None:
            return cached
        if not 0 <= inum < self.regions.inode_count or not self.ram.fib.is_set(inum):
            raise NotFoundError(f"Inode {inum} does not exist")
        inode = inode_read(self.device, self.regions, inum)
        if inode.is_free:
            raise NotFoundError(f"Inode {inum} does not exist")
        self.ram.inode_cache[inum] = inode
        return inode

    def is_writer(self, inum: int) -> bool:
        return inum in self.writers

    def _allocate_txn_no(self) -> int:
        for _ in range(TXN_NO_MASK):
            candidate = self._next_txn_no
            self._next_txn_no = (self._next_txn_no % TXN_NO_MASK) + 1
            if candidate not in self.active:
                return candidate
        raise TxnStateError("No free transaction number")

    def _append(self, txn: Txn, entry_type: EntryType, data1: int = 0, data2: int = 0, data3: int = 0) -> int:
        index = self.log.append(txn.txn_no, entry_type, data1, data2, data3, prev=txn.last_entry)
        txn.last_entry = index
        return index

    def _require_active(self, txn: Txn):
        if txn.state is not TxnState.ACTIVE:
            raise TxnStateError(f"Transaction {txn.txn_no} is {txn.state.value}")

    # Allocation

    def alloc_block(self, txn: Txn, defer_log: bool = False) -> int:
        """
        Grant a free block. The RAM bit is set at once; the SetFbbBit entry is
        appended now, or by log_deferred_sets once the block's data is fenced.
        """
        with self.guard:
            self._require_active(txn)
            block = self.ram.fbb.find_free(self._block_hint)
            if block is None or not self.regions.is_data_block(block):
                raise NoSpaceError("No free data blocks")
            self.ram.fbb.set(block)
            self._block_hint = block + 1 if block + 1 < self.regions.total_blocks else self.regions.first_data_block
            txn.set_bits.append((BitmapKind.BLOCK, block))
            txn.owned_blocks.add(block)
            if defer_log:
                txn.unlogged_sets.append(block)
            else:
                self._append(txn, EntryType.SET_FBB_BIT, data3=block)
            return block

    def log_deferred_sets(self, txn: Txn):
        """Append SetFbbBit for blocks whose contents are now durable."""
        with self.guard:
            for block in txn.unlogged_sets:
                self._append(txn, EntryType.SET_FBB_BIT, data3=block)
            txn.unlogged_sets.clear()

    def alloc_inode(self, txn: Txn, inode_type: int) -> int:
        with self.guard:
            self._require_active(txn)
            inum = self.ram.fib.find_free(self._inode_hint)
            if inum is None:
                raise NoSpaceError("No free inodes")
            self.ram.fib.set(inum)
            self._inode_hint = inum + 1 if inum + 1 < self.regions.inode_count else ROOT_INODE + 1
            txn.set_bits.append((BitmapKind.INODE, inum))
            self._append(txn, EntryType.SET_INODE_BIT, data1=inode_type, data3=inum)
            txn.inodes[inum] = Inode(type=inode_type)
            self.writers[inum] = txn
            return inum

    def free_block(self, txn: Txn, block: int):
        self._free(txn, BitmapKind.BLOCK, block)

    def free_inode(self, txn: Txn, inum: int):
        self._free(txn, BitmapKind.INODE, inum)

    def _free(self, txn: Txn, kind: BitmapKind, index: int):
        with self.guard:
            self._require_active(txn)
            bitmap = self.ram.fbb if kind is BitmapKind.BLOCK else self.ram.fib
            if (kind, index) in txn.deferred_resets:
                raise DoubleFreeError(f"{kind.value} bit {index} freed twice in txn {txn.txn_no}")
            if not bitmap.is_set(index):
                raise DoubleFreeError(f"{kind.value} bit {index} is not allocated")
            entry_type = EntryType.RESET_FBB_BIT if kind is BitmapKind.BLOCK else EntryType.RESET_INODE_BIT
            self._append(txn, entry_type, data3=index)
            # RAM bitmap keeps the bit until commit
            txn.deferred_resets.append((kind, index))

    # Inode staging

    def stage_inode_update(self, txn: Txn, inode_field: InodeField, value: int,
                           inum: Optional[int] = None, logical: int = 0):
        """Update the RAM inode and log the change, unconditionally."""
        with self.guard:
            self._require_active(txn)
            inum = txn.inum if inum is None else inum
            inode = txn.inodes[inum]
            entry_type = inode_field.value
            data2 = logical if inode_field is InodeField.BLOCK_ADDR else 0
            self._append(txn, entry_type, data1=inum, data2=data2, data3=value)
            _stage_on_inode(inode, entry_type, data2, value)

    # Commit / abort

    def commit(self, txn: Txn):
        with self.guard:
            self._require_active(txn)
            if txn.unlogged_sets:
                self.log_deferred_sets(txn)

            # 1-2: commit record, fenced inside append
            commit_entry = LogEntry(EntryType.COMMIT, txn.txn_no, txn.last_entry)
            commit_index = self._append(txn, EntryType.COMMIT)
            txn.state = TxnState.COMMITTED

            # 3: read back the commit record
            if not self.log.read_back(commit_index, commit_entry):
                raise ReadBackMismatchError(f"Commit record of txn {txn.txn_no} did not read back")

            # 4: apply the chain oldest first to the image
            touched: Set[int] = set()
            for _, entry in self.log.chain_oldest_first(commit_index):
                apply_entry(self.device, self.regions, entry, touched)

            # 5: deferred resets reach the RAM bitmaps only now
            for kind, index in txn.deferred_resets:
                bitmap = self.ram.fbb if kind is BitmapKind.BLOCK else self.ram.fib
                bitmap.clear(index)

            # 6-7: flush touched metadata lines and fence
            self.flush_stats.meta_clwbs += flush_touched(self.device, touched)
            self.device.sfence()

            # 8: end record
            self._append(txn, EntryType.END)
            txn.state = TxnState.ENDED

            freed = txn.freed_inodes()
            for inum, inode in txn.inodes.items():
                if inum in freed:
                    self.ram.inode_cache.pop(inum, None)
                else:
                    self.ram.inode_cache[inum] = inode.copy()
            self._release(txn)
            self.flush_stats.commits += 1
            logger.debug(f"txn {txn.txn_no} committed: {len(touched)} metadata bytes, "
                         f"{len(txn.set_bits)} sets, {len(txn.deferred_resets)} deferred resets")

    def abort(self, txn: Txn):
        with self.guard:
            self._require_active(txn)
            for kind, index in txn.set_bits:
                bitmap = self.ram.fbb if kind is BitmapKind.BLOCK else self.ram.fib
                bitmap.clear(index)
            txn.inodes.clear()
            txn.deferred_resets.clear()
            txn.unlogged_sets.clear()
            txn.state = TxnState.ABORTED
            self._release(txn)
            self.flush_stats.aborts += 1
            logger.debug(f"txn {txn.txn_no} aborted")

    def _release(self, txn: Txn):
        self.active.pop(txn.txn_no, None)
        for inum in [inum for inum, owner in self.writers.items() if owner is txn]:
            del self.writers[inum]
