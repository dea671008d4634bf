"""
Metadata redo log: a circular array of 16-byte entries behind a 32-byte header
{log_size_blocks, start, end}. start and end are absolute entry indices; an
entry lives in slot index % capacity.

Each entry is two little-endian 8-byte words:

    word0 = type:8 | txn_no:24 | prev:32
    word1 = data1:16 | data2:16 | data3:32

An append writes both words and then the new end with non-temporal stores and
fences, so an entry below a durable end is always complete.
"""
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterator, List, Optional, Set, Tuple

from logger import logger
from pmsim.device import PmDevice
from dfs.layout import RegionMap, read_log_header
from utils.constants import (
    DATA1_MAX, DATA2_MAX, DATA3_MAX, DEFAULT_TRIM_THRESHOLD, LOG_ENTRY_SIZE,
    LOG_HEADER_SIZE, NO_PREV, TXN_NO_MASK,
)
from utils.errors import CorruptionError, FieldWidthError, LogFullError

WORD_FORMAT = "<Q"
START_OFFSET = 8
END_OFFSET = 16


class EntryType(IntEnum):
    SET_INODE_BIT = 1
    RESET_INODE_BIT = 2
    SET_FBB_BIT = 3
    RESET_FBB_BIT = 4
    UPD_BLOCK_ADDR = 5
    UPD_I_SIZE = 6
    UPD_I_BLOCKS = 7
    BEGIN = 8
    COMMIT = 9
    END = 10


@dataclass(frozen=True)
class LogEntry:
    type: EntryType
    txn_no: int
    prev: int = NO_PREV
    data1: int = 0
    data2: int = 0
    data3: int = 0

    def validate(self):
        if not 0 <= self.txn_no <= TXN_NO_MASK:
            raise FieldWidthError(f"Transaction number {self.txn_no} does not fit in 24 bits")
        if not 0 <= self.prev <= NO_PREV:
            raise FieldWidthError(f"Back-reference {self.prev} does not fit in 32 bits")
        if not 0 <= self.data1 <= DATA1_MAX:
            raise FieldWidthError(f"data1={self.data1} does not fit in 16 bits")
        if not 0 <= self.data2 <= DATA2_MAX:
            raise FieldWidthError(f"data2={self.data2} does not fit in 16 bits")
        if not 0 <= self.data3 <= DATA3_MAX:
            raise FieldWidthError(f"data3={self.data3} does not fit in 32 bits")
        if self.type == EntryType.BEGIN and self.prev != NO_PREV:
            raise FieldWidthError("Begin entries have no previous entry")

    def words(self) -> Tuple[bytes, bytes]:
        word0 = int(self.type) | (self.txn_no << 8) | (self.prev << 32)
        word1 = self.data1 | (self.data2 << 16) | (self.data3 << 32)
        return struct.pack(WORD_FORMAT, word0), struct.pack(WORD_FORMAT, word1)

    def encode(self) -> bytes:
        word0, word1 = self.words()
        return word0 + word1

    @classmethod
    def decode(cls, raw: bytes) -> "LogEntry":
        (word0,) = struct.unpack(WORD_FORMAT, raw[:8])
        (word1,) = struct.unpack(WORD_FORMAT, raw[8:16])
        type_byte = word0 & 0xFF
        try:
            entry_type = EntryType(type_byte)
        except ValueError:
            raise CorruptionError(f"Unknown log entry type {type_byte}")
        return cls(
            type=entry_type,
            txn_no=(word0 >> 8) & TXN_NO_MASK,
            prev=word0 >> 32,
            data1=word1 & 0xFFFF,
            data2=(word1 >> 16) & 0xFFFF,
            data3=word1 >> 32,
        )


@dataclass
class LogHeader:
    log_size_blocks: int
    start: int
    end: int


class RedoLog:
    """
    Append, trim and scan over the log region. Appends are serialized by the
    transaction manager's guard; recovery scans with no concurrent appends.
    """
    def __init__(self, device: PmDevice, regions: RegionMap,
                 trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
                 active_txns: Optional[Callable[[], Set[int]]] = None):
        self.device = device
        self.regions = regions
        self.capacity = regions.log_capacity
        self.trim_threshold = trim_threshold
        self.active_txns = active_txns or (lambda: set())
        self.base = regions.log_off
        log_blocks, start, end = read_log_header(device, self.base)
        self.header = LogHeader(log_blocks, start, end)

    @property
    def start(self) -> int:
        return self.header.start

    @property
    def end(self) -> int:
        return self.header.end

    def __len__(self):
        return self.header.end - self.header.start

    def entry_addr(self, index: int) -> int:
        return self.base + LOG_HEADER_SIZE + (index % self.capacity) * LOG_ENTRY_SIZE

    def append(self, txn_no: int, entry_type: EntryType, data1: int = 0, data2: int = 0,
               data3: int = 0, prev: int = NO_PREV) -> int:
        """Append one entry and make it durable; returns its absolute index."""
        entry = LogEntry(entry_type, txn_no, prev, data1, data2, data3)
        entry.validate()

        if len(self) >= self.trim_threshold * self.capacity:
            self.trim()
        if len(self) >= self.capacity:
            raise LogFullError(f"Log full: {len(self)} of {self.capacity} entries belong to running transactions")

        index = self.header.end
        addr = self.entry_addr(index)
        word0, word1 = entry.words()
        self.device.nt_store(addr, word0)
        self.device.nt_store(addr + 8, word1)
        # end moves only after both words, then one fence publishes all three
        self.device.nt_store(self.base + END_OFFSET, index + 1)
        self.device.sfence()
        self.header.end = index + 1
        logger.debug(f"log[{index}] {entry_type.name} txn={txn_no} prev={prev} data=({data1},{data2},{data3})")
        return index

    def trim(self) -> int:
        """Advance start past the oldest entries that belong to no running transaction."""
        active = self.active_txns()
        start = self.header.start
        while start < self.header.end:
            if self.read_entry(start).txn_no in active:
                break
            start += 1

        freed = start - self.header.start
        if freed:
            self._set_start(start)
            logger.debug(f"Log trimmed {freed} entries, start={start} end={self.header.end}")
        elif len(self) >= self.trim_threshold * self.capacity:
            logger.warning(f"Log trim freed nothing: oldest entry belongs to a running transaction")
        return freed

    def clear(self):
        """Drop every entry (start := end)."""
        if len(self):
            self._set_start(self.header.end)

    def read_entry(self, index: int) -> LogEntry:
        return LogEntry.decode(self.device.read(self.entry_addr(index), LOG_ENTRY_SIZE))

    def read_back(self, index: int, entry: LogEntry) -> bool:
        """Compare the second word of an appended entry with the value written."""
        _, word1 = entry.words()
        return self.device.read(self.entry_addr(index) + 8, 8) == word1

    def scan(self) -> Iterator[Tuple[int, LogEntry]]:
        for index in range(self.header.start, self.header.end):
            yield index, self.read_entry(index)

    def chain(self, last_index: int) -> List[Tuple[int, LogEntry]]:
        """Entries of one transaction, newest first, following back-references."""
        entries = []
        index = last_index
        while index != NO_PREV:
            if not self.header.start <= index < self.header.end:
                raise CorruptionError(f"Back-reference to entry {index} outside the active log")
            entry = self.read_entry(index)
            entries.append((index, entry))
            if entry.prev != NO_PREV and entry.prev >= index:
                raise CorruptionError(f"Entry {index} points forward to {entry.prev}")
            index = entry.prev
        return entries

    def chain_oldest_first(self, last_index: int) -> List[Tuple[int, LogEntry]]:
        return list(reversed(self.chain(last_index)))

    def _set_start(self, start: int):
        self.device.nt_store(self.base + START_OFFSET, start)
        self.device.sfence()
        self.header.start = start
