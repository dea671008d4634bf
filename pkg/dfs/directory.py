"""
ext3-style directory blocks. Each 4KB block is tiled by records

    inode u32 | rec_len u16 | name_len u8 | file_type u8 | name

An unused record has inode 0 (the root inode never appears as a child).
A record's rec_len may exceed its own size; the slack is free space.
"""
import struct
from dataclasses import dataclass
from typing import List, Optional

from utils.constants import BLOCK_SIZE, DIRENT_HEADER_SIZE, MAX_NAME_LEN
from utils.errors import CorruptionError, InvalidPathError

DIRENT_FORMAT = "<IHBB"
UNUSED_INODE = 0


@dataclass
class Dirent:
    inode: int
    rec_len: int
    name_len: int
    file_type: int
    name: str
    offset: int = 0

    @property
    def in_use(self) -> bool:
        return self.inode != UNUSED_INODE

    @property
    def needed(self) -> int:
        return record_size(self.name_len) if self.in_use else 0


def record_size(name_len: int) -> int:
    return (DIRENT_HEADER_SIZE + name_len + 3) & ~3


def encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if not raw or len(raw) > MAX_NAME_LEN or b"/" in raw or b"\0" in raw or name in (".", ".."):
        raise InvalidPathError(f"Invalid file name: {name!r}")
    return raw


def empty_block() -> bytes:
    block = bytearray(BLOCK_SIZE)
    struct.pack_into(DIRENT_FORMAT, block, 0, UNUSED_INODE, BLOCK_SIZE, 0, 0)
    return bytes(block)


def parse_block(raw: bytes) -> List[Dirent]:
    """Every record of a block, in order; raises CorruptionError if they do not tile it."""
    entries = []
    offset = 0
    while offset < BLOCK_SIZE:
        if offset + DIRENT_HEADER_SIZE > BLOCK_SIZE:
            raise CorruptionError(f"Directory record header at {offset} crosses the block end")
        inode, rec_len, name_len, file_type = struct.unpack_from(DIRENT_FORMAT, raw, offset)
        if rec_len < DIRENT_HEADER_SIZE + name_len or rec_len % 4 or offset + rec_len > BLOCK_SIZE:
            raise CorruptionError(f"Directory record at {offset} has bad rec_len {rec_len}")
        name_raw = bytes(raw[offset + DIRENT_HEADER_SIZE:offset + DIRENT_HEADER_SIZE + name_len])
        try:
            name = name_raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError(f"Directory record at {offset} has an undecodable name")
        entries.append(Dirent(inode, rec_len, name_len, file_type, name, offset))
        offset += rec_len
    return entries


def live_entries(raw: bytes) -> List[Dirent]:
    return [entry for entry in parse_block(raw) if entry.in_use]


def find_entry(raw: bytes, name: str) -> Optional[Dirent]:
    for entry in live_entries(raw):
        if entry.name == name:
            return entry
    return None


def add_entry(raw: bytes, inode: int, name: str, file_type: int) -> Optional[bytes]:
    """Block with the record added, or None when the block has no room."""
    name_raw = encode_name(name)
    needed = record_size(len(name_raw))
    block = bytearray(raw)
    for entry in parse_block(raw):
        if entry.in_use:
            slack = entry.rec_len - entry.needed
            if slack < needed:
                continue
            # split: the existing record keeps only what it needs
            struct.pack_into("<H", block, entry.offset + 4, entry.needed)
            _write_record(block, entry.offset + entry.needed, inode, slack, name_raw, file_type)
            return bytes(block)
        if entry.rec_len >= needed:
            _write_record(block, entry.offset, inode, entry.rec_len, name_raw, file_type)
            return bytes(block)
    return None


def remove_entry(raw: bytes, name: str) -> bytes:
    """Block with the named record removed; its space joins the previous record."""
    block = bytearray(raw)
    previous = None
    for entry in parse_block(raw):
        if entry.in_use and entry.name == name:
            if previous is None:
                struct.pack_into("<I", block, entry.offset, UNUSED_INODE)
            else:
                struct.pack_into("<H", block, previous.offset + 4, previous.rec_len + entry.rec_len)
            return bytes(block)
        previous = entry
    raise KeyError(name)


def _write_record(block: bytearray, offset: int, inode: int, rec_len: int, name_raw: bytes, file_type: int):
    struct.pack_into(DIRENT_FORMAT, block, offset, inode, rec_len, len(name_raw), file_type)
    block[offset + DIRENT_HEADER_SIZE:offset + DIRENT_HEADER_SIZE + len(name_raw)] = name_raw
