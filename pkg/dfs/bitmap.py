"""
RAM copies of the allocation bitmaps. Bit i lives in byte i // 8 at bit
position i % 8 (least significant bit first), the same order as on the image.
"""
from typing import Optional

import numpy as np

from pmsim.device import PmDevice


class Bitmap:
    def __init__(self, bits: np.ndarray):
        self.bits = bits.astype(bool, copy=True)

    @classmethod
    def from_bytes(cls, raw: bytes, nbits: int) -> "Bitmap":
        unpacked = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        return cls(unpacked[:nbits])

    @classmethod
    def from_device(cls, device: PmDevice, offset: int, length: int, nbits: int) -> "Bitmap":
        return cls.from_bytes(device.read(offset, length), nbits)

    def __len__(self):
        return len(self.bits)

    def is_set(self, index: int) -> bool:
        return bool(self.bits[index])

    def set(self, index: int):
        self.bits[index] = True

    def clear(self, index: int):
        self.bits[index] = False

    def find_free(self, start: int = 0) -> Optional[int]:
        """First clear bit at or after start, wrapping around once."""
        free = np.flatnonzero(~self.bits[start:])
        if free.size:
            return int(free[0]) + start
        free = np.flatnonzero(~self.bits[:start])
        if free.size:
            return int(free[0])
        return None

    def set_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def count_set(self) -> int:
        return int(self.bits.sum())

    def to_bytes(self, length: int) -> bytes:
        packed = np.packbits(self.bits, bitorder="little").tobytes()
        return packed + bytes(length - len(packed))

    def copy(self) -> "Bitmap":
        return Bitmap(self.bits)

    def __eq__(self, other):
        return isinstance(other, Bitmap) and np.array_equal(self.bits, other.bits)


def bit_address(map_offset: int, index: int):
    """Byte address and mask of a bitmap bit on the image."""
    return map_offset + index // 8, 1 << (index % 8)


def pm_write_bit(device: PmDevice, map_offset: int, index: int, value: bool) -> Optional[int]:
    """
    Read-modify-write of one bit on the image. Returns the byte address if the
    byte changed, None when the bit already had the value.
    """
    addr, mask = bit_address(map_offset, index)
    current = device.read(addr, 1)[0]
    updated = (current | mask) if value else (current & ~mask & 0xFF)
    if updated == current:
        return None
    device.store(addr, bytes([updated]))
    return addr
