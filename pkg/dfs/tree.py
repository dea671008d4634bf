"""
Block-reference tree behind i_block.

Height 0: i_block is the single data block. Height h > 0: i_block is an
interior node of 1024 little-endian u32 child indices (0 is a hole) and the
leaves sit h levels down. The height is not stored; it follows from i_size.
"""
import math
from typing import List, Tuple

import numpy as np

from pmsim.device import PmDevice
from utils.constants import BLOCK_SIZE, POINTERS_PER_BLOCK

NODE_DTYPE = np.dtype("<u4")


def height_for(size: int) -> int:
    """Minimal height whose tree can address ceil(size / 4096) blocks."""
    blocks = math.ceil(size / BLOCK_SIZE)
    if blocks <= 1:
        return 0
    height = 1
    while POINTERS_PER_BLOCK ** height < blocks:
        height += 1
    return height


def slot_path(logical: int, height: int) -> List[int]:
    """Child slot taken at each level, root first."""
    return [(logical // POINTERS_PER_BLOCK ** level) % POINTERS_PER_BLOCK for level in range(height - 1, -1, -1)]


def capacity_blocks(height: int) -> int:
    return POINTERS_PER_BLOCK ** height


class BlockTree:
    """Read-side walks over a tree stored on the device."""
    def __init__(self, device: PmDevice):
        self.device = device

    def read_node(self, block: int) -> np.ndarray:
        raw = self.device.read(block * BLOCK_SIZE, BLOCK_SIZE)
        return np.frombuffer(raw, dtype=NODE_DTYPE).copy()

    def lookup(self, root: int, height: int, logical: int) -> int:
        """Leaf block of a logical block, 0 for a hole."""
        if logical >= capacity_blocks(height):
            return 0
        block = root
        for slot in slot_path(logical, height):
            if block == 0:
                return 0
            addr = block * BLOCK_SIZE + slot * NODE_DTYPE.itemsize
            block = int.from_bytes(self.device.read(addr, NODE_DTYPE.itemsize), "little")
        return block

    def leaves(self, root: int, height: int) -> List[Tuple[int, int]]:
        """(logical, block) for every mapped leaf in logical order."""
        result = []
        self._collect(root, height, 0, result, [])
        return result

    def interior_nodes(self, root: int, height: int) -> List[int]:
        nodes = []
        self._collect(root, height, 0, [], nodes)
        return nodes

    def all_blocks(self, root: int, height: int) -> List[int]:
        leaves, nodes = [], []
        self._collect(root, height, 0, leaves, nodes)
        return nodes + [block for _, block in leaves]

    def _collect(self, block: int, height: int, base: int, leaves: list, nodes: list):
        if block == 0:
            return
        if height == 0:
            leaves.append((base, block))
            return
        nodes.append(block)
        children = self.read_node(block)
        span = POINTERS_PER_BLOCK ** (height - 1)
        for slot in np.flatnonzero(children):
            self._collect(int(children[slot]), height - 1, base + int(slot) * span, leaves, nodes)
