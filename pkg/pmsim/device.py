"""
Simulated byte-addressable persistent memory.

Two images are kept: ``visible`` is what loads return, ``durable`` is what
survives a crash. Cached stores dirty 64-byte lines, ``clwb`` moves a dirty
line to flushing, and ``sfence`` drains every flushing line and every pending
non-temporal store into the durable image. Anything not yet fenced may or may
not survive a crash; the choice is made from a seed so that every crash image
can be replayed exactly.
"""
import itertools
from dataclasses import dataclass, fields
from enum import Enum
from typing import Callable, Iterator, List, Optional, Set, Tuple, Union

import numpy as np

from logger import logger
from utils.constants import (
    CACHE_LINE_SIZE, NT_STORE_WIDTH, PAGE_SIZE, ORDERING_PREFIX, ORDERING_RELAXED,
)
from utils.errors import AlignmentError, BoundsError, DeviceError


class OrderingModel(Enum):
    """How pending non-temporal stores may survive a crash."""
    PREFIX_ORDERED = ORDERING_PREFIX    # a program-order prefix
    RELAXED = ORDERING_RELAXED  # any subset

    @classmethod
    def from_name(cls, name: Union[str, "OrderingModel"]) -> "OrderingModel":
        if isinstance(name, OrderingModel):
            return name
        for model in cls:
            if model.value == name or model.name == name:
                return model
        raise ValueError(f"Unknown ordering model: {name}")


class LineState(Enum):
    CLEAN = 0
    DIRTY = 1
    FLUSHING = 2


@dataclass
class DeviceStats:
    stores: int = 0
    nt_stores: int = 0
    clwbs: int = 0
    sfences: int = 0
    bytes_written: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


OpHook = Callable[["PmDevice", int, str], None]


class PmDevice:
    """
    Persistent memory region with explicit persistence ordering and crash injection.
    Single-threaded: callers serialize all device operations.
    """
    def __init__(self, capacity_bytes: int,
                 ordering_model: Union[str, OrderingModel] = OrderingModel.PREFIX_ORDERED,
                 rng_seed: int = 0, image: Optional[bytes] = None):
        if capacity_bytes <= 0 or capacity_bytes % PAGE_SIZE:
            raise DeviceError(f"Capacity must be a positive multiple of {PAGE_SIZE}: {capacity_bytes}")
        if image is not None and len(image) != capacity_bytes:
            raise DeviceError(f"Image is {len(image)} bytes, expected {capacity_bytes}")

        self.capacity_bytes = capacity_bytes
        self.ordering_model = OrderingModel.from_name(ordering_model)
        self.rng_seed = rng_seed
        self.visible = bytearray(image) if image is not None else bytearray(capacity_bytes)
        self.durable = bytearray(self.visible)
        self.dirty_lines: Set[int] = set()
        self.flushing_lines: Set[int] = set()
        self.nt_pending: List[Tuple[int, bytes]] = []
        self.epoch_counter = 0
        self.op_count = 0
        self.stats = DeviceStats()
        self.on_op: Optional[OpHook] = None
        self.trace: Optional[List[Tuple[str, int]]] = None

    # Persistence primitives

    def store(self, addr: int, data: bytes):
        """Ordinary cached store: visible immediately, durable only once flushed and fenced."""
        size = len(data)
        self._check_range(addr, size)
        if size == 0:
            return
        self.visible[addr:addr + size] = data
        first = addr // CACHE_LINE_SIZE
        last = (addr + size - 1) // CACHE_LINE_SIZE
        for line in range(first, last + 1):
            self.dirty_lines.add(line)
            self.flushing_lines.discard(line)
        self.stats.stores += 1
        self.stats.bytes_written += size
        self._advance("store", addr)

    def nt_store(self, addr: int, value: Union[bytes, int]):
        """Eight-byte non-temporal store; bypasses the cache, durable at the next fence."""
        if isinstance(value, int):
            value = value.to_bytes(NT_STORE_WIDTH, "little")
        if len(value) != NT_STORE_WIDTH:
            raise AlignmentError(f"Non-temporal stores are {NT_STORE_WIDTH} bytes wide, got {len(value)}")
        if addr % NT_STORE_WIDTH:
            raise AlignmentError(f"Non-temporal store address {addr} is not {NT_STORE_WIDTH}-byte aligned")
        self._check_range(addr, NT_STORE_WIDTH)
        value = bytes(value)
        self.visible[addr:addr + NT_STORE_WIDTH] = value
        self.nt_pending.append((addr, value))
        self.stats.nt_stores += 1
        self.stats.bytes_written += NT_STORE_WIDTH
        self._advance("nt_store", addr)

    def clwb(self, addr: int):
        """Start writeback of the line holding addr."""
        self._check_range(addr, 1)
        line = addr // CACHE_LINE_SIZE
        if line in self.dirty_lines:
            self.dirty_lines.discard(line)
            self.flushing_lines.add(line)
        self.stats.clwbs += 1
        self._advance("clwb", addr)

    def sfence(self):
        """Drain flushing lines and pending non-temporal stores into the durable image."""
        for line in self.flushing_lines:
            start = line * CACHE_LINE_SIZE
            self.durable[start:start + CACHE_LINE_SIZE] = self.visible[start:start + CACHE_LINE_SIZE]
        self.flushing_lines.clear()
        for addr, value in self.nt_pending:
            self.durable[addr:addr + NT_STORE_WIDTH] = value
        self.nt_pending.clear()
        self.epoch_counter += 1
        self.stats.sfences += 1
        self._advance("sfence", -1)

    def read(self, addr: int, size: int) -> bytes:
        self._check_range(addr, size)
        return bytes(self.visible[addr:addr + size])

    def persistent(self, addr: int, size: int) -> bytes:
        """Bytes of the durable image; what a crash right now is guaranteed to keep."""
        self._check_range(addr, size)
        return bytes(self.durable[addr:addr + size])

    def flush_range(self, addr: int, size: int) -> int:
        """clwb every line overlapping [addr, addr+size); returns the number of clwbs issued."""
        if size <= 0:
            return 0
        first = addr // CACHE_LINE_SIZE
        last = (addr + size - 1) // CACHE_LINE_SIZE
        for line in range(first, last + 1):
            self.clwb(line * CACHE_LINE_SIZE)
        return last - first + 1

    def line_state(self, addr: int) -> LineState:
        line = addr // CACHE_LINE_SIZE
        if line in self.flushing_lines:
            return LineState.FLUSHING
        if line in self.dirty_lines:
            return LineState.DIRTY
        return LineState.CLEAN

    def is_quiescent(self) -> bool:
        """True when nothing is waiting to become durable."""
        return not (self.dirty_lines or self.flushing_lines or self.nt_pending)

    # Crash model

    def crash(self, seed: Optional[int] = None) -> "PmDevice":
        """
        Return the device as it comes back after power loss. Unfenced lines and
        non-temporal stores survive according to the ordering model and the seed.
        """
        seed = self.rng_seed if seed is None else seed
        rng = np.random.default_rng(seed)
        candidates = self._unfenced_lines()
        line_mask = rng.random(len(candidates)) < 0.5
        pending = len(self.nt_pending)
        if self.ordering_model is OrderingModel.PREFIX_ORDERED:
            keep = int(rng.integers(0, pending + 1))
            nt_mask = np.arange(pending) < keep
        else:
            nt_mask = rng.random(pending) < 0.5

        image = self._compose_image(candidates, line_mask, nt_mask)
        logger.debug(
            f"Crash seed={seed}: kept {int(line_mask.sum())}/{len(candidates)} unfenced lines, "
            f"{int(nt_mask.sum())}/{pending} pending nt stores"
        )
        return PmDevice(self.capacity_bytes, self.ordering_model, seed, image=bytes(image))

    def crash_images(self, limit: int = 4096) -> Iterator["PmDevice"]:
        """Enumerate every admissible crash image (exhaustive mode for short traces)."""
        candidates = self._unfenced_lines()
        pending = len(self.nt_pending)
        if self.ordering_model is OrderingModel.PREFIX_ORDERED:
            nt_choices = [np.arange(pending) < keep for keep in range(pending + 1)]
        else:
            nt_choices = [np.array(bits, dtype=bool) for bits in itertools.product([False, True], repeat=pending)]

        total = (2 ** len(candidates)) * len(nt_choices)
        if total > limit:
            raise DeviceError(f"{total} admissible crash images exceed the enumeration limit {limit}")

        for line_bits in itertools.product([False, True], repeat=len(candidates)):
            line_mask = np.array(line_bits, dtype=bool)
            for nt_mask in nt_choices:
                image = self._compose_image(candidates, line_mask, nt_mask)
                yield PmDevice(self.capacity_bytes, self.ordering_model, self.rng_seed, image=bytes(image))

    def _unfenced_lines(self) -> List[int]:
        return sorted(self.dirty_lines | self.flushing_lines)

    def _compose_image(self, lines: List[int], line_mask: np.ndarray, nt_mask: np.ndarray) -> bytearray:
        image = bytearray(self.durable)
        for line, keep in zip(lines, line_mask):
            if keep:
                start = line * CACHE_LINE_SIZE
                image[start:start + CACHE_LINE_SIZE] = self.visible[start:start + CACHE_LINE_SIZE]
        # A kept cache line must not leak a non-temporal value outside the chosen set
        for (addr, _), keep in zip(self.nt_pending, nt_mask):
            if not keep:
                image[addr:addr + NT_STORE_WIDTH] = self.durable[addr:addr + NT_STORE_WIDTH]
        for (addr, value), keep in zip(self.nt_pending, nt_mask):
            if keep:
                image[addr:addr + NT_STORE_WIDTH] = value
        return image

    # Images and statistics

    def save(self, path: str):
        """Write the durable image to a raw binary file."""
        with open(path, "wb") as f:
            f.write(self.durable)
        logger.info(f"Saved {self.capacity_bytes} byte image to {path}")

    @classmethod
    def load(cls, path: str, ordering_model: Union[str, OrderingModel] = OrderingModel.PREFIX_ORDERED,
             rng_seed: int = 0) -> "PmDevice":
        with open(path, "rb") as f:
            image = f.read()
        logger.info(f"Loaded {len(image)} byte image from {path}")
        return cls(len(image), ordering_model, rng_seed, image=image)

    def persist_all(self):
        """Flush every unfenced line and fence. Used by offline tools such as mkfs."""
        for line in self._unfenced_lines():
            self.clwb(line * CACHE_LINE_SIZE)
        self.sfence()

    def reset_stats(self):
        self.stats = DeviceStats()

    def stats_report(self) -> str:
        """Flat key=value report of the device counters."""
        values = self.stats.as_dict()
        values["epochs"] = self.epoch_counter
        values["device_ops"] = self.op_count
        return "\n".join(f"{key}={value}" for key, value in values.items())

    def start_trace(self):
        self.trace = []

    def _check_range(self, addr: int, size: int):
        if addr < 0 or size < 0 or addr + size > self.capacity_bytes:
            raise BoundsError(f"Access [{addr}, {addr + size}) outside device of {self.capacity_bytes} bytes")

    def _advance(self, name: str, addr: int):
        self.op_count += 1
        if self.trace is not None:
            self.trace.append((name, addr))
        if self.on_op is not None:
            self.on_op(self, self.op_count, name)
