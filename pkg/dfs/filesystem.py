"""
DurableFS: every open-to-close of a file is one atomic, durable transaction.

Data is never overwritten in place once committed. A write copies the
affected block into a freshly allocated one, flushes and fences it, and only
then logs the allocation and the new block reference. Interior nodes of the
block tree are copied the same way, bottom up, so a crash at any point leaves
the committed tree untouched. Blocks the running transaction allocated itself
are invisible to everyone else and are rewritten in place.

Namespace operations (create, unlink, mkdir, rmdir) each run as their own
transaction and are committed before they return.
"""
import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np

from logger import logger
from pmsim.device import PmDevice
from dfs.directory import (
    Dirent, add_entry, empty_block, encode_name, find_entry, live_entries, remove_entry,
)
from dfs.layout import Inode, mkfs
from dfs.mount import MountedFs, mount
from dfs.tree import NODE_DTYPE, BlockTree, height_for, slot_path
from dfs.txn import FlushStats, InodeField, Txn, TxnManager, TxnState
from utils.constants import (
    BLOCK_SIZE, DEFAULT_INODE_MAP_BLOCKS, DEFAULT_TRIM_THRESHOLD, INODE_TYPE_DIRECTORY,
    INODE_TYPE_FILE, MAX_LOGICAL_BLOCKS, POINTERS_PER_BLOCK, ROOT_INODE,
    ROOT_SLOT,
)
from utils.errors import (
    DurableFSError, ExistsError, HandleClosedError, InvalidPathError, NoSpaceError,
    NotEmptyError, NotFoundError, ReadOnlyHandleError, TxnStateError, TypeMismatchError,
)


class OpenMode(Enum):
    READ = "r"
    WRITE = "w"
    CREATE = "c"

    @property
    def writable(self) -> bool:
        return self is not OpenMode.READ


@dataclass
class TxnGroup:
    """One transaction shared by several write handles, committed by close_many."""
    txn: Txn
    handles: List["FileHandle"] = field(default_factory=list)


@dataclass
class FileHandle:
    handle_id: int
    path: str
    inum: int
    mode: OpenMode
    txn: Optional[Txn] = None
    group: Optional[TxnGroup] = None
    closed: bool = False

    @property
    def writable(self) -> bool:
        return self.mode.writable


@dataclass(frozen=True)
class StatResult:
    inum: int
    type: int
    size: int
    blocks: int


def split_path(path: str) -> Tuple[str, str]:
    """'/a/b/c' -> ('/a/b', 'c')."""
    parts = _components(path)
    if not parts:
        raise InvalidPathError("The root directory has no parent")
    return "/" + "/".join(parts[:-1]), parts[-1]


def _components(path: str) -> List[str]:
    if not path.startswith("/"):
        raise InvalidPathError(f"Path must be absolute: {path!r}")
    return [part for part in path.split("/") if part]


class DurableFS:
    def __init__(self, mounted: MountedFs, trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
                 flush_data: bool = True):
        self.device: PmDevice = mounted.device
        self.regions = mounted.regions
        self.ram = mounted.ram
        self.recovery = mounted.recovery
        self.flush_data = flush_data
        self.flush_stats = FlushStats()
        self.txns = TxnManager(self.device, self.regions, self.ram, trim_threshold, self.flush_stats)
        self.tree = BlockTree(self.device)
        self._handle_ids = itertools.count(1)

    @classmethod
    def mount(cls, device: PmDevice, trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
              flush_data: bool = True) -> "DurableFS":
        return cls(mount(device), trim_threshold, flush_data)

    @classmethod
    def format(cls, device: PmDevice, log_blocks: int, ib: int = DEFAULT_INODE_MAP_BLOCKS,
               **kwargs) -> "DurableFS":
        mkfs(device, log_blocks, ib)
        return cls.mount(device, **kwargs)

    @property
    def guard(self):
        return self.txns.guard

    # File transactions

    def open(self, path: str, mode: str = "r", group: Optional[TxnGroup] = None) -> FileHandle:
        """
        Open path as a reader ("r"), writer ("w") or create-then-writer ("c").

        A writer stages changes in its own transaction until close. A reader
        takes no snapshot: every read loads the last committed inode, so it
        sees commits made after open but never a writer's uncommitted data.
        """
        open_mode = OpenMode(mode)
        with self.guard:
            try:
                inum = self.resolve(path)
            except NotFoundError:
                if open_mode is not OpenMode.CREATE:
                    raise
                dirpath, name = split_path(path)
                inum = self.create(dirpath, name)

            inode = self.txns.load_inode(inum)
            handle = FileHandle(next(self._handle_ids), path, inum, open_mode)
            if not open_mode.writable:
                return handle
            if not inode.is_file:
                raise TypeMismatchError(f"{path} is not a regular file")
            if group is not None:
                self.txns.attach(group.txn, inum)
                handle.txn, handle.group = group.txn, group
                group.handles.append(handle)
            else:
                handle.txn = self.txns.begin(inum)
            logger.debug(f"open {path} mode={mode} inode={inum} txn={handle.txn.txn_no}")
            return handle

    def write(self, handle: FileHandle, buffer: bytes, size: Optional[int] = None, offset: int = 0) -> int:
        """Stage a write inside the handle's transaction. A failed write aborts the transaction."""
        self._check_open(handle)
        if not handle.writable:
            raise ReadOnlyHandleError(f"{handle.path} was opened read-only")
        data = bytes(buffer if size is None else buffer[:size])
        if not data:
            return 0
        with self.guard:
            try:
                self._write(handle.txn, handle.inum, offset, data)
            except DurableFSError:
                self._abort_handle(handle)
                raise
        return len(data)

    def read(self, handle: FileHandle, size: int, offset: int = 0) -> bytes:
        self._check_open(handle)
        with self.guard:
            if handle.writable:
                inode = handle.txn.inodes[handle.inum]
                pending = handle.txn.pending_blocks
            else:
                inode = self.txns.load_inode(handle.inum)
                pending = {}
            return self._read(handle.inum, inode, size, offset, pending)

    def close(self, handle: FileHandle):
        self._check_open(handle)
        if handle.group is not None:
            raise TxnStateError(f"{handle.path} belongs to a group; close it with close_many")
        handle.closed = True
        if not handle.writable:
            return
        self._commit(handle.txn)
        logger.debug(f"close {handle.path} inode={handle.inum}")

    def begin_group(self) -> TxnGroup:
        return TxnGroup(self.txns.begin())

    def close_many(self, handles: List[FileHandle]):
        """Commit several files as one transaction with a single Commit/End pair."""
        if not handles:
            return
        group = handles[0].group
        for handle in handles:
            self._check_open(handle)
            if handle.group is None or handle.group is not group:
                raise TxnStateError("close_many needs handles of one group")
        closing = {id(handle) for handle in handles}
        missing = [h for h in group.handles if not h.closed and id(h) not in closing]
        if missing:
            raise TxnStateError(f"{len(missing)} handles of the group are still open")
        for handle in handles:
            handle.closed = True
        self._commit(group.txn)

    def _commit(self, txn: Txn):
        try:
            self.txns.commit(txn)
        except DurableFSError:
            if txn.state is TxnState.ACTIVE:
                self.txns.abort(txn)
            raise

    def _abort_handle(self, handle: FileHandle):
        if handle.txn.state is TxnState.ACTIVE:
            self.txns.abort(handle.txn)
        targets = handle.group.handles if handle.group else [handle]
        for target in targets:
            target.closed = True

    def _check_open(self, handle: FileHandle):
        if handle.closed:
            raise HandleClosedError(f"Handle {handle.handle_id} on {handle.path} is closed")

    # Namespace

    def resolve(self, path: str) -> int:
        with self.guard:
            inum = ROOT_INODE
            for name in _components(path):
                inode = self.txns.load_inode(inum)
                if not inode.is_dir:
                    raise TypeMismatchError(f"{name!r} is looked up in inode {inum}, which is not a directory")
                dirent = self._lookup(inum, inode, name)
                if dirent is None:
                    raise NotFoundError(f"No such file or directory: {path}")
                inum = dirent.inode
            return inum

    def create(self, dirpath: str, name: str, inode_type: int = INODE_TYPE_FILE) -> int:
        encode_name(name)
        if inode_type not in (INODE_TYPE_FILE, INODE_TYPE_DIRECTORY):
            raise TypeMismatchError(f"Cannot create inodes of type {inode_type}")
        with self.guard:
            parent = self._resolve_dir(dirpath)
            if self._lookup(parent, self.txns.load_inode(parent), name) is not None:
                raise ExistsError(f"{name!r} already exists in {dirpath}")
            with self._namespace_txn(parent) as txn:
                inum = self.txns.alloc_inode(txn, inode_type)
                self._add_dirent(txn, parent, inum, name, inode_type)
            logger.debug(f"create {dirpath}/{name} type={inode_type} inode={inum}")
            return inum

    def mkdir(self, dirpath: str, name: str) -> int:
        return self.create(dirpath, name, INODE_TYPE_DIRECTORY)

    def unlink(self, dirpath: str, name: str):
        self._remove(dirpath, name, directory=False)

    def rmdir(self, dirpath: str, name: str):
        self._remove(dirpath, name, directory=True)

    def readdir(self, path: str) -> List[Dirent]:
        with self.guard:
            inum = self._resolve_dir(path)
            entries = []
            for _, raw in self._dir_blocks(inum, self.txns.load_inode(inum)):
                entries.extend(live_entries(raw))
            return entries

    def stat(self, path: str) -> StatResult:
        with self.guard:
            inum = self.resolve(path)
            inode = self.txns.load_inode(inum)
            return StatResult(inum, inode.type, inode.i_size, inode.i_blocks)

    def walk(self, path: str = "/") -> Iterator[Tuple[str, int]]:
        """(path, type) of everything below path, depth first in name order."""
        for dirent in sorted(self.readdir(path), key=lambda d: d.name):
            child = path.rstrip("/") + "/" + dirent.name
            yield child, dirent.file_type
            if dirent.file_type == INODE_TYPE_DIRECTORY:
                yield from self.walk(child)

    def read_file(self, path: str) -> bytes:
        handle = self.open(path, "r")
        try:
            return self.read(handle, self.stat(path).size)
        finally:
            self.close(handle)

    def write_file(self, path: str, data: bytes, offset: int = 0):
        """Create if missing, write, and commit."""
        handle = self.open(path, "c")
        self.write(handle, data, offset=offset)
        self.close(handle)

    def _remove(self, dirpath: str, name: str, directory: bool):
        with self.guard:
            parent = self._resolve_dir(dirpath)
            dirent = self._lookup(parent, self.txns.load_inode(parent), name)
            if dirent is None:
                raise NotFoundError(f"No such file or directory: {dirpath}/{name}")
            child = self.txns.load_inode(dirent.inode)
            if directory and not child.is_dir:
                raise TypeMismatchError(f"{name!r} is not a directory")
            if not directory and child.is_dir:
                raise TypeMismatchError(f"{name!r} is a directory")
            if directory and self._dir_has_entries(dirent.inode, child):
                raise NotEmptyError(f"Directory {name!r} is not empty")

            with self._namespace_txn(parent) as txn:
                self.txns.attach(txn, dirent.inode)
                for block in self.tree.all_blocks(child.i_block, height_for(child.i_size)):
                    self.txns.free_block(txn, block)
                self.txns.free_inode(txn, dirent.inode)
                self._remove_dirent(txn, parent, name)
            logger.debug(f"remove {dirpath}/{name} inode={dirent.inode}")

    @contextmanager
    def _namespace_txn(self, parent: int):
        txn = self.txns.begin(parent)
        try:
            yield txn
        except BaseException:
            if txn.state is TxnState.ACTIVE:
                self.txns.abort(txn)
            raise
        self._commit(txn)

    def _resolve_dir(self, path: str) -> int:
        inum = self.resolve(path)
        if not self.txns.load_inode(inum).is_dir:
            raise TypeMismatchError(f"{path} is not a directory")
        return inum

    def _lookup(self, inum: int, inode: Inode, name: str) -> Optional[Dirent]:
        for _, raw in self._dir_blocks(inum, inode):
            dirent = find_entry(raw, name)
            if dirent is not None:
                return dirent
        return None

    def _dir_has_entries(self, inum: int, inode: Inode) -> bool:
        return any(live_entries(raw) for _, raw in self._dir_blocks(inum, inode))

    def _dir_blocks(self, inum: int, inode: Inode) -> List[Tuple[int, bytes]]:
        count = inode.i_size // BLOCK_SIZE
        return [(logical, self._read(inum, inode, BLOCK_SIZE, logical * BLOCK_SIZE, {}))
                for logical in range(count)]

    def _add_dirent(self, txn: Txn, parent: int, inum: int, name: str, inode_type: int):
        blocks = self._dir_blocks(parent, txn.inodes[parent])
        for logical, raw in blocks:
            updated = add_entry(raw, inum, name, inode_type)
            if updated is not None:
                self._write(txn, parent, logical * BLOCK_SIZE, updated)
                return
        updated = add_entry(empty_block(), inum, name, inode_type)
        self._write(txn, parent, len(blocks) * BLOCK_SIZE, updated)

    def _remove_dirent(self, txn: Txn, parent: int, name: str):
        for logical, raw in self._dir_blocks(parent, txn.inodes[parent]):
            if find_entry(raw, name) is not None:
                self._write(txn, parent, logical * BLOCK_SIZE, remove_entry(raw, name))
                return
        raise NotFoundError(f"{name!r} vanished from directory {parent}")

    # Data path

    def _read(self, inum: int, inode: Inode, size: int, offset: int, pending: dict) -> bytes:
        if offset >= inode.i_size or size <= 0:
            return b""
        end = min(inode.i_size, offset + size)
        height = height_for(inode.i_size)
        out = bytearray()
        pos = offset
        while pos < end:
            logical, within = divmod(pos, BLOCK_SIZE)
            chunk = min(BLOCK_SIZE - within, end - pos)
            block = pending.get((inum, logical)) or self.tree.lookup(inode.i_block, height, logical)
            if block:
                out += self.device.read(self.regions.block_addr(block) + within, chunk)
            else:
                out += bytes(chunk)
            pos += chunk
        return bytes(out)

    def _write(self, txn: Txn, inum: int, offset: int, data: bytes):
        inode = txn.inodes[inum]
        if offset > inode.i_size:
            # files are never sparse: the gap is written as zeros
            data = bytes(offset - inode.i_size) + data
            offset = inode.i_size
        end = offset + len(data)
        if (end - 1) // BLOCK_SIZE >= MAX_LOGICAL_BLOCKS:
            raise NoSpaceError(f"Write to {end} bytes exceeds the largest file of {MAX_LOGICAL_BLOCKS} blocks")

        height = height_for(max(inode.i_size, end))
        root = self._grow(txn, inode.i_block, height_for(inode.i_size), height)
        size, blocks = inode.i_size, inode.i_blocks

        pos = offset
        while pos < end:
            logical, within = divmod(pos, BLOCK_SIZE)
            chunk = min(BLOCK_SIZE - within, end - pos)
            piece = data[pos - offset:pos - offset + chunk]
            old = self.tree.lookup(root, height, logical)

            if old and old in txn.owned_blocks:
                addr = self.regions.block_addr(old)
                self.device.store(addr + within, piece)
                self._flush_block(addr, tree=False)
                self.device.sfence()
            else:
                new = self.txns.alloc_block(txn, defer_log=True)
                if chunk == BLOCK_SIZE:
                    content = piece
                else:
                    base = self.device.read(self.regions.block_addr(old), BLOCK_SIZE) if old else bytes(BLOCK_SIZE)
                    content = base[:within] + piece + base[within + chunk:]
                addr = self.regions.block_addr(new)
                self.device.store(addr, content)
                self._flush_block(addr, tree=False)
                self.device.sfence()
                # allocation is logged only after the block is durable
                self.txns.log_deferred_sets(txn)
                if old:
                    self.txns.free_block(txn, old)
                else:
                    blocks += 1
                root = self._set_child(txn, root, height, logical, new) if height else new
                self.txns.stage_inode_update(txn, InodeField.BLOCK_ADDR, new, inum=inum, logical=logical)
                txn.pending_blocks[(inum, logical)] = new

            size = max(size, pos + chunk)
            self.txns.stage_inode_update(txn, InodeField.I_SIZE, size, inum=inum)
            self.txns.stage_inode_update(txn, InodeField.I_BLOCKS, blocks, inum=inum)
            self.flush_stats.data_blocks_written += 1
            pos += chunk

        if height:
            self.txns.stage_inode_update(txn, InodeField.BLOCK_ADDR, root, inum=inum, logical=ROOT_SLOT)

    def _grow(self, txn: Txn, root: int, height: int, new_height: int) -> int:
        """Add levels on top of the tree until it has new_height levels."""
        while height < new_height:
            height += 1
            if root == 0:
                continue
            children = np.zeros(POINTERS_PER_BLOCK, dtype=NODE_DTYPE)
            children[0] = root
            root = self._write_node(txn, children)
        return root

    def _set_child(self, txn: Txn, node: int, height: int, logical: int, leaf: int) -> int:
        """
        Point logical at leaf in the tree under node and return the node now
        holding that subtree: node itself if the transaction owns it, a fresh
        copy otherwise.
        """
        slot = slot_path(logical, height)[0]
        if height == 1:
            child = leaf
        else:
            current = self.tree.read_node(node)[slot] if node else 0
            child = self._set_child(txn, int(current), height - 1,
                                    logical % POINTERS_PER_BLOCK ** (height - 1), leaf)

        if node and node in txn.owned_blocks:
            addr = self.regions.block_addr(node) + slot * NODE_DTYPE.itemsize
            self.device.store(addr, int(child).to_bytes(NODE_DTYPE.itemsize, "little"))
            if self.flush_data:
                self.flush_stats.tree_clwbs += self.device.flush_range(addr, NODE_DTYPE.itemsize)
            self.device.sfence()
            return node

        children = self.tree.read_node(node) if node else np.zeros(POINTERS_PER_BLOCK, dtype=NODE_DTYPE)
        children[slot] = child
        copy = self._write_node(txn, children)
        if node:
            self.txns.free_block(txn, node)
        return copy

    def _write_node(self, txn: Txn, children: np.ndarray) -> int:
        block = self.txns.alloc_block(txn, defer_log=True)
        addr = self.regions.block_addr(block)
        self.device.store(addr, children.astype(NODE_DTYPE).tobytes())
        self._flush_block(addr, tree=True)
        self.device.sfence()
        self.txns.log_deferred_sets(txn)
        return block

    def _flush_block(self, addr: int, tree: bool):
        if not self.flush_data:
            return
        count = self.device.flush_range(addr, BLOCK_SIZE)
        if tree:
            self.flush_stats.tree_clwbs += count
        else:
            self.flush_stats.data_clwbs += count
