"""
Reference model: open-to-close transaction semantics over plain dicts, with
no storage machinery. Both the model and ScriptRunner raise the same error
types for the same mistakes, so traces can be compared outcome by outcome.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Set

from dfs.filesystem import DurableFS, FileHandle, split_path
from harness.workload import ScriptOp, pattern_bytes
from utils.constants import INODE_TYPE_DIRECTORY, INODE_TYPE_FILE
from utils.errors import (
    BusyError, ExistsError, HandleClosedError, NotEmptyError, NotFoundError,
    ReadOnlyHandleError, ScriptError, TypeMismatchError,
)

Snapshot = Dict[str, object]


@dataclass
class _RefHandle:
    path: str
    mode: str
    staging: Optional[bytearray] = None


class ReferenceModel:
    def __init__(self):
        self.files: Dict[str, bytes] = {}
        self.dirs: Set[str] = {"/"}
        self.handles: Dict[str, _RefHandle] = {}

    def snapshot(self) -> Snapshot:
        """Committed state: path -> bytes for files, path -> INODE_TYPE_DIRECTORY for directories."""
        state: Snapshot = {path: content for path, content in self.files.items()}
        state.update({path: INODE_TYPE_DIRECTORY for path in self.dirs if path != "/"})
        return state

    def apply(self, op: ScriptOp) -> Optional[bytes]:
        handler = getattr(self, f"_op_{op.op}", None)
        if handler is None:
            raise ScriptError(f"Unsupported operation {op.op}")
        return handler(*op.args)

    def _parent(self, path: str) -> str:
        dirpath, _ = split_path(path)
        if dirpath in self.files:
            raise TypeMismatchError(f"{dirpath} is not a directory")
        if dirpath not in self.dirs:
            raise NotFoundError(f"No such directory: {dirpath}")
        return dirpath

    def _exists(self, path: str) -> bool:
        return path in self.files or path in self.dirs

    def _writer_of(self, path: str) -> Optional[_RefHandle]:
        for handle in self.handles.values():
            if handle.path == path and handle.staging is not None:
                return handle
        return None

    def _op_create(self, path: str):
        self._parent(path)
        if self._exists(path):
            raise ExistsError(path)
        self.files[path] = b""

    def _op_mkdir(self, path: str):
        self._parent(path)
        if self._exists(path):
            raise ExistsError(path)
        self.dirs.add(path)

    def _op_unlink(self, path: str):
        self._parent(path)
        if path in self.dirs:
            raise TypeMismatchError(f"{path} is a directory")
        if path not in self.files:
            raise NotFoundError(path)
        if self._writer_of(path):
            raise BusyError(f"{path} is open for writing")
        del self.files[path]

    def _op_rmdir(self, path: str):
        self._parent(path)
        if path in self.files:
            raise TypeMismatchError(f"{path} is not a directory")
        if path not in self.dirs:
            raise NotFoundError(path)
        prefix = path + "/"
        if any(p.startswith(prefix) for p in list(self.files) + list(self.dirs)):
            raise NotEmptyError(path)
        self.dirs.discard(path)

    def _op_open(self, mode: str, path: str, name: str):
        if path not in self.files:
            if path in self.dirs:
                if mode != "r":
                    raise TypeMismatchError(f"{path} is not a regular file")
            elif mode == "c":
                self._op_create(path)
            else:
                self._parent(path)
                raise NotFoundError(path)
        staging = None
        if mode != "r":
            if self._writer_of(path):
                raise BusyError(f"{path} already has a writer")
            staging = bytearray(self.files[path])
        self.handles[name] = _RefHandle(path, mode, staging)

    def _handle(self, name: str) -> _RefHandle:
        if name not in self.handles:
            raise HandleClosedError(name)
        return self.handles[name]

    def _op_write(self, name: str, offset: int, length: int, seed: int):
        handle = self._handle(name)
        if handle.staging is None:
            raise ReadOnlyHandleError(handle.path)
        if length == 0:
            return
        data = pattern_bytes(seed, length)
        staging = handle.staging
        if offset > len(staging):
            staging.extend(bytes(offset - len(staging)))
        staging[offset:offset + length] = data

    def _op_read(self, name: str, offset: int, length: int) -> bytes:
        handle = self._handle(name)
        if handle.staging is not None:
            content = bytes(handle.staging)
        else:
            if handle.path not in self.files:
                raise NotFoundError(handle.path)
            content = self.files[handle.path]
        return content[offset:offset + length]

    def _op_close(self, name: str):
        handle = self.handles.pop(name, None)
        if handle is None:
            raise HandleClosedError(name)
        if handle.staging is not None:
            self.files[handle.path] = bytes(handle.staging)


class ScriptRunner:
    """Executes script operations against a mounted DurableFS."""
    def __init__(self, fs: DurableFS):
        self.fs = fs
        self.handles: Dict[str, FileHandle] = {}

    def apply(self, op: ScriptOp) -> Optional[bytes]:
        args = op.args
        if op.op in ("create", "mkdir", "rmdir", "unlink"):
            dirpath, name = split_path(args[0])
            if op.op == "create":
                self.fs.create(dirpath, name, INODE_TYPE_FILE)
            elif op.op == "mkdir":
                self.fs.mkdir(dirpath, name)
            elif op.op == "rmdir":
                self.fs.rmdir(dirpath, name)
            else:
                self.fs.unlink(dirpath, name)
            return None
        if op.op == "open":
            mode, path, name = args
            self.handles[name] = self.fs.open(path, mode)
            return None
        if op.op == "write":
            name, offset, length, seed = args
            self.fs.write(self._handle(name), pattern_bytes(seed, length), offset=offset)
            return None
        if op.op == "read":
            name, offset, length = args
            return self.fs.read(self._handle(name), length, offset)
        handle = self.handles.pop(args[0], None)
        if handle is None:
            raise HandleClosedError(args[0])
        self.fs.close(handle)
        return None

    def _handle(self, name: str) -> FileHandle:
        if name not in self.handles:
            raise HandleClosedError(name)
        return self.handles[name]


def fs_snapshot(fs: DurableFS) -> Snapshot:
    """Committed state of a mounted file system in ReferenceModel.snapshot form."""
    state: Snapshot = {}
    for path, inode_type in fs.walk("/"):
        state[path] = INODE_TYPE_DIRECTORY if inode_type == INODE_TYPE_DIRECTORY else fs.read_file(path)
    return state
