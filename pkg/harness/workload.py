"""
Workload scripts: a line-oriented language shared by the crash matrix, the
equivalence check and the CLI.

    create /path            mkdir /dir              rmdir /dir
    unlink /path            open r|w|c /path [h]    close h
    write h <offset> <len> seed<N>                  read h <offset> <len>

Text after '#' is a comment. Written bytes are generated from the seed, so a
script replays to the same contents every time.
"""
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from utils.constants import (
    BLOCK_SIZE, SCRIPT_AB_HAZARD, SCRIPT_MIXED30, SCRIPT_SMOKE, SCRIPT_TORN_PROBE,
)
from utils.errors import ScriptError

DEFAULT_HANDLE = "h"
OP_ARITY = {
    "create": (1, 1),
    "mkdir": (1, 1),
    "rmdir": (1, 1),
    "unlink": (1, 1),
    "open": (2, 3),
    "close": (1, 1),
    "write": (4, 4),
    "read": (3, 3),
}


@dataclass(frozen=True)
class ScriptOp:
    op: str
    args: Tuple
    text: str
    lineno: int = 0

    @property
    def handle(self) -> Optional[str]:
        if self.op == "open":
            return self.args[2]
        if self.op in ("close", "write", "read"):
            return self.args[0]
        return None

    def __str__(self):
        return self.text


@dataclass
class WorkloadScript:
    name: str
    ops: List[ScriptOp] = field(default_factory=list)

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def text(self) -> str:
        return "\n".join(op.text for op in self.ops) + "\n"

    @classmethod
    def parse(cls, text: str, name: str = "script") -> "WorkloadScript":
        script = cls(name)
        open_handles: Set[str] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            op = _parse_line(line, lineno)
            handle = op.handle
            if op.op == "open":
                if handle in open_handles:
                    raise ScriptError(f"line {lineno}: handle {handle!r} is already open")
                open_handles.add(handle)
            elif handle is not None:
                if handle not in open_handles:
                    raise ScriptError(f"line {lineno}: handle {handle!r} is not open")
                if op.op == "close":
                    open_handles.discard(handle)
            script.ops.append(op)
        return script

    @classmethod
    def load(cls, name_or_path: str) -> "WorkloadScript":
        """A bundled script by name, or a script file."""
        if name_or_path in BUNDLED_SCRIPTS:
            return cls.parse(BUNDLED_SCRIPTS[name_or_path], name_or_path)
        if not os.path.isfile(name_or_path):
            raise ScriptError(f"No bundled script or file named {name_or_path!r}")
        with open(name_or_path, "r") as f:
            return cls.parse(f.read(), os.path.basename(name_or_path))


def _parse_line(line: str, lineno: int) -> ScriptOp:
    words = line.split()
    op, rest = words[0], words[1:]
    if op not in OP_ARITY:
        raise ScriptError(f"line {lineno}: unknown operation {op!r}")
    low, high = OP_ARITY[op]
    if not low <= len(rest) <= high:
        raise ScriptError(f"line {lineno}: {op} takes {low}..{high} arguments, got {len(rest)}")

    try:
        if op in ("create", "mkdir", "rmdir", "unlink"):
            args = (_path(rest[0], lineno),)
        elif op == "open":
            if rest[0] not in ("r", "w", "c"):
                raise ScriptError(f"line {lineno}: open mode must be r, w or c")
            args = (rest[0], _path(rest[1], lineno), rest[2] if len(rest) == 3 else DEFAULT_HANDLE)
        elif op == "close":
            args = (rest[0],)
        elif op == "write":
            if not rest[3].startswith("seed"):
                raise ScriptError(f"line {lineno}: write pattern must look like seed<N>")
            args = (rest[0], _non_negative(rest[1]), _non_negative(rest[2]), int(rest[3][4:]))
        else:
            args = (rest[0], _non_negative(rest[1]), _non_negative(rest[2]))
    except ValueError as e:
        raise ScriptError(f"line {lineno}: {e}")
    return ScriptOp(op, args, line, lineno)


def _path(value: str, lineno: int) -> str:
    if not value.startswith("/") or value == "/":
        raise ScriptError(f"line {lineno}: {value!r} is not an absolute path below the root")
    return value


def _non_negative(value: str) -> int:
    number = int(value)
    if number < 0:
        raise ValueError(f"{value} is negative")
    return number


def pattern_bytes(seed: int, length: int) -> bytes:
    """Reproducible contents of a write."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=length, dtype=np.uint8).tobytes()


def random_script(n_ops: int, seed: int, max_files: int = 12, max_file_size: int = 6 * BLOCK_SIZE,
                  max_open: int = 3, name: Optional[str] = None) -> WorkloadScript:
    """
    A valid random script: namespace operations, reads and writes over a
    handful of paths, with at most max_open files open at a time.
    """
    rng = np.random.default_rng(seed)
    files: Dict[str, int] = {}
    dirs: Set[str] = {"/"}
    open_writers: Dict[str, str] = {}
    open_readers: Dict[str, str] = {}
    handle_ids = iter(range(1, 1 << 30))
    lines: List[str] = []

    def pick(items):
        items = sorted(items)
        return items[int(rng.integers(len(items)))]

    def busy(path):
        return path in open_writers.values() or path in open_readers.values()

    while len(lines) < n_ops:
        roll = rng.random()
        handles = {**open_writers, **open_readers}
        if handles and (roll < 0.35 or len(handles) >= max_open):
            handle = pick(handles)
            path = handles[handle]
            action = rng.random()
            if handle in open_writers and action < 0.6:
                offset = int(rng.integers(0, min(files[path], max_file_size - 1) + 1))
                length = int(rng.integers(1, max(2, min(2 * BLOCK_SIZE, max_file_size - offset)) + 1))
                length = min(length, max_file_size - offset)
                lines.append(f"write {handle} {offset} {length} seed{int(rng.integers(1 << 20))}")
                files[path] = max(files[path], offset + length)
            elif action < 0.75:
                offset = int(rng.integers(0, files[path] + 1))
                lines.append(f"read {handle} {offset} {int(rng.integers(1, BLOCK_SIZE + 1))}")
            else:
                lines.append(f"close {handle}")
                open_writers.pop(handle, None)
                open_readers.pop(handle, None)
        elif roll < 0.55 and len(files) < max_files:
            parent = pick(dirs)
            path = parent.rstrip("/") + f"/f{int(rng.integers(1000))}"
            if path in files or path in dirs:
                continue
            lines.append(f"create {path}")
            files[path] = 0
        elif roll < 0.62 and len(dirs) < 4:
            path = pick(dirs).rstrip("/") + f"/d{int(rng.integers(100))}"
            if path in files or path in dirs:
                continue
            lines.append(f"mkdir {path}")
            dirs.add(path)
        elif roll < 0.85 and files:
            path = pick(files)
            if busy(path):
                continue
            handle = f"h{next(handle_ids)}"
            if rng.random() < 0.7:
                lines.append(f"open w {path} {handle}")
                open_writers[handle] = path
            else:
                lines.append(f"open r {path} {handle}")
                open_readers[handle] = path
        elif roll < 0.93 and files:
            path = pick(files)
            if busy(path):
                continue
            lines.append(f"unlink {path}")
            del files[path]
        else:
            empty = [d for d in dirs if d != "/" and not any(p.startswith(d + "/") for p in list(files) + list(dirs))]
            if not empty:
                continue
            path = pick(empty)
            lines.append(f"rmdir {path}")
            dirs.discard(path)

    for handle in sorted({**open_writers, **open_readers}):
        lines.append(f"close {handle}")
    return WorkloadScript.parse("\n".join(lines), name or f"random-{seed}")


BUNDLED_SCRIPTS = {
    SCRIPT_SMOKE: """
create /a
open w /a
write h 0 4096 seed1
close h
open r /a
read h 0 4096
close h
""",
    SCRIPT_MIXED30: """
mkdir /docs
create /docs/a
create /b
open w /docs/a wa
write wa 0 4096 seed1
write wa 4096 100 seed2
open w /b wb
write wb 0 6000 seed3
close wa
read wb 0 6000
close wb
open w /docs/a wa
write wa 50 200 seed4
write wa 9000 10 seed5
close wa
create /c
open c /d wd
write wd 0 4096 seed6
close wd
unlink /b
open w /c wc
write wc 0 1 seed7
close wc
mkdir /tmp
create /tmp/x
unlink /tmp/x
rmdir /tmp
open r /docs/a ra
read ra 0 9010
close ra
""",
    SCRIPT_AB_HAZARD: """
# A frees a block, B allocates and commits before A does
create /x
open w /x a
write a 0 4096 seed1
close a
create /y
open w /x a
write a 0 4096 seed2
open w /y b
write b 0 8192 seed3
close b
close a
""",
    SCRIPT_TORN_PROBE: """
create /t
open w /t
write h 0 100 seed1
write h 100 100 seed2
write h 200 100 seed3
close h
""",
}
