import threading

import pytest

from dfs.recovery import fsck
from dfs.tree import height_for
from dfs.wal import EntryType, LogEntry
from harness.workload import pattern_bytes
from utils.constants import (
    BLOCK_SIZE, CACHE_LINE_SIZE, INODE_TYPE_DIRECTORY, INODE_TYPE_FILE, LINES_PER_BLOCK,
    LOG_ENTRY_SIZE, LOG_HEADER_SIZE,
)
from utils.errors import (
    ExistsError, HandleClosedError, InvalidPathError, NoSpaceError, NotEmptyError,
    NotFoundError, ReadOnlyHandleError, TxnStateError, TypeMismatchError,
)


def test_write_read_roundtrip(fs):
    data = pattern_bytes(1, 10000)
    fs.write_file("/f", data)
    assert fs.read_file("/f") == data
    st = fs.stat("/f")
    assert (st.type, st.size, st.blocks) == (INODE_TYPE_FILE, 10000, 3)
    assert fsck(fs.device) == []


def test_partial_overwrite_copies_block(fs):
    fs.write_file("/f", b"a" * 6000)
    fs.write_file("/f", b"XY", offset=4095)
    data = fs.read_file("/f")
    assert data[4094:4098] == b"aXYa"
    assert len(data) == 6000
    assert fs.stat("/f").blocks == 2


def test_write_past_end_zero_fills(fs):
    fs.write_file("/f", b"head")
    fs.write_file("/f", b"tail", offset=5000)
    data = fs.read_file("/f")
    assert data == b"head" + bytes(4996) + b"tail"
    assert fs.stat("/f").blocks == 2


def test_reader_sees_last_committed_state(fs):
    fs.write_file("/f", b"old")
    writer = fs.open("/f", "w")
    fs.write(writer, b"NEW")
    reader = fs.open("/f", "r")
    assert fs.read(reader, 3) == b"old"
    assert fs.read(writer, 3) == b"NEW"
    fs.close(writer)
    assert fs.read(reader, 3) == b"NEW"
    fs.close(reader)


def test_write_buffer_size_argument(fs):
    handle = fs.open("/f", "c")
    assert fs.write(handle, b"abcdef", size=3) == 3
    assert fs.write(handle, b"") == 0
    fs.close(handle)
    assert fs.read_file("/f") == b"abc"


def test_namespace(fs):
    fs.mkdir("/", "d")
    fs.mkdir("/d", "e")
    fs.write_file("/d/e/f", b"x")
    assert list(fs.walk("/")) == [
        ("/d", INODE_TYPE_DIRECTORY), ("/d/e", INODE_TYPE_DIRECTORY), ("/d/e/f", INODE_TYPE_FILE),
    ]
    with pytest.raises(ExistsError):
        fs.create("/d", "e")
    with pytest.raises(NotEmptyError):
        fs.rmdir("/d", "e")
    with pytest.raises(TypeMismatchError):
        fs.unlink("/d", "e")
    with pytest.raises(TypeMismatchError):
        fs.rmdir("/d/e", "f")
    fs.unlink("/d/e", "f")
    fs.rmdir("/d", "e")
    fs.rmdir("/", "d")
    assert fs.readdir("/") == []
    assert fsck(fs.device) == []


def test_missing_and_invalid_paths(fs):
    with pytest.raises(NotFoundError):
        fs.open("/nope", "r")
    with pytest.raises(NotFoundError):
        fs.unlink("/", "nope")
    with pytest.raises(InvalidPathError):
        fs.resolve("relative")
    with pytest.raises(TypeMismatchError):
        fs.open("/", "w")


def test_unlink_frees_blocks_and_inode(fs):
    blocks_before = fs.ram.fbb.count_set()
    inodes_before = fs.ram.fib.count_set()
    fs.write_file("/f", pattern_bytes(2, 3 * BLOCK_SIZE))
    fs.unlink("/", "f")
    # the root directory keeps its one block
    assert fs.ram.fbb.count_set() == blocks_before + 1
    assert fs.ram.fib.count_set() == inodes_before
    assert fsck(fs.device) == []


def test_closed_and_read_only_handles(fs):
    fs.write_file("/f", b"x")
    reader = fs.open("/f", "r")
    with pytest.raises(ReadOnlyHandleError):
        fs.write(reader, b"y")
    fs.close(reader)
    with pytest.raises(HandleClosedError):
        fs.read(reader, 1)
    with pytest.raises(HandleClosedError):
        fs.close(reader)


def test_directory_grows_past_one_block(fs):
    names = [f"file-with-a-long-name-{i:03d}" for i in range(140)]
    for name in names:
        fs.create("/", name)
    assert fs.stat("/").size == 2 * BLOCK_SIZE
    assert sorted(d.name for d in fs.readdir("/")) == names
    assert fsck(fs.device) == []


def test_group_commits_once(fs):
    group = fs.begin_group()
    first = fs.open("/x", "c", group=group)
    second = fs.open("/y", "c", group=group)
    fs.write(first, b"one")
    fs.write(second, b"two")
    with pytest.raises(TxnStateError):
        fs.close(first)
    with pytest.raises(TxnStateError):
        fs.close_many([first])
    commits = fs.flush_stats.commits
    fs.close_many([first, second])
    assert fs.flush_stats.commits == commits + 1
    assert fs.read_file("/x") == b"one"
    assert fs.read_file("/y") == b"two"


def test_failed_write_aborts_transaction(fs):
    fs.write_file("/f", b"keep")
    blocks_before = fs.ram.fbb.count_set()
    handle = fs.open("/f", "w")
    with pytest.raises(NoSpaceError):
        fs.write(handle, bytes(fs.regions.data_blocks * BLOCK_SIZE))
    assert handle.closed
    assert fs.ram.fbb.count_set() == blocks_before
    assert fs.read_file("/f") == b"keep"
    assert fsck(fs.device) == []


def test_data_blocks_flushed_line_by_line(fs):
    fs.create("/", "f")
    fs.flush_stats.reset()
    fs.write_file("/f", pattern_bytes(3, 2 * BLOCK_SIZE))
    assert fs.flush_stats.data_blocks_written == 2
    assert fs.flush_stats.data_clwbs == 2 * 64


def test_two_level_tree(big_fs):
    chunk = 128 * BLOCK_SIZE
    for offset in range(0, 1024 * BLOCK_SIZE, chunk):
        big_fs.write_file("/big", pattern_bytes(offset, chunk), offset=offset)
    assert big_fs.stat("/big").blocks == 1024
    tail = pattern_bytes(99, BLOCK_SIZE)
    big_fs.write_file("/big", tail, offset=1024 * BLOCK_SIZE)

    st = big_fs.stat("/big")
    assert st.size == 1025 * BLOCK_SIZE
    assert st.blocks == 1025
    data = big_fs.read_file("/big")
    assert data[:chunk] == pattern_bytes(0, chunk)
    assert data[-BLOCK_SIZE:] == tail
    assert fsck(big_fs.device) == []


def test_data_lines_are_fenced_before_the_log_names_them(fs):
    fs.write_file("/f", b"")
    device = fs.device
    device.start_trace()
    fs.write_file("/f", pattern_bytes(2, 2 * BLOCK_SIZE))

    inode = fs.txns.load_inode(fs.resolve("/f"))
    leaves = {block for _, block in fs.tree.leaves(inode.i_block, height_for(inode.i_size))}
    assert len(leaves) == 2

    entries_base = fs.regions.log_off + LOG_HEADER_SIZE
    entries_end = entries_base + fs.regions.log_capacity * LOG_ENTRY_SIZE
    last_clwb = {}
    last_fence = -1
    checked = set()
    for index, (name, addr) in enumerate(device.trace):
        if name == "clwb":
            last_clwb[addr // CACHE_LINE_SIZE] = index
        elif name == "sfence":
            last_fence = index
        elif name == "nt_store" and entries_base <= addr < entries_end \
                and (addr - entries_base) % LOG_ENTRY_SIZE == 0:
            entry = LogEntry.decode(device.read(addr, LOG_ENTRY_SIZE))
            if entry.type != EntryType.SET_FBB_BIT or entry.data3 not in leaves:
                continue
            first_line = entry.data3 * BLOCK_SIZE // CACHE_LINE_SIZE
            lines = range(first_line, first_line + LINES_PER_BLOCK)
            assert all(line in last_clwb for line in lines)
            assert max(last_clwb[line] for line in lines) < last_fence
            checked.add(entry.data3)
    assert checked == leaves


def test_threads_commit_distinct_files(fs):
    errors = []

    def worker(n):
        try:
            for round_no in range(5):
                fs.write_file(f"/t{n}", pattern_bytes(100 * n + round_no, 3000))
        except Exception as e:
            errors.append(e)

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert errors == []
    for n in range(6):
        assert fs.read_file(f"/t{n}") == pattern_bytes(100 * n + 4, 3000)
    assert fsck(fs.device) == []
