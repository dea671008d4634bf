from dfs.bitmap import pm_write_bit
from dfs.filesystem import DurableFS
from dfs.layout import Inode, inode_write, load_regions, read_log_header
from dfs.recovery import fsck, recover
from dfs.wal import EntryType
from harness.workload import pattern_bytes
from pmsim.device import PmDevice
from utils.constants import BLOCK_SIZE, INODE_TYPE_FILE


def commit_without_end(fs, path, data):
    """Log a transaction up to its Commit entry and stop, as if power failed."""
    inum = fs.resolve(path)
    with fs.guard:
        txn = fs.txns.begin(inum)
        fs._write(txn, inum, 0, data)
        fs.txns.log.append(txn.txn_no, EntryType.COMMIT, prev=txn.last_entry)


def checks(violations):
    return {v.check for v in violations}


def test_committed_transaction_is_replayed(fs):
    fs.write_file("/f", b"old" * 10)
    new = pattern_bytes(5, 2 * BLOCK_SIZE)
    commit_without_end(fs, "/f", new)

    crashed = fs.device.crash(11)
    recovered = DurableFS.mount(crashed)
    assert recovered.recovery.replayed == 1
    assert recovered.recovery.ends_written == 1
    assert recovered.read_file("/f") == new
    assert fsck(crashed) == []
    _, start, end = read_log_header(crashed, recovered.regions.log_off)
    # recovery leaves an empty log; later commits append behind it
    assert start == end


def test_uncommitted_transaction_is_discarded(fs):
    fs.write_file("/f", b"old")
    handle = fs.open("/f", "w")
    fs.write(handle, pattern_bytes(6, 3 * BLOCK_SIZE))

    crashed = fs.device.crash(12)
    recovered = DurableFS.mount(crashed)
    assert recovered.recovery.replayed == 0
    assert recovered.recovery.discarded == 1
    assert recovered.read_file("/f") == b"old"
    assert fsck(crashed) == []


def test_recovery_is_idempotent(fs):
    fs.write_file("/f", b"old")
    commit_without_end(fs, "/f", b"new")
    crashed = fs.device.crash(13)
    regions = load_regions(crashed)
    span = (regions.fb_map_off, regions.itable_off + regions.itable_len - regions.fb_map_off)

    twin = PmDevice(crashed.capacity_bytes, image=bytes(crashed.durable))
    recover(crashed)
    once = crashed.read(*span)
    recover(twin)
    recover(twin)
    assert twin.read(*span) == once
    assert recover(twin).entries_scanned == 0


def test_clean_image_recovers_to_itself(fs):
    fs.write_file("/f", b"abc")
    fs.device.persist_all()
    image = bytes(fs.device.durable)
    report = recover(fs.device)
    assert report.replayed == 0
    assert report.skipped >= 1
    regions = fs.regions
    assert fs.device.read(0, regions.log_off) == image[:regions.log_off]


def test_remount_after_recovery_keeps_working(fs):
    fs.write_file("/f", b"old")
    commit_without_end(fs, "/f", b"new")
    crashed = fs.device.crash(14)
    again = DurableFS.mount(crashed)
    again.write_file("/g", b"more")
    assert again.read_file("/f") == b"new"
    assert DurableFS.mount(crashed.crash(15)).read_file("/g") == b"more"


def test_fsck_reports_tree_block_free_in_map(fs):
    fs.write_file("/f", b"x")
    block = fs.txns.load_inode(fs.resolve("/f")).i_block
    pm_write_bit(fs.device, fs.regions.fb_map_off, block, False)
    assert "a" in checks(fsck(fs.device))


def test_fsck_reports_inode_map_mismatch(fs):
    pm_write_bit(fs.device, fs.regions.fi_map_off, 5, True)
    assert "c" in checks(fsck(fs.device))


def test_fsck_reports_unreachable_inode(fs):
    regions = fs.regions
    pm_write_bit(fs.device, regions.fi_map_off, 9, True)
    inode_write(fs.device, regions, 9, Inode(type=INODE_TYPE_FILE))
    violations = fsck(fs.device)
    assert any("not reachable" in v.message for v in violations)


def test_fsck_reports_free_metadata_block(fs):
    pm_write_bit(fs.device, fs.regions.fb_map_off, 0, False)
    assert "f" in checks(fsck(fs.device))


def test_fsck_reports_undecodable_inode(fs):
    regions = fs.regions
    fs.device.store(regions.inode_addr(3) + 16, b"\x09")
    assert "g" in checks(fsck(fs.device))


def test_fsck_reports_leaked_block(fs):
    block = fs.ram.fbb.find_free(fs.regions.first_data_block)
    pm_write_bit(fs.device, fs.regions.fb_map_off, block, True)
    violations = fsck(fs.device)
    assert checks(violations) == {"h"}


def test_fsck_reports_bad_superblock():
    device = PmDevice(1280 * 1024)
    assert checks(fsck(device)) == {"g"}
