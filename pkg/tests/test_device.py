import pytest

from pmsim.device import LineState, OrderingModel, PmDevice
from utils.errors import AlignmentError, BoundsError, DeviceError


def make(model=OrderingModel.PREFIX_ORDERED, size=4096, seed=0):
    return PmDevice(size, model, seed)


def test_capacity_must_be_page_multiple():
    with pytest.raises(DeviceError):
        PmDevice(1000)


def test_store_visible_but_not_durable():
    dev = make()
    dev.store(0, b"\x01")
    assert dev.read(0, 1) == b"\x01"
    assert dev.persistent(0, 1) == b"\x00"
    assert dev.line_state(0) is LineState.DIRTY


def test_flushed_and_fenced_store_is_durable():
    dev = make()
    dev.store(0, b"\x01")
    dev.clwb(0)
    assert dev.line_state(0) is LineState.FLUSHING
    dev.sfence()
    assert dev.persistent(0, 1) == b"\x01"
    assert dev.line_state(0) is LineState.CLEAN
    assert dev.is_quiescent()


def test_unflushed_store_may_or_may_not_survive():
    outcomes = set()
    for seed in range(100):
        dev = make()
        dev.store(0, b"\x01")
        outcomes.add(dev.crash(seed).read(0, 1))
    assert outcomes == {b"\x00", b"\x01"}


def test_clwb_without_fence_survives_only_for_some_seeds():
    outcomes = set()
    for seed in range(100):
        dev = make()
        dev.store(64, b"\x05")
        dev.clwb(64)
        outcomes.add(dev.crash(seed).read(64, 1))
    assert outcomes == {b"\x00", b"\x05"}


def test_store_after_clwb_redirties_line():
    dev = make()
    dev.store(0, b"\x01")
    dev.clwb(0)
    dev.store(1, b"\x02")
    dev.sfence()
    assert dev.line_state(0) is LineState.DIRTY
    assert dev.persistent(0, 2) == b"\x00\x00"


def test_nt_store_durable_after_fence():
    dev = make()
    dev.nt_store(8, 0x1122334455667788)
    assert dev.persistent(8, 8) == bytes(8)
    dev.sfence()
    assert dev.persistent(8, 8) == (0x1122334455667788).to_bytes(8, "little")


def test_nt_store_alignment_and_width():
    dev = make()
    with pytest.raises(AlignmentError):
        dev.nt_store(4, 1)
    with pytest.raises(AlignmentError):
        dev.nt_store(8, b"\x01\x02")
    with pytest.raises(BoundsError):
        dev.nt_store(4096, 1)


def test_store_out_of_bounds():
    dev = make()
    with pytest.raises(BoundsError):
        dev.store(4090, bytes(8))


def _nt_outcomes(model):
    dev = make(model)
    dev.nt_store(0, 1)
    dev.nt_store(8, 2)
    return {
        (int.from_bytes(img.read(0, 8), "little"), int.from_bytes(img.read(8, 8), "little"))
        for img in dev.crash_images()
    }


def test_prefix_model_keeps_program_order_prefix():
    assert _nt_outcomes(OrderingModel.PREFIX_ORDERED) == {(0, 0), (1, 0), (1, 2)}


def test_relaxed_model_keeps_any_subset():
    assert _nt_outcomes(OrderingModel.RELAXED) == {(0, 0), (1, 0), (0, 2), (1, 2)}


def test_relaxed_subsets_are_reachable_by_seed():
    seen = set()
    for seed in range(200):
        dev = make(OrderingModel.RELAXED)
        dev.nt_store(0, 1)
        dev.nt_store(8, 2)
        img = dev.crash(seed)
        seen.add((img.read(0, 1)[0], img.read(8, 1)[0]))
    assert seen == {(0, 0), (1, 0), (0, 2), (1, 2)}


def test_crash_is_deterministic():
    def run():
        dev = make(size=8192)
        for addr in range(0, 8192, 64):
            dev.store(addr, b"\xAA")
        dev.nt_store(0, 5)
        return dev.crash(42).read(0, 8192)
    assert run() == run()


def test_crash_resets_line_state():
    dev = make()
    dev.store(0, b"\x01")
    img = dev.crash(1)
    assert img.is_quiescent()
    assert img.read(0, 4096) == img.persistent(0, 4096)


def test_flush_range_counts_lines():
    dev = make()
    assert dev.flush_range(0, 4096) == 64
    assert dev.flush_range(60, 8) == 2
    assert dev.flush_range(0, 0) == 0
    assert dev.stats.clwbs == 66


def test_stats_and_hook():
    dev = make()
    seen = []
    dev.on_op = lambda d, index, name: seen.append((index, name))
    dev.store(0, b"abcd")
    dev.nt_store(8, 1)
    dev.clwb(0)
    dev.sfence()
    assert seen == [(1, "store"), (2, "nt_store"), (3, "clwb"), (4, "sfence")]
    assert dev.stats.as_dict() == {"stores": 1, "nt_stores": 1, "clwbs": 1, "sfences": 1, "bytes_written": 12}
    dev.reset_stats()
    assert dev.stats.stores == 0
    assert "device_ops=4" in dev.stats_report()


def test_crash_images_limit():
    dev = make(size=64 * 1024)
    for addr in range(0, 64 * 1024, 64):
        dev.store(addr, b"\x01")
    with pytest.raises(DeviceError):
        list(dev.crash_images(limit=16))


def test_save_and_load_durable_image(tmp_path):
    dev = make()
    dev.store(0, b"\x09")
    dev.persist_all()
    dev.store(64, b"\x07")
    path = tmp_path / "img"
    dev.save(str(path))
    loaded = PmDevice.load(str(path))
    assert loaded.read(0, 1) == b"\x09"
    assert loaded.read(64, 1) == b"\x00"
