import numpy as np

from pmsim.device import PmDevice
from dfs.bitmap import Bitmap, bit_address, pm_write_bit


def test_bit_order_matches_image():
    bm = Bitmap.from_bytes(b"\x05\x80", 16)
    assert list(bm.set_indices()) == [0, 2, 15]
    assert bm.to_bytes(4) == b"\x05\x80\x00\x00"


def test_find_free_wraps_once():
    bm = Bitmap(np.array([False, True, True, True]))
    assert bm.find_free(1) == 0
    bm.set(0)
    assert bm.find_free(0) is None
    bm.clear(2)
    assert bm.find_free(3) == 2


def test_copy_is_independent():
    bm = Bitmap.from_bytes(b"\x00", 8)
    other = bm.copy()
    other.set(3)
    assert not bm.is_set(3)
    assert bm != other
    assert bm.count_set() == 0 and other.count_set() == 1


def test_pm_write_bit_reports_changed_byte():
    dev = PmDevice(4096)
    assert bit_address(100, 10) == (101, 1 << 2)
    assert pm_write_bit(dev, 100, 10, True) == 101
    assert dev.read(101, 1) == b"\x04"
    assert pm_write_bit(dev, 100, 10, True) is None
    assert pm_write_bit(dev, 100, 10, False) == 101
    assert dev.read(101, 1) == b"\x00"
