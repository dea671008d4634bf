import os
import tempfile

# Test runs log outside the working tree
os.environ.setdefault("DURABLEFS_LOG_DIR", os.path.join(tempfile.gettempdir(), "durablefs-test-logs"))

import pytest

from pmsim.device import OrderingModel, PmDevice
from dfs.filesystem import DurableFS
from dfs.layout import mkfs

SMALL_IMAGE_KB = 1280
SMALL_LOG_BLOCKS = 8
TREE_IMAGE_KB = 12 * 1024


@pytest.fixture
def device():
    """A freshly formatted small image."""
    dev = PmDevice(SMALL_IMAGE_KB * 1024, OrderingModel.PREFIX_ORDERED, rng_seed=7)
    mkfs(dev, SMALL_LOG_BLOCKS)
    return dev


@pytest.fixture
def fs(device):
    return DurableFS.mount(device)


@pytest.fixture
def big_fs():
    """Room for a file whose block tree needs two levels."""
    dev = PmDevice(TREE_IMAGE_KB * 1024, rng_seed=3)
    return DurableFS.format(dev, 16)


@pytest.fixture
def image_path(tmp_path):
    return str(tmp_path / "disk.img")
