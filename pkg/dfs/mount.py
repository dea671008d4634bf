"""Mount: recovery first, then RAM copies of the allocation maps."""
from dataclasses import dataclass

from logger import logger
from pmsim.device import PmDevice
from dfs.bitmap import Bitmap
from dfs.layout import RegionMap, load_regions
from dfs.recovery import RecoveryReport, recover
from dfs.txn import RamMetadata


@dataclass
class MountedFs:
    device: PmDevice
    regions: RegionMap
    ram: RamMetadata
    recovery: RecoveryReport


def mount(device: PmDevice) -> MountedFs:
    report = recover(device)
    regions = load_regions(device)
    ram = RamMetadata(
        fbb=Bitmap.from_device(device, regions.fb_map_off, regions.fb_map_len, regions.total_blocks),
        fib=Bitmap.from_device(device, regions.fi_map_off, regions.fi_map_len, regions.inode_count),
    )
    logger.info(
        f"Mounted {regions.capacity_bytes // 1024} KB image: {ram.fbb.count_set()} blocks and "
        f"{ram.fib.count_set()} inodes in use"
    )
    return MountedFs(device, regions, ram, report)
