# Constants for the device model, on-image format, and tool defaults

# Logging
DEFAULT_LOG_DIR = "logs"
LOG_DIR_ENV = "DURABLEFS_LOG_DIR"
SEED_ENV = "DURABLEFS_SEED"

# Settings
SETTINGS_FILE = "configs/settings.json"
DEFAULT_RESULTS_DB = "data/durablefs_results.db"

# Persistent memory device
CACHE_LINE_SIZE = 64
NT_STORE_WIDTH = 8
PAGE_SIZE = 4096

ORDERING_PREFIX = "ordered"
ORDERING_RELAXED = "relaxed"
AVAILABLE_ORDERING_MODELS = [ORDERING_PREFIX, ORDERING_RELAXED]

# On-image format (all multi-byte fields little-endian)
BLOCK_SIZE_KB = 4
BLOCK_SIZE = BLOCK_SIZE_KB * 1024
LINES_PER_BLOCK = BLOCK_SIZE // CACHE_LINE_SIZE
SUPERBLOCK_SIZE = 7
FB_MAP_OFFSET = SUPERBLOCK_SIZE
MAX_MAP_BLOCKS = 255
INODE_SIZE = 32
ROOT_INODE = 0

INODE_TYPE_FREE = 0
INODE_TYPE_FILE = 1
INODE_TYPE_DIRECTORY = 2
INODE_TYPE_SYMLINK = 3
INODE_TYPES = {INODE_TYPE_FREE, INODE_TYPE_FILE, INODE_TYPE_DIRECTORY, INODE_TYPE_SYMLINK}

# Metadata redo log
LOG_HEADER_SIZE = 32
LOG_ENTRY_SIZE = 16
NO_PREV = 0xFFFF_FFFF
TXN_NO_MASK = 0xFF_FFFF
DATA1_MAX = 0xFFFF
DATA2_MAX = 0xFFFF
DATA3_MAX = 0xFFFF_FFFF
ROOT_SLOT = 0xFFFF
MAX_LOGICAL_BLOCKS = ROOT_SLOT

# Block-reference tree
POINTER_SIZE = 4
POINTERS_PER_BLOCK = BLOCK_SIZE // POINTER_SIZE

# Directories
DIRENT_HEADER_SIZE = 8
MAX_NAME_LEN = 255

# Defaults
DEFAULT_IMAGE_SIZE_KB = 4096
DEFAULT_LOG_BLOCKS = 64
DEFAULT_INODE_MAP_BLOCKS = 1
DEFAULT_TRIM_THRESHOLD = 0.75
DEFAULT_ORDERING_MODEL = ORDERING_PREFIX
DEFAULT_SEED = 0
DEFAULT_BENCH_SCALE = 1 / 64
DEFAULT_IOS_PER_TXN = 16
DEFAULT_RSS_WARNING_MB = 2048

# Bench workloads: file size, I/O size, threads, reads per write, file count
WORKLOAD_FIO = "fio"
WORKLOAD_FILESERVER = "fileserver"
WORKLOAD_WEBSERVER = "webserver"
WORKLOAD_TABLE = {
    WORKLOAD_FIO: {
        "file_size": 256 * 1024 * 1024,
        "io_size": 4096,
        "threads": 10,
        "read_ratio": 1,
        "write_ratio": 1,
        "files": 10,
        "scale_dimension": "file_size",
    },
    WORKLOAD_FILESERVER: {
        "file_size": 128 * 1024,
        "io_size": 4096,
        "threads": 10,
        "read_ratio": 1,
        "write_ratio": 2,
        "files": 1000,
        "scale_dimension": "files",
    },
    WORKLOAD_WEBSERVER: {
        "file_size": 64 * 1024,
        "io_size": 4096,
        "threads": 10,
        "read_ratio": 10,
        "write_ratio": 1,
        "files": 1000,
        "scale_dimension": "files",
    },
}
AVAILABLE_WORKLOADS = list(WORKLOAD_TABLE)

MODE_DURABLE = "durable"
MODE_NOFLUSH = "noflush"
AVAILABLE_BENCH_MODES = [MODE_DURABLE, MODE_NOFLUSH]

# Bundled crash-test scripts
SCRIPT_SMOKE = "smoke"
SCRIPT_MIXED30 = "mixed30"
SCRIPT_AB_HAZARD = "ab_hazard"
SCRIPT_TORN_PROBE = "torn_probe"
