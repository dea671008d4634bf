"""
DurableFS command-line tools: mkfs, fsck, shell, bench and crashtest over
raw image files.
"""
import argparse
import os
import shlex
import sys
from pathlib import Path
from typing import Dict, List, Optional, TextIO

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).resolve().parent))

from version import get_version_string
from logger import logger, set_verbose
from config_manager import ConfigManager, get_default_config
from pmsim.device import PmDevice
from dfs.filesystem import DurableFS, split_path
from dfs.layout import mkfs
from dfs.recovery import fsck, recover
from db.results_database import ResultsDatabase
from harness.bench import compare_modes, run_bench
from harness.crash_matrix import run_crash_matrix, run_recovery_idempotence
from harness.workload import WorkloadScript
from utils import error_handler
from utils.constants import (
    AVAILABLE_BENCH_MODES, AVAILABLE_ORDERING_MODELS, AVAILABLE_WORKLOADS,
    INODE_TYPE_DIRECTORY, INODE_TYPE_FILE, MODE_DURABLE, SEED_ENV, SETTINGS_FILE,
)
from utils.errors import DurableFSError, ScriptError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130

TYPE_NAMES = {INODE_TYPE_FILE: "file", INODE_TYPE_DIRECTORY: "dir"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="DurableFS image tools")
    parser.add_argument("--config", default=SETTINGS_FILE, help="Path to the JSON settings file")
    parser.add_argument("--verbose", action="store_true", help="Debug output on the console")
    parser.add_argument("--version", action="version", version=get_version_string())
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("mkfs", help="Format a new image file")
    p.add_argument("image")
    p.add_argument("--size-kb", type=int, help="Image size in KB (multiple of 4)")
    p.add_argument("--log-blocks", type=int, help="Blocks reserved for the metadata log")
    p.add_argument("--ib", type=int, help="Blocks of inode bitmap")

    p = commands.add_parser("fsck", help="Recover and check an image file")
    p.add_argument("image")

    p = commands.add_parser("shell", help="Run file commands against an image")
    p.add_argument("image")
    p.add_argument("--batch", help="Read commands from a file instead of stdin")

    p = commands.add_parser("bench", help="Run the desk-scale workloads")
    p.add_argument("image", help="Receives the final image of the durable run")
    p.add_argument("--workload", choices=AVAILABLE_WORKLOADS + ["all"], default="all")
    p.add_argument("--mode", choices=AVAILABLE_BENCH_MODES + ["both"], default="both")
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int)

    p = commands.add_parser("crashtest", help="Inject crashes at device-op boundaries of a script")
    p.add_argument("image", help="Receives the final image of the uninterrupted run")
    p.add_argument("--script", default="smoke", help="Bundled script name or script file")
    p.add_argument("--points", default=None, help="'all' or a number of sampled points")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=AVAILABLE_ORDERING_MODELS)
    p.add_argument("--size-kb", type=int, default=None, help="Size of the scratch images")
    p.add_argument("--idempotence", type=int, default=0, metavar="N",
                   help="Also crash inside recovery at N sampled points")
    return parser


def parse_points(value: str):
    if value == "all":
        return value
    try:
        points = int(value)
    except ValueError:
        raise ScriptError(f"--points must be 'all' or a number, got {value!r}")
    if points < 1:
        raise ScriptError(f"--points must be positive, got {points}")
    return points


class Shell:
    """Line commands over a mounted image: ls, cat, put, get, rm, mkdir, rmdir, stat, quit."""
    def __init__(self, fs: DurableFS, out: TextIO):
        self.fs = fs
        self.out = out
        self.errors = 0

    def run(self, lines) -> int:
        for line in lines:
            try:
                words = shlex.split(line, comments=True)
            except ValueError as e:
                self._fail(str(e))
                continue
            if not words:
                continue
            if words[0] in ("quit", "exit"):
                break
            self.execute(words)
        return self.errors

    def execute(self, words: List[str]):
        command, args = words[0], words[1:]
        handler = getattr(self, f"do_{command}", None)
        if handler is None:
            self._fail(f"unknown command {command!r}")
            return
        try:
            handler(*args)
        except TypeError:
            self._fail(f"wrong number of arguments for {command}")
        except (DurableFSError, OSError) as e:
            self._fail(f"{command}: {e}")

    def do_ls(self, path: str = "/"):
        for dirent in sorted(self.fs.readdir(path), key=lambda d: d.name):
            suffix = "/" if dirent.file_type == INODE_TYPE_DIRECTORY else ""
            self.out.write(f"{dirent.name}{suffix}\n")

    def do_cat(self, path: str):
        self.out.write(self.fs.read_file(path).decode("utf-8", errors="replace"))

    def do_put(self, local: str, remote: str):
        with open(local, "rb") as f:
            data = f.read()
        try:
            self.fs.resolve(remote)
        except DurableFSError:
            pass
        else:
            # files never shrink, so a replaced file is removed first
            self.fs.unlink(*split_path(remote))
        self.fs.write_file(remote, data)
        self.out.write(f"{len(data)} bytes -> {remote}\n")

    def do_get(self, remote: str, local: str):
        data = self.fs.read_file(remote)
        with open(local, "wb") as f:
            f.write(data)
        self.out.write(f"{len(data)} bytes -> {local}\n")

    def do_rm(self, path: str):
        self.fs.unlink(*split_path(path))

    def do_mkdir(self, path: str):
        self.fs.mkdir(*split_path(path))

    def do_rmdir(self, path: str):
        self.fs.rmdir(*split_path(path))

    def do_stat(self, path: str):
        st = self.fs.stat(path)
        self.out.write(f"inode={st.inum} type={TYPE_NAMES.get(st.type, st.type)} size={st.size} blocks={st.blocks}\n")

    def _fail(self, message: str):
        self.errors += 1
        self.out.write(f"error: {message}\n")
        logger.warning(f"shell: {message}")


class Application:
    """Parses the command line, loads the configuration and runs one subcommand."""
    def __init__(self, out: Optional[TextIO] = None):
        self.out = out or sys.stdout
        self.config: Dict = {}
        self.config_manager = None
        self.results_db = None
        self.session_id = -1

    def run(self, argv: Optional[List[str]] = None) -> int:
        parser = build_parser()
        args = parser.parse_args(argv)
        set_verbose(args.verbose)
        self._init_configuration(args.config)

        handler = getattr(self, f"cmd_{args.command}")
        try:
            return handler(args)
        except DurableFSError as e:
            error_handler.report_error(f"{args.command} failed", str(e))
            return EXIT_USAGE if isinstance(e, ScriptError) else EXIT_FAILURE
        except OSError as e:
            error_handler.report_error(f"{args.command} failed", str(e))
            return EXIT_FAILURE
        except KeyboardInterrupt:
            logger.info("Interrupted")
            return EXIT_INTERRUPTED
        finally:
            self._cleanup_resources()

    def _init_configuration(self, config_path: str):
        self.config_manager = ConfigManager(config_path)
        self.config_manager.set_default_config(get_default_config())
        self.config = self.config_manager.load_config()

    def _seed(self, flag: Optional[int], section: str) -> int:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ScriptError(f"{SEED_ENV} must be an integer, got {env!r}")
        if flag is not None:
            return flag
        return int(self.config[section]["seed"])

    def _start_session(self, command: str, image: str, seed: Optional[int] = None):
        results = self.config["results"]
        if not results.get("enabled", True):
            return
        try:
            self.results_db = ResultsDatabase(results["db_path"])
        except Exception as e:
            logger.error(f"Results database unavailable, results will not be stored: {e}")
            self.results_db = None
            return
        self.session_id = self.results_db.start_new_session(command, image, seed)

    def _cleanup_resources(self):
        if self.results_db:
            if self.session_id != -1:
                self.results_db.end_session(self.session_id)
            self.results_db.close()
            self.results_db = None

    # Subcommands

    def cmd_mkfs(self, args) -> int:
        size_kb = args.size_kb or self.config["device"]["size_kb"]
        log_blocks = args.log_blocks or self.config["log"]["log_blocks"]
        ib = args.ib or self.config["device"]["inode_map_blocks"]
        device = PmDevice(size_kb * 1024)
        regions = mkfs(device, log_blocks, ib)
        device.save(args.image)
        self.out.write(f"{args.image}: {size_kb} KB, {regions.data_blocks} data blocks, "
                       f"{regions.inode_count} inodes, log of {regions.log_capacity} entries\n")
        return EXIT_OK

    def cmd_fsck(self, args) -> int:
        device = PmDevice.load(args.image)
        report = recover(device)
        self.out.write(f"recovery: {report.summary()}\n")
        violations = fsck(device)
        for violation in violations:
            self.out.write(f"{violation}\n")
        self.out.write(f"{args.image}: {'consistent' if not violations else f'{len(violations)} violations'}\n")
        return EXIT_OK if not violations else EXIT_FAILURE

    def cmd_shell(self, args) -> int:
        device = PmDevice.load(args.image)
        fs = DurableFS.mount(device, trim_threshold=self.config["log"]["trim_threshold"])
        shell = Shell(fs, self.out)
        if args.batch:
            with open(args.batch, "r") as f:
                errors = shell.run(f.read().splitlines())
        else:
            errors = shell.run(sys.stdin)
        device.save(args.image)
        return EXIT_FAILURE if errors and args.batch else EXIT_OK

    def cmd_bench(self, args) -> int:
        bench = self.config["bench"]
        scale = args.scale or bench["scale"]
        seed = self._seed(args.seed, "bench")
        log_blocks = self.config["log"]["log_blocks"]
        workloads = AVAILABLE_WORKLOADS if args.workload == "all" else [args.workload]
        self._start_session("bench", args.image, seed)

        status = EXIT_OK
        for workload in workloads:
            if args.mode == "both":
                durable, noflush, degradation = compare_modes(
                    workload, scale, seed, bench["ios_per_txn"], log_blocks, args.image)
                results = [durable, noflush]
            else:
                results = [run_bench(workload, args.mode, scale, seed, bench["ios_per_txn"], log_blocks,
                                     args.image if args.mode == MODE_DURABLE else None)]
                degradation = None

            for result in results:
                self.out.write(result.render() + "\n")
                if self.results_db:
                    self.results_db.record_bench_result(self.session_id, result.as_dict())
            if degradation is not None:
                self.out.write(degradation.render() + "\n")
                noflush_clean = results[1].data_clwbs == 0
                if not (degradation.acceptable and noflush_clean):
                    status = EXIT_FAILURE
        return status

    def cmd_crashtest(self, args) -> int:
        crash = self.config["crashtest"]
        script = WorkloadScript.load(args.script)
        points = parse_points(args.points or str(crash["points"]))
        seed = self._seed(args.seed, "crashtest")
        model = args.model or self.config["device"]["ordering_model"]
        device_args = {"size_kb": args.size_kb} if args.size_kb else {}
        self._start_session("crashtest", args.image, seed)

        report = run_crash_matrix(script, points, model, seed, rss_warning_mb=crash["rss_warning_mb"],
                                  final_image=args.image, **device_args)
        self.out.write(report.render() + "\n")
        failures = len(report.failures)
        if self.results_db:
            fsck_violations = sum(r.detail.count("fsck (") for r in report.results)
            self.results_db.record_crash_result(self.session_id, script.name, report.model, seed,
                                                len(report.results), report.total_points, failures,
                                                report.torn_entries, fsck_violations)

        if args.idempotence:
            idempotence = run_recovery_idempotence(script, args.idempotence, model, seed, **device_args)
            for result in idempotence.failures:
                self.out.write(result.render() + "\n")
            self.out.write(f"# recovery idempotence: {len(idempotence.results)} points, "
                           f"{len(idempotence.failures)} failures\n")
            failures += len(idempotence.failures)
        return EXIT_OK if not failures else EXIT_FAILURE


def main():
    """Application entry point."""
    error_handler.install()
    try:
        sys.exit(Application().run())
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        sys.exit(EXIT_FAILURE)


if __name__ == "__main__":
    main()
