import io
import sqlite3

import pytest

import app
from app import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, Application
from utils.constants import DEFAULT_RESULTS_DB, SEED_ENV


@pytest.fixture
def cli(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV, raising=False)

    def run(*argv):
        out = io.StringIO()
        code = Application(out).run(["--config", str(tmp_path / "settings.json"), *argv])
        return code, out.getvalue()
    return run


def mkfs(cli, image="disk.img", size_kb=1280):
    return cli("mkfs", image, "--size-kb", str(size_kb), "--log-blocks", "8")


def test_mkfs_then_fsck(cli):
    code, out = mkfs(cli)
    assert code == EXIT_OK
    assert "disk.img: 1280 KB, 53 data blocks" in out
    code, out = cli("fsck", "disk.img")
    assert code == EXIT_OK
    assert "disk.img: consistent" in out


def test_mkfs_too_small(cli):
    code, _ = mkfs(cli, size_kb=1024)
    assert code == EXIT_FAILURE


def test_fsck_missing_image(cli):
    code, _ = cli("fsck", "nope.img")
    assert code == EXIT_FAILURE


def test_shell_batch(cli, tmp_path):
    mkfs(cli)
    (tmp_path / "local.txt").write_bytes(b"hello image")
    (tmp_path / "cmds").write_text(
        "mkdir /d\nput local.txt /d/a\nput local.txt /d/a  # replace\nls /d\n"
        "stat /d/a\nget /d/a back.txt\ncat /d/a\n"
    )
    code, out = cli("shell", "disk.img", "--batch", "cmds")
    assert code == EXIT_OK, out
    assert "a\n" in out
    assert "type=file size=11 blocks=1" in out
    assert (tmp_path / "back.txt").read_bytes() == b"hello image"

    # the image was saved and survives a fresh mount
    (tmp_path / "cmds2").write_text("cat /d/a\nrm /d/a\nrmdir /d\nls\n")
    code, out = cli("shell", "disk.img", "--batch", "cmds2")
    assert code == EXIT_OK
    assert out.startswith("hello image")
    assert cli("fsck", "disk.img")[0] == EXIT_OK


def test_shell_batch_reports_errors(cli, tmp_path):
    mkfs(cli)
    (tmp_path / "cmds").write_text("cat /missing\nfrobnicate\nls\n")
    code, out = cli("shell", "disk.img", "--batch", "cmds")
    assert code == EXIT_FAILURE
    assert out.count("error:") == 2


def test_crashtest_smoke(cli, tmp_path):
    code, out = cli("crashtest", "final.img", "--points", "20", "--seed", "1")
    assert code == EXIT_OK, out
    assert "points=20/" in out
    assert "failures=0" in out
    assert cli("fsck", "final.img")[0] == EXIT_OK

    conn = sqlite3.connect(str(tmp_path / DEFAULT_RESULTS_DB))
    rows = conn.execute("SELECT script, points, failures FROM crash_results").fetchall()
    conn.close()
    assert rows == [("smoke", 20, 0)]


def test_crashtest_idempotence(cli):
    code, out = cli("crashtest", "final.img", "--points", "5", "--idempotence", "5")
    assert code == EXIT_OK, out
    assert "# recovery idempotence: 5 points, 0 failures" in out


def test_crashtest_usage_errors(cli):
    assert cli("crashtest", "x.img", "--script", "no-such-script")[0] == EXIT_USAGE
    assert cli("crashtest", "x.img", "--points", "many")[0] == EXIT_USAGE
    assert cli("crashtest", "x.img", "--points", "0")[0] == EXIT_USAGE


def test_seed_environment_overrides_flag(cli, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "5")
    code, out = cli("crashtest", "final.img", "--points", "3", "--seed", "1")
    assert code == EXIT_OK
    assert "seed=5 " in out.splitlines()[-1]


def test_bad_seed_environment(cli, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "five")
    assert cli("crashtest", "final.img", "--points", "3")[0] == EXIT_USAGE


def test_bench_both_modes(cli, tmp_path):
    code, out = cli("bench", "bench.img", "--workload", "fileserver", "--mode", "both", "--scale", "0.01")
    assert code == EXIT_OK, out
    assert "degradation" in out
    assert "contents_match=True" in out
    assert cli("fsck", "bench.img")[0] == EXIT_OK

    conn = sqlite3.connect(str(tmp_path / DEFAULT_RESULTS_DB))
    modes = sorted(row[0] for row in conn.execute("SELECT mode FROM bench_results"))
    conn.close()
    assert modes == ["durable", "noflush"]


def test_bench_fails_without_degradation(cli, monkeypatch):
    real_compare = app.compare_modes

    def flat_compare(*args, **kwargs):
        durable, noflush, degradation = real_compare(*args, **kwargs)
        degradation.device_ops_pct = 0.0
        return durable, noflush, degradation

    monkeypatch.setattr(app, "compare_modes", flat_compare)
    code, _ = cli("bench", "bench.img", "--workload", "webserver", "--mode", "both", "--scale", "0.01")
    assert code == EXIT_FAILURE
