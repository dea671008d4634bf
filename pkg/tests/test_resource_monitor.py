import time

from utils.resource_monitor import ResourceMonitor


def test_check_records_peak():
    monitor = ResourceMonitor()
    metrics = monitor.check()
    assert metrics["rss_mb"] > 0
    assert monitor.peak_rss_mb >= metrics["rss_mb"]
    report = monitor.get_report()
    assert report["check_count"] == 1
    assert report["alert_count"] == 0


def test_alert_callback_fires_over_threshold():
    alerts = []
    monitor = ResourceMonitor(rss_warning_mb=0)
    monitor.set_alert_callback(lambda title, details: alerts.append((title, details)))
    monitor.check()
    assert monitor.alert_count == 1
    assert alerts[0][0] == "Resource Alert"
    assert "High resident memory" in alerts[0][1]["message"]


def test_failing_callback_does_not_escape():
    monitor = ResourceMonitor(rss_warning_mb=0)
    monitor.set_alert_callback(lambda title, details: 1 / 0)
    monitor.check()
    assert monitor.alert_count == 1


def test_background_monitoring_starts_once():
    monitor = ResourceMonitor(check_interval=0.01)
    assert monitor.start_monitoring()
    assert not monitor.start_monitoring()
    time.sleep(0.1)
    assert monitor.stop_monitoring()
    assert not monitor.stop_monitoring()
    assert monitor.check_count >= 1
