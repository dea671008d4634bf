import time
import threading
import platform
from typing import Any, Callable, Dict, Optional

import psutil

from logger import logger
from utils.constants import DEFAULT_RSS_WARNING_MB


class ResourceMonitor:
    """
    Samples the resident memory and CPU time of this process. Long crash
    matrices and benchmarks use it to report peak RSS and to warn when memory
    crosses a threshold.
    """
    def __init__(self, check_interval: float = 5.0, rss_warning_mb: float = DEFAULT_RSS_WARNING_MB):
        self.check_interval = check_interval
        self.process = psutil.Process()
        self.monitoring_thread = None
        self.is_monitoring = False
        self.stop_event = threading.Event()

        self.thresholds = {
            "rss_mb": float(rss_warning_mb),
            "memory_percent": 90.0,     # of system memory
        }
        self.alert_callback: Optional[Callable[[str, Dict[str, Any]], None]] = None

        self.alert_count = 0
        self.check_count = 0
        self.peak_rss_mb = 0.0
        self.last_metrics = None

    def set_alert_callback(self, callback: Callable[[str, Dict[str, Any]], None]):
        self.alert_callback = callback

    def set_threshold(self, metric: str, value: float):
        if metric in self.thresholds:
            self.thresholds[metric] = value

    def start_monitoring(self) -> bool:
        if self.is_monitoring:
            return False
        self.is_monitoring = True
        self.stop_event.clear()
        self.monitoring_thread = threading.Thread(target=self._monitoring_loop, daemon=True)
        self.monitoring_thread.start()
        logger.debug("Resource monitoring started")
        return True

    def stop_monitoring(self) -> bool:
        if not self.is_monitoring:
            return False
        self.is_monitoring = False
        self.stop_event.set()
        if self.monitoring_thread:
            self.monitoring_thread.join(timeout=2.0)
            self.monitoring_thread = None
        logger.debug("Resource monitoring stopped")
        return True

    def _monitoring_loop(self):
        while not self.stop_event.is_set():
            try:
                self.check()
            except psutil.Error as e:
                logger.error(f"Error in resource monitoring: {e}")
            self.stop_event.wait(self.check_interval)

    def check(self) -> Dict[str, Any]:
        """Take one sample and raise alerts for exceeded thresholds."""
        metrics = self.get_process_metrics()
        self.last_metrics = metrics
        self.check_count += 1
        self.peak_rss_mb = max(self.peak_rss_mb, metrics["rss_mb"])
        self._check_thresholds(metrics)
        return metrics

    def _check_thresholds(self, metrics: Dict[str, Any]):
        alerts = []
        if metrics["rss_mb"] > self.thresholds["rss_mb"]:
            alerts.append(f"High resident memory: {metrics['rss_mb']:.0f} MB (threshold: {self.thresholds['rss_mb']:.0f} MB)")
        if metrics["memory_percent"] > self.thresholds["memory_percent"]:
            alerts.append(f"High memory share: {metrics['memory_percent']:.1f}% (threshold: {self.thresholds['memory_percent']}%)")

        if alerts:
            self.alert_count += 1
            alert_message = "\n".join(alerts)
            logger.warning(f"Resource alert: {alert_message}")
            if self.alert_callback:
                try:
                    self.alert_callback("Resource Alert", {"message": alert_message, "metrics": metrics})
                except Exception as e:
                    logger.error(f"Error in alert callback: {e}")

    def get_process_metrics(self) -> Dict[str, Any]:
        with self.process.oneshot():
            memory = self.process.memory_info()
            cpu = self.process.cpu_times()
            return {
                "timestamp": time.time(),
                "rss_mb": memory.rss / (1024 * 1024),
                "memory_percent": self.process.memory_percent(),
                "cpu_user_s": cpu.user,
                "cpu_system_s": cpu.system,
                "num_threads": self.process.num_threads(),
                "system": platform.system(),
                "python_version": platform.python_version(),
            }

    def get_report(self) -> Dict[str, Any]:
        return {
            "is_monitoring": self.is_monitoring,
            "check_count": self.check_count,
            "alert_count": self.alert_count,
            "peak_rss_mb": self.peak_rss_mb,
            "thresholds": self.thresholds.copy(),
            "current_metrics": self.last_metrics,
        }
