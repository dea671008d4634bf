import sqlite3
import threading
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from logger import logger
from utils.constants import DEFAULT_RESULTS_DB


class ResultsDatabase:
    """
    SQLite store for bench and crash-test results. Every CLI invocation that
    records results opens a session; the dashboard reads the same tables.
    """
    def __init__(self, db_path: str = DEFAULT_RESULTS_DB):
        self.db_path = db_path
        self.local = threading.local()
        self.local.conn = None
        self.local.cursor = None
        self.connect()
        self.create_tables()

    def ensure_db_directory(self):
        db_dir = os.path.dirname(self.db_path)
        if db_dir and not os.path.exists(db_dir):
            try:
                os.makedirs(db_dir)
                logger.info(f"Created directory: {db_dir}")
            except OSError as e:
                logger.error(f"Error creating directory {db_dir}: {e}")
                raise

    def connect(self):
        """Thread-local connection, created on first use in each thread."""
        try:
            self.ensure_db_directory()
            if not hasattr(self.local, 'conn') or self.local.conn is None:
                self.local.conn = sqlite3.connect(self.db_path)
                self.local.conn.row_factory = sqlite3.Row
                self.local.cursor = self.local.conn.cursor()
        except sqlite3.Error as e:
            logger.error(f"Database connection error: {e}")
            raise

    def ensure_connection(self):
        if not hasattr(self.local, 'conn') or self.local.conn is None:
            self.connect()

    def create_tables(self):
        self.ensure_connection()
        try:
            self.local.cursor.execute('''
            CREATE TABLE IF NOT EXISTS sessions (
                session_id INTEGER PRIMARY KEY AUTOINCREMENT,
                start_time TIMESTAMP NOT NULL,
                end_time TIMESTAMP,
                command TEXT NOT NULL,
                image_path TEXT,
                seed INTEGER,
                notes TEXT
            )
            ''')

            self.local.cursor.execute('''
            CREATE TABLE IF NOT EXISTS bench_results (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                session_id INTEGER,
                timestamp TIMESTAMP NOT NULL,
                workload TEXT NOT NULL,
                mode TEXT NOT NULL,
                scale REAL,
                ops INTEGER,
                ops_per_s REAL,
                wall_s REAL,
                bytes_written INTEGER,
                stores INTEGER,
                nt_stores INTEGER,
                clwbs INTEGER,
                data_clwbs INTEGER,
                sfences INTEGER,
                data_blocks_written INTEGER,
                peak_rss_mb REAL,
                FOREIGN KEY (session_id) REFERENCES sessions(session_id)
            )
            ''')

            self.local.cursor.execute('''
            CREATE TABLE IF NOT EXISTS crash_results (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                session_id INTEGER,
                timestamp TIMESTAMP NOT NULL,
                script TEXT NOT NULL,
                model TEXT NOT NULL,
                seed INTEGER,
                points INTEGER,
                total_points INTEGER,
                failures INTEGER,
                torn_entries INTEGER,
                fsck_violations INTEGER,
                FOREIGN KEY (session_id) REFERENCES sessions(session_id)
            )
            ''')

            self.local.cursor.execute('''
            CREATE INDEX IF NOT EXISTS idx_bench_results_workload
            ON bench_results(workload, mode)
            ''')

            self.local.conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error creating tables: {e}")
            self.local.conn.rollback()
            raise

    def get_current_time(self):
        return datetime.now(timezone.utc)

    def start_new_session(self, command: str, image_path: str = None, seed: int = None,
                          notes: str = None) -> int:
        """Start a session and return its ID, or -1 on failure."""
        self.ensure_connection()
        try:
            self.local.cursor.execute(
                "INSERT INTO sessions (start_time, command, image_path, seed, notes) VALUES (?, ?, ?, ?, ?)",
                (self.get_current_time(), command, image_path, seed, notes)
            )
            self.local.conn.commit()
            return self.local.cursor.lastrowid
        except sqlite3.Error as e:
            logger.error(f"Error starting session: {e}")
            self.local.conn.rollback()
            return -1

    def end_session(self, session_id: int) -> bool:
        self.ensure_connection()
        try:
            self.local.cursor.execute(
                "UPDATE sessions SET end_time = ? WHERE session_id = ?",
                (self.get_current_time(), session_id)
            )
            self.local.conn.commit()
            return True
        except sqlite3.Error as e:
            logger.error(f"Error ending session: {e}")
            self.local.conn.rollback()
            return False

    def record_bench_result(self, session_id: int, result: Dict[str, Any]) -> bool:
        """Record one BenchResult.as_dict()."""
        self.ensure_connection()
        try:
            self.local.cursor.execute(
                """
                INSERT INTO bench_results
                (session_id, timestamp, workload, mode, scale, ops, ops_per_s, wall_s, bytes_written,
                 stores, nt_stores, clwbs, data_clwbs, sfences, data_blocks_written, peak_rss_mb)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    session_id,
                    self.get_current_time(),
                    result["workload"],
                    result["mode"],
                    result.get("scale"),
                    result.get("ops", 0),
                    result.get("ops_per_s", 0.0),
                    result.get("wall_s", 0.0),
                    result.get("bytes_written", 0),
                    result.get("stores", 0),
                    result.get("nt_stores", 0),
                    result.get("clwbs", 0),
                    result.get("data_clwbs", 0),
                    result.get("sfences", 0),
                    result.get("data_blocks_written", 0),
                    result.get("peak_rss_mb", 0.0),
                )
            )
            self.local.conn.commit()
            return True
        except sqlite3.Error as e:
            logger.error(f"Error recording bench result: {e}")
            try:
                self.local.conn.rollback()
            except sqlite3.Error:
                self.connect()
            return False

    def record_crash_result(self, session_id: int, script: str, model: str, seed: int, points: int,
                            total_points: int, failures: int, torn_entries: int,
                            fsck_violations: int = 0) -> bool:
        self.ensure_connection()
        try:
            self.local.cursor.execute(
                """
                INSERT INTO crash_results
                (session_id, timestamp, script, model, seed, points, total_points, failures,
                 torn_entries, fsck_violations)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (session_id, self.get_current_time(), script, model, seed, points, total_points,
                 failures, torn_entries, fsck_violations)
            )
            self.local.conn.commit()
            return True
        except sqlite3.Error as e:
            logger.error(f"Error recording crash result: {e}")
            try:
                self.local.conn.rollback()
            except sqlite3.Error:
                self.connect()
            return False

    def get_available_sessions(self, command: Optional[str] = None) -> List[Dict[str, Any]]:
        self.ensure_connection()
        try:
            if command:
                self.local.cursor.execute(
                    "SELECT * FROM sessions WHERE command = ? ORDER BY start_time DESC", (command,)
                )
            else:
                self.local.cursor.execute("SELECT * FROM sessions ORDER BY start_time DESC")
            return [dict(row) for row in self.local.cursor.fetchall()]
        except sqlite3.Error as e:
            logger.error(f"Error fetching sessions: {e}")
            return []

    def get_session_stats(self, session_id: int) -> Dict[str, Any]:
        self.ensure_connection()
        stats = {}
        try:
            self.local.cursor.execute(
                "SELECT start_time, end_time, command FROM sessions WHERE session_id = ?", (session_id,)
            )
            session_data = self.local.cursor.fetchone()
            if session_data:
                stats.update(dict(session_data))

            self.local.cursor.execute(
                "SELECT COUNT(*) AS bench_runs FROM bench_results WHERE session_id = ?", (session_id,)
            )
            stats["bench_runs"] = self.local.cursor.fetchone()["bench_runs"]

            self.local.cursor.execute(
                """
                SELECT COUNT(*) AS crash_runs, COALESCE(SUM(failures), 0) AS failures
                FROM crash_results WHERE session_id = ?
                """,
                (session_id,)
            )
            row = self.local.cursor.fetchone()
            stats["crash_runs"] = row["crash_runs"]
            stats["failures"] = row["failures"]
            return stats
        except sqlite3.Error as e:
            logger.error(f"Error getting session stats: {e}")
            return stats

    def close(self):
        if hasattr(self.local, 'conn') and self.local.conn:
            self.local.conn.close()
            self.local.conn = None
            self.local.cursor = None

    def __del__(self):
        self.close()
