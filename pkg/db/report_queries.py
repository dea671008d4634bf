"""pandas views over the results database, shared by the dashboard and the CLI."""
import sqlite3

import pandas as pd

from utils.constants import MODE_DURABLE, MODE_NOFLUSH


def load_sessions(conn: sqlite3.Connection) -> pd.DataFrame:
    return pd.read_sql_query("SELECT * FROM sessions ORDER BY start_time DESC", conn)


def load_bench_results(conn: sqlite3.Connection, session_id: int = None) -> pd.DataFrame:
    query = "SELECT * FROM bench_results"
    params = ()
    if session_id is not None:
        query += " WHERE session_id = ?"
        params = (session_id,)
    return pd.read_sql_query(query + " ORDER BY timestamp", conn, params=params)


def load_crash_results(conn: sqlite3.Connection, session_id: int = None) -> pd.DataFrame:
    query = "SELECT * FROM crash_results"
    params = ()
    if session_id is not None:
        query += " WHERE session_id = ?"
        params = (session_id,)
    return pd.read_sql_query(query + " ORDER BY timestamp", conn, params=params)


def degradation_table(bench: pd.DataFrame) -> pd.DataFrame:
    """
    Durable against noflush per workload, using the latest run of each mode:
    wall time, device operations and clwb counts, in percent over noflush.
    """
    columns = ["workload", "wall_pct", "device_ops_pct", "clwb_pct", "noflush_data_clwbs"]
    if bench.empty:
        return pd.DataFrame(columns=columns)
    frame = bench.copy()
    frame["device_ops"] = frame["stores"] + frame["nt_stores"] + frame["clwbs"] + frame["sfences"]
    latest = frame.sort_values("timestamp").groupby(["workload", "mode"]).last()

    rows = []
    for workload in sorted(frame["workload"].unique()):
        if (workload, MODE_DURABLE) not in latest.index or (workload, MODE_NOFLUSH) not in latest.index:
            continue
        durable = latest.loc[(workload, MODE_DURABLE)]
        noflush = latest.loc[(workload, MODE_NOFLUSH)]
        rows.append({
            "workload": workload,
            "wall_pct": _pct(durable["wall_s"], noflush["wall_s"]),
            "device_ops_pct": _pct(durable["device_ops"], noflush["device_ops"]),
            "clwb_pct": _pct(durable["clwbs"], noflush["clwbs"]),
            "noflush_data_clwbs": int(noflush["data_clwbs"]),
        })
    return pd.DataFrame(rows, columns=columns)


def _pct(durable: float, noflush: float) -> float:
    return 100.0 * (durable - noflush) / noflush if noflush else 0.0
