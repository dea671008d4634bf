import streamlit as st
import pandas as pd
import plotly.express as px
import sqlite3
import os

from db import report_queries
from utils.constants import DEFAULT_RESULTS_DB

# Enable pandas Copy-on-Write mode to prevent SettingWithCopyWarning
pd.options.mode.copy_on_write = True

st.set_page_config(
    page_title="DurableFS Results",
    page_icon="💾",
    layout="wide",
    initial_sidebar_state="expanded"
)


@st.cache_resource
def get_connection(db_path):
    return sqlite3.connect(db_path, check_same_thread=False)


@st.cache_data
def load_sessions(_conn):
    return report_queries.load_sessions(_conn)


@st.cache_data
def load_bench_results(_conn, session_id=None):
    return report_queries.load_bench_results(_conn, session_id)


@st.cache_data
def load_crash_results(_conn, session_id=None):
    return report_queries.load_crash_results(_conn, session_id)


def show_bench(bench_df: pd.DataFrame):
    st.header("Benchmarks")
    if bench_df.empty:
        st.info("No bench results in this selection.")
        return

    workloads = bench_df["workload"].unique()
    selected = st.multiselect("Workloads", options=workloads, default=workloads)
    frame = bench_df.loc[bench_df["workload"].isin(selected)]

    col1, col2 = st.columns(2)
    with col1:
        fig = px.bar(frame, x="workload", y="ops_per_s", color="mode", barmode="group",
                     title="Throughput (ops/s)")
        st.plotly_chart(fig, use_container_width=True)
    with col2:
        fig = px.bar(frame, x="workload", y="clwbs", color="mode", barmode="group",
                     title="Cache-line writebacks")
        st.plotly_chart(fig, use_container_width=True)

    st.subheader("Durable against noflush")
    degradation = report_queries.degradation_table(frame)
    if degradation.empty:
        st.info("Run bench with --mode both to compare the two modes.")
    else:
        st.dataframe(degradation, use_container_width=True)
        melted = degradation.melt(id_vars="workload", value_vars=["wall_pct", "device_ops_pct", "clwb_pct"],
                                  var_name="measure", value_name="percent")
        fig = px.bar(melted, x="workload", y="percent", color="measure", barmode="group",
                     title="Degradation over noflush (%)")
        st.plotly_chart(fig, use_container_width=True)

    st.subheader("Raw results")
    st.dataframe(frame, use_container_width=True)


def show_crash(crash_df: pd.DataFrame):
    st.header("Crash tests")
    if crash_df.empty:
        st.info("No crash-test results in this selection.")
        return

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Points checked", int(crash_df["points"].sum()))
    with col2:
        st.metric("Failures", int(crash_df["failures"].sum()))
    with col3:
        st.metric("Torn entries", int(crash_df["torn_entries"].sum()))

    fig = px.bar(crash_df, x="script", y=["points", "failures"], color_discrete_sequence=["#4c78a8", "#e45756"],
                 barmode="group", facet_col="model", title="Points and failures per script")
    st.plotly_chart(fig, use_container_width=True)

    if crash_df["torn_entries"].any():
        fig = px.scatter(crash_df, x="points", y="torn_entries", color="model", hover_data=["script", "seed"],
                         title="Torn log entries")
        st.plotly_chart(fig, use_container_width=True)

    st.dataframe(crash_df, use_container_width=True)


def main():
    st.title("DurableFS Results 💾")

    st.sidebar.header("Database Connection")
    db_path = st.sidebar.text_input(
        "Database Path",
        value=DEFAULT_RESULTS_DB,
        help="Path to the SQLite results database"
    )

    if not os.path.exists(db_path):
        st.sidebar.error(f"Database file not found: {db_path}")
        return

    try:
        conn = get_connection(db_path)
        sessions_df = load_sessions(conn)

        if sessions_df.empty:
            st.warning("No sessions found in the database.")
            return

        st.sidebar.header("Session Selection")
        session_options = [("All sessions", None)]
        for _, row in sessions_df.iterrows():
            image = row["image_path"] if pd.notna(row["image_path"]) else "-"
            session_options.append((f"Session {row['session_id']} - {row['command']} - {image}", row["session_id"]))

        selected_session_id = st.sidebar.selectbox(
            "Select Session:",
            options=[sid for _, sid in session_options],
            format_func=lambda x: next((label for label, sid in session_options if sid == x), x)
        )

        bench_df = load_bench_results(conn, selected_session_id)
        crash_df = load_crash_results(conn, selected_session_id)
        for df in (bench_df, crash_df):
            if not df.empty:
                df["timestamp"] = pd.to_datetime(df["timestamp"])

        bench_tab, crash_tab = st.tabs(["Benchmarks", "Crash Tests"])
        with bench_tab:
            show_bench(bench_df)
        with crash_tab:
            show_crash(crash_df)

    except Exception as e:
        st.error(f"Error reading results database: {e}")
        import traceback
        st.exception(traceback.format_exc())


if __name__ == "__main__":
    main()
