# Set page configuration - must be the first Streamlit command
import streamlit as st

st.set_page_config(
    page_title="impplan - Semantic Path Planning",
    page_icon="🧭",
    layout="wide",
    initial_sidebar_state="expanded",
)

# Then import other libraries
import math
import os

import numpy as np
import pandas as pd

import format_utils
import plots
from costmap import build_maps
from envworld import GENERATORS, RobotPose
from evaluation import RolloutConfig, rollout
from planner import load_checkpoint
from semantics import default_table, table_frame


@st.cache_resource
def load_environment(kind, seed):
    """
    Generate and cache an environment with its maps

    Args:
        kind (str): Generator name
        seed (int): Generator seed

    Returns:
        tuple: (Environment2D, MapSet)
    """
    env = GENERATORS[kind](seed, table=default_table())
    return env, build_maps(env)


@st.cache_resource
def load_model(path, mtime):
    # mtime keys the cache so a retrained checkpoint is reloaded
    return load_checkpoint(path)


@st.cache_data(ttl=60)
def load_runs(kind=None):
    import db_utils

    db_utils.initialize_database()
    return db_utils.list_runs(kind)


@st.cache_data(ttl=60)
def load_history(run_id):
    import db_utils

    return db_utils.get_history(run_id)


st.sidebar.title("impplan")
st.sidebar.caption("Semantic-aware imperative path planning")

st.sidebar.markdown("### 🗺️ Environment")
kind = st.sidebar.selectbox("Generator", sorted(GENERATORS), index=sorted(GENERATORS).index("urban"))
seed = st.sidebar.number_input("Seed", min_value=0, value=7, step=1)

try:
    env, maps = load_environment(kind, int(seed))
except ValueError as e:
    st.error(f"Error generating environment: {e}")
    st.stop()

st.sidebar.markdown("### 🤖 Planner")
model_path = st.sidebar.text_input("Checkpoint", value="model.ipnn")

main_tabs = st.tabs(["🗺️ Maps", "🧭 Rollout", "📋 Cost table", "📈 Recorded runs"])

with main_tabs[0]:
    rows, cols = env.shape
    metrics_row = st.columns(3)
    metrics_row[0].metric("Size", f"{env.width:g} x {env.height:g} m")
    metrics_row[1].metric("Cells", f"{rows} x {cols}")
    metrics_row[2].metric("Obstacle share", format_utils.format_percent(float(env.obstacle_mask().mean())))

    left, right = st.columns(2)
    with left:
        st.plotly_chart(plots.label_figure(env), use_container_width=True)
        st.plotly_chart(plots.costmap_figure(maps.height, "Terrain height", colorscale="Cividis"), use_container_width=True)
    with right:
        st.plotly_chart(plots.costmap_figure(maps.semantic, "Semantic costmap"), use_container_width=True)
        st.plotly_chart(plots.costmap_figure(maps.geometric, "Geometric costmap"), use_container_width=True)

with main_tabs[1]:
    if not os.path.exists(model_path):
        st.info(f"No checkpoint at {model_path}. Train one with `impplan train` first.")
    else:
        try:
            params = load_model(model_path, os.path.getmtime(model_path))
        except (OSError, ValueError) as e:
            st.error(f"Error loading checkpoint: {e}")
            st.stop()

        inputs = st.columns(4)
        sx = inputs[0].number_input("Start x", 0.0, float(env.width), 2.0)
        sy = inputs[1].number_input("Start y", 0.0, float(env.height), 15.0)
        gx = inputs[2].number_input("Goal x", 0.0, float(env.width), 26.0)
        gy = inputs[3].number_input("Goal y", 0.0, float(env.height), 15.0)
        options = st.columns(3)
        variant = options[0].radio("Variant", ["semantic", "geometric"], horizontal=True)
        noise_depth = options[1].slider("Range noise std (m)", 0.0, 0.5, 0.0, 0.05)
        noise_labels = options[2].slider("Label flip probability", 0.0, 0.5, 0.0, 0.05)

        if st.button("Run rollout"):
            cfg = RolloutConfig(
                variant=variant,
                depth_noise_std=noise_depth,
                label_flip_prob=noise_labels,
                n_rays=params.config.n_rays,
            )
            start = RobotPose(sx, sy, math.atan2(gy - sy, gx - sx))
            try:
                result = rollout(params, env, maps, start, (gx, gy), cfg, np.random.default_rng(int(seed)))
            except ValueError as e:
                st.error(f"Rollout failed: {e}")
            else:
                summary = st.columns(3)
                summary[0].metric("Outcome", result.outcome.value)
                summary[1].metric("Replans", result.replans)
                summary[2].metric("Distance to goal", f"{format_utils.format_number(result.terminal_distance, 2)} m")
                fig = plots.costmap_figure(maps.semantic, "Executed path", paths=[result.path])
                st.plotly_chart(fig, use_container_width=True)

with main_tabs[2]:
    frame = table_frame(env.table)
    st.dataframe(frame, use_container_width=True, hide_index=True)

with main_tabs[3]:
    try:
        runs = load_runs()
    except Exception as e:
        st.error(f"Error reading the results store: {e}")
        runs = pd.DataFrame()

    if runs.empty:
        st.info("No recorded runs. Pass --db to `impplan train` or `impplan eval` to record one.")
    else:
        st.dataframe(runs, use_container_width=True, hide_index=True)
        train_runs = runs[runs.kind == "train"]
        if not train_runs.empty:
            run_id = st.selectbox("Training run", train_runs.id.tolist())
            history = load_history(int(run_id))
            if not history.empty:
                st.line_chart(history.set_index("epoch")[["train_total", "val_total"]])
