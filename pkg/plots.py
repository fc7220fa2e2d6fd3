"""
Plot outputs: grayscale PGM images of grid maps, SVG overlays of paths on a
cost field, and plotly figures for the dashboard.
"""

import logging

import numpy as np
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

SVG_SCALE = 20.0
PATH_COLORS = ["#F94144", "#277DA1", "#2C6E49", "#F8961E", "#9B5DE5", "#4D908E"]


def to_gray(values):
    """
    Linearly scale a grid to 0-255, lowest value black

    Args:
        values (array): 2D grid

    Returns:
        numpy.ndarray: uint8 grid of the same shape; all zeros for constant grids
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(grid_map, path):
    """
    Write a map as a binary PGM (P5) image, north up

    Args:
        grid_map (CostMap or HeightMap): Map to draw
        path (str): Output file
    """
    gray = to_gray(grid_map.values)[::-1]
    rows, cols = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray).tobytes())
    logger.info("Wrote %dx%d PGM to %s", cols, rows, path)


def _svg_point(x, y, extent):
    ox, _, _, y_max = extent
    return (x - ox) * SVG_SCALE, (y_max - y) * SVG_SCALE


def _field_rects(grid_map):
    # one rect per run of equal shade along a row
    gray = to_gray(grid_map.values)
    rows, cols = gray.shape
    cell = grid_map.resolution * SVG_SCALE
    height = rows * cell
    for r in range(rows):
        y = height - (r + 1) * cell
        c = 0
        while c < cols:
            shade = int(gray[r, c])
            end = c + 1
            while end < cols and gray[r, end] == shade:
                end += 1
            yield (
                f'<rect x="{c * cell:.2f}" y="{y:.2f}" width="{(end - c) * cell:.2f}" '
                f'height="{cell:.2f}" fill="rgb({shade},{shade},{shade})"/>'
            )
            c = end


def path_svg(cost_map, paths, goals=None):
    """
    SVG document with paths drawn over the cost field

    Args:
        cost_map (CostMap): Background field
        paths (list): (n, 2+) arrays of world points
        goals (list): Optional goal points, drawn as circles

    Returns:
        str: SVG text
    """
    extent = cost_map.extent
    width = (extent[2] - extent[0]) * SVG_SCALE
    height = (extent[3] - extent[1]) * SVG_SCALE
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2f}" height="{height:.2f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        '<g shape-rendering="crispEdges">',
    ]
    parts.extend(_field_rects(cost_map))
    parts.append("</g>")
    for i, path in enumerate(paths):
        path = np.asarray(path, dtype=np.float64)
        if len(path) == 0:
            continue
        color = PATH_COLORS[i % len(PATH_COLORS)]
        coords = " ".join("%.2f,%.2f" % _svg_point(p[0], p[1], extent) for p in path)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        sx, sy = _svg_point(path[0][0], path[0][1], extent)
        parts.append(f'<rect x="{sx - 3:.2f}" y="{sy - 3:.2f}" width="6" height="6" fill="{color}"/>')
    for i, goal in enumerate(goals or []):
        gx, gy = _svg_point(goal[0], goal[1], extent)
        color = PATH_COLORS[i % len(PATH_COLORS)]
        parts.append(f'<circle cx="{gx:.2f}" cy="{gy:.2f}" r="4" fill="none" stroke="{color}" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_path_svg(cost_map, paths, path, goals=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(path_svg(cost_map, paths, goals))
    logger.info("Wrote %d path(s) to %s", len(paths), path)


def costmap_figure(grid_map, title="Costmap", paths=None, colorscale="Viridis"):
    """
    Create a heatmap figure of a grid map with optional path overlays

    Args:
        grid_map (CostMap or HeightMap): Map to draw
        title (str): Figure title
        paths (list): Optional (n, 2+) arrays of world points
        colorscale (str): Plotly colorscale name

    Returns:
        plotly.graph_objects.Figure: Heatmap figure
    """
    rows, cols = grid_map.shape
    ox, oy = grid_map.origin
    res = grid_map.resolution
    fig = go.Figure()
    fig.add_trace(
        go.Heatmap(
            z=grid_map.values,
            x=ox + (np.arange(cols) + 0.5) * res,
            y=oy + (np.arange(rows) + 0.5) * res,
            colorscale=colorscale,
            hovertemplate="x: %{x:.2f} m<br>y: %{y:.2f} m<br>value: %{z:.3f}<extra></extra>",
        )
    )
    for i, path in enumerate(paths or []):
        path = np.asarray(path, dtype=np.float64)
        if len(path) == 0:
            continue
        fig.add_trace(
            go.Scatter(
                x=path[:, 0],
                y=path[:, 1],
                mode="lines",
                name=f"Path {i + 1}",
                line=dict(color=PATH_COLORS[i % len(PATH_COLORS)], width=2),
            )
        )
    fig.update_layout(
        title=title,
        xaxis_title="x (m)",
        yaxis_title="y (m)",
        margin=dict(l=0, r=0, t=40, b=0),
    )
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    return fig


def label_figure(env, title="Semantic labels"):
    """
    Create an RGB image figure of an environment's class labels

    Args:
        env (Environment2D): Environment to draw
        title (str): Figure title

    Returns:
        plotly.graph_objects.Figure: Image of class colors
    """
    rgb = env.table.colors[env.labels].astype(np.uint8)
    fig = go.Figure()
    fig.add_trace(
        go.Image(
            z=rgb,
            x0=env.resolution / 2,
            dx=env.resolution,
            y0=env.resolution / 2,
            dy=env.resolution,
            hoverinfo="x+y",
        )
    )
    fig.update_layout(
        title=title,
        xaxis_title="x (m)",
        yaxis_title="y (m)",
        margin=dict(l=0, r=0, t=40, b=0),
    )
    fig.update_yaxes(autorange=True, scaleanchor="x", scaleratio=1)
    return fig
