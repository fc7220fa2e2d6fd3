import math

import numpy as np
import pytest
from scipy import sparse

from conftest import uniform_env
from costmap import HeightMap, build_maps, interpolate_many
from datagen import (
    DEFAULT_ACCESS_THRESHOLD,
    DEFAULT_EDGE_THRESHOLD,
    DatagenError,
    DatasetFormatError,
    ReachabilityGraph,
    build_reachability_graph,
    draw_start_goal,
    export_dataset,
    goal_in_fov,
    halton,
    halton_points,
    import_dataset,
    robot_frame_goal,
    sample_viewpoints,
)
from envworld import RobotPose, env_digest


def complete_graph(points):
    pts = np.asarray(points, dtype=np.float64)
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(dist, 0.0)
    return ReachabilityGraph(pts, sparse.csr_matrix(dist))


def test_halton_radical_inverse():
    assert [halton(i, 2) for i in range(1, 6)] == [0.5, 0.25, 0.75, 0.125, 0.625]
    assert halton(1, 3) == pytest.approx(1 / 3)
    assert halton(4, 3) == pytest.approx(4 / 9)
    with pytest.raises(DatagenError):
        halton(0, 2)


def test_halton_points_cover_the_extent():
    pts = halton_points(1, 500, 8.0, 2.0)
    assert pts.shape == (500, 2)
    assert np.all((pts > 0) & (pts[:, 0] < 8.0) & (pts[:, 1] < 2.0))
    # low discrepancy: every quarter of the x range gets a quarter of the points
    counts = np.histogram(pts[:, 0], bins=4, range=(0, 8))[0]
    assert np.all(np.abs(counts - 125) <= 2)


def test_viewpoints_are_accessible(corridor, corridor_maps):
    points = sample_viewpoints(corridor, corridor_maps.semantic, 30)
    assert points.shape == (30, 2)
    costs, _, _ = interpolate_many(corridor_maps.semantic, points)
    assert np.all(costs < DEFAULT_ACCESS_THRESHOLD)
    rows, cols = (points[:, 1] // 0.1).astype(int), (points[:, 0] // 0.1).astype(int)
    assert not corridor.obstacle_mask()[rows, cols].any()
    np.testing.assert_array_equal(points, sample_viewpoints(corridor, corridor_maps.semantic, 30))


def test_viewpoint_sampling_gives_up(table):
    walls = uniform_env(table, "wall")
    with pytest.raises(DatagenError, match="only 0 of 5 viewpoints"):
        sample_viewpoints(walls, build_maps(walls).semantic, 5)


def test_edges_agree_with_dense_segment_sampling(urban, urban_maps):
    cost = urban_maps.semantic
    points = sample_viewpoints(urban, cost, 30)
    graph = build_reachability_graph(points, cost)
    n_pairs = len(points) * (len(points) - 1) // 2
    assert 0 < len(graph.edges) < n_pairs

    # bilinear lookups are Lipschitz with this constant
    diffs = max(np.abs(np.diff(cost.values, axis=0)).max(), np.abs(np.diff(cost.values, axis=1)).max())
    band = math.sqrt(2) * diffs

    t = np.linspace(0.0, 1.0, 400)
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            seg = points[i] + t[:, None] * (points[j] - points[i])
            dense_max = interpolate_many(cost, seg)[0].max()
            if graph.has_edge(i, j):
                assert dense_max < DEFAULT_EDGE_THRESHOLD + band, (i, j, dense_max)
            else:
                assert dense_max > DEFAULT_EDGE_THRESHOLD - band, (i, j, dense_max)

    adjacency = graph.adjacency.toarray()
    np.testing.assert_array_equal(adjacency, adjacency.T)
    for i, j in graph.edges:
        assert adjacency[i, j] == pytest.approx(np.linalg.norm(points[i] - points[j]))


def test_threaded_graph_matches_serial(corridor_maps, corridor_graph):
    threaded = build_reachability_graph(corridor_graph.points, corridor_maps.semantic, workers=3)
    assert threaded.edges == corridor_graph.edges


def test_components_and_shortest_paths():
    points = [[0, 0], [1, 0], [2, 0], [10, 10], [11, 10]]
    rows, cols = [0, 1, 1, 2, 3, 4], [1, 0, 2, 1, 4, 3]
    graph = ReachabilityGraph(np.array(points, dtype=float), sparse.csr_matrix(([1.0] * 6, (rows, cols)), shape=(5, 5)))
    labels = graph.components()
    assert labels[0] == labels[2] != labels[3]
    assert list(graph.reachable_from(0, labels)) == [1, 2]
    assert graph.shortest_path(0, 2) == [0, 1, 2]
    assert graph.shortest_path(0, 4) == []


def test_in_view_share_follows_fov_ratio(rng):
    graph = complete_graph(rng.uniform(0, 20, size=(40, 2)))
    fov = math.pi / 2
    draws = draw_start_goal(graph, 3000, 0.7, fov, rng)
    in_view = [goal_in_fov(RobotPose(*graph.points[s], yaw), graph.points[g], fov) for s, g, yaw in draws]
    # by construction 0.7 plus the uniform draws that land in view: 0.7 + 0.3 * fov / 2pi
    assert np.mean(in_view) == pytest.approx(0.775, abs=0.03)
    assert all(s != g for s, g, _ in draws)

    aimed = draw_start_goal(graph, 200, 1.0, fov, rng)
    assert all(goal_in_fov(RobotPose(*graph.points[s], yaw), graph.points[g], fov) for s, g, yaw in aimed)


def test_draw_validation(rng):
    graph = complete_graph([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DatagenError, match="fov_ratio"):
        draw_start_goal(graph, 1, 1.5, math.pi / 2, rng)
    with pytest.raises(DatagenError, match="no connected pair"):
        draw_start_goal(graph, 1, 0.5, math.pi / 2, rng, min_distance=5.0)


def test_robot_frame_goal():
    flat = HeightMap(np.zeros((40, 40)), 0.1)
    goal = robot_frame_goal(RobotPose(1.0, 1.0, math.pi / 2), (1.0, 3.0), flat, 0.5)
    np.testing.assert_allclose(goal, [2.0, 0.0, 0.5], atol=1e-12)

    centers = (np.arange(40) + 0.5) * 0.1
    ramp = HeightMap(np.tile(0.25 * centers, (40, 1)), 0.1)
    goal = robot_frame_goal(RobotPose(1.0, 2.0, 0.0), (3.0, 2.0), ramp, 0.5)
    np.testing.assert_allclose(goal, [2.0, 0.0, 1.0], atol=1e-12)


def test_generated_samples(corridor, corridor_maps, corridor_samples):
    assert len(corridor_samples) == 8
    for s in corridor_samples:
        assert s.env_id == env_digest(corridor)
        assert s.depth.n_rays == 8 and s.semantic.colors.shape == (8, 3)
        expected = robot_frame_goal(s.pose, s.goal_world[:2], corridor_maps.height, 0.5)
        np.testing.assert_allclose(s.goal, expected, atol=1e-12)
        assert corridor.contains(s.pose.x, s.pose.y)


def test_dataset_round_trip(corridor_samples, tmp_path):
    path = tmp_path / "data.ipds"
    export_dataset(corridor_samples, path, h_r=0.5)
    loaded, header = import_dataset(path)

    assert header["format"] == "IPDS1" and header["count"] == 8
    assert header["sensor"]["n_rays"] == 8 and header["h_r"] == 0.5
    for a, b in zip(corridor_samples, loaded):
        assert (a.pose.x, a.pose.y, a.pose.yaw) == (b.pose.x, b.pose.y, b.pose.yaw)
        np.testing.assert_array_equal(a.depth.ranges, b.depth.ranges)
        np.testing.assert_array_equal(a.semantic.colors, b.semantic.colors)
        np.testing.assert_array_equal(a.goal, b.goal)
        np.testing.assert_array_equal(a.goal_world, b.goal_world)
        assert b.env_id == a.env_id


def test_dataset_errors(corridor_samples, tmp_path):
    path = tmp_path / "data.ipds"
    with pytest.raises(DatagenError, match="empty"):
        export_dataset([], path)

    export_dataset(corridor_samples, path)
    blob = path.read_bytes()

    path.write_bytes(blob[:-3])
    with pytest.raises(DatasetFormatError, match="byte offset"):
        import_dataset(path)

    path.write_bytes(b"{not json\n" + blob)
    with pytest.raises(DatasetFormatError, match="line 1: malformed header"):
        import_dataset(path)

    path.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(DatasetFormatError, match="not an IPDS1 dataset"):
        import_dataset(path)

    path.write_bytes(b"no newline")
    with pytest.raises(DatasetFormatError, match="missing header"):
        import_dataset(path)

    # the format error is also a plain ValueError
    path.write_bytes(b'{"format": "IPDS1"}\n')
    with pytest.raises(ValueError, match="incomplete header"):
        import_dataset(path)
