import numpy as np
import plotly.graph_objects as go

from costmap import CostMap
from plots import costmap_figure, label_figure, path_svg, to_gray, write_path_svg, write_pgm


def test_gray_scaling():
    gray = to_gray([[0.0, 1.0], [2.0, 4.0]])
    assert gray.dtype == np.uint8
    np.testing.assert_array_equal(gray, [[0, 64], [128, 255]])
    np.testing.assert_array_equal(to_gray(np.full((2, 3), 7.0)), np.zeros((2, 3)))


def test_pgm_is_north_up(tmp_path):
    grid = CostMap(np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]), 0.5)
    path = tmp_path / "map.pgm"
    write_pgm(grid, path)
    blob = path.read_bytes()
    header = b"P5\n3 2\n255\n"
    assert blob.startswith(header)
    # the top image row is the northern (last) grid row
    assert list(blob[len(header) :]) == [255, 255, 255, 0, 0, 0]


def test_path_svg(tmp_path):
    grid = CostMap(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    svg = path_svg(grid, [np.array([[0.5, 0.5], [1.5, 1.5]])], goals=[(1.5, 1.5)])
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert 'width="40.00" height="40.00"' in svg
    # world y grows north, svg y grows down
    assert 'points="10.00,30.00 30.00,10.00"' in svg
    assert svg.count("<rect") == 4 + 1
    assert '<circle cx="30.00" cy="10.00"' in svg

    path = tmp_path / "paths.svg"
    write_path_svg(grid, [], path)
    assert "<polyline" not in path.read_text()


def test_figures(corridor, corridor_maps):
    fig = costmap_figure(corridor_maps.semantic, "Semantic", paths=[np.array([[1.0, 1.2], [7.0, 1.2]])])
    assert isinstance(fig, go.Figure)
    assert [t.type for t in fig.data] == ["heatmap", "scatter"]
    assert fig.layout.title.text == "Semantic"

    image = label_figure(corridor)
    assert np.asarray(image.data[0].z).shape == corridor.shape + (3,)
