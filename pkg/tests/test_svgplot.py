import math
import xml.etree.ElementTree as ET

from entroflow.svgplot import _nice_ticks, line_plot_svg

NS = "{http://www.w3.org/2000/svg}"


def test_document_is_well_formed():
    svg = line_plot_svg([("a", [0, 1, 2], [0, 1, 4]), ("b<c", [0, 2], [1, 1])], title="T & U", xlabel="x")
    root = ET.fromstring(svg)
    assert root.tag == NS + "svg"
    assert len(root.findall(NS + "polyline")) == 2
    texts = [t.text for t in root.iter(NS + "text")]
    assert "T & U" in texts and "b<c" in texts


def test_nonfinite_points_dropped():
    svg = line_plot_svg([("", [0, 1, 2, 3], [1, math.nan, math.inf, 2])])
    pts = ET.fromstring(svg).find(NS + "polyline").get("points").split()
    assert len(pts) == 2


def test_constant_and_empty_series_draw():
    ET.fromstring(line_plot_svg([("flat", [0, 1], [3, 3])]))
    ET.fromstring(line_plot_svg([("none", [], [])]))
    ET.fromstring(line_plot_svg([]))


def test_nice_ticks():
    assert _nice_ticks(0.0, 1.0) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert _nice_ticks(-3.0, 7.0)[0] == -2.0
    assert _nice_ticks(1.0, 1.0) == [1.0]
