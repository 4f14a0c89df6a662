import xml.etree.ElementTree as ET

import pytest

from usdlab.svg import emit_svg

NS = "{http://www.w3.org/2000/svg}"


def test_svg_is_well_formed_and_deterministic():
    series = {"a": ([0, 1, 2], [0, 5, 3]), "b & c": ([0, 2], [1, 1])}
    doc = emit_svg(series, title="t", xlabel="x", ylabel="y")
    assert doc == emit_svg(series, title="t", xlabel="x", ylabel="y")
    root = ET.fromstring(doc)
    assert root.tag == NS + "svg" and root.get("version") == "1.1"
    lines = root.findall(f".//{NS}polyline")
    assert len(lines) == 2
    assert len(lines[0].get("points").split()) == 3
    assert "b &amp; c" in doc
    tags = {el.tag.replace(NS, "") for el in root.iter()}
    assert tags <= {"svg", "polyline", "line", "text", "rect", "g"}


def test_svg_points_stay_inside_canvas():
    doc = emit_svg({"s": ([0, 10], [-3, 7])}, width=400, height=300)
    pts = ET.fromstring(doc).find(f".//{NS}polyline").get("points").split()
    for p in pts:
        x, y = map(float, p.split(","))
        assert 0 <= x <= 400 and 0 <= y <= 300


@pytest.mark.parametrize("series", [{}, {"s": ([0], [1])}, {"s": ([0, 1], [1])}])
def test_svg_rejects_bad_series(series):
    with pytest.raises(ValueError):
        emit_svg(series)
