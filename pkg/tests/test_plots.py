import xml.etree.ElementTree as ET

import numpy as np

from distortlab.plots import Plot, heatmap_svg

NS = "{http://www.w3.org/2000/svg}"


def make_plot():
    x = np.logspace(-6, -2, 9)
    return (Plot("fit <check> & more", "scale", "distance", logx=True, logy=True)
            .add(x, x ** 3, "data", style="both")
            .add_slope(x, 1e-6, 3.0, "slope 3"))


def test_plot_well_formed_and_deterministic():
    a, b = make_plot().to_svg(), make_plot().to_svg()
    assert a == b
    root = ET.fromstring(a)
    assert root.tag == NS + "svg"
    assert len(root.findall(NS + "polyline")) == 2
    assert len(root.findall(NS + "circle")) == 9
    assert any("stroke-dasharray" in p.attrib for p in root.findall(NS + "polyline"))


def test_plot_handles_empty_and_nonfinite():
    ET.fromstring(Plot("empty").to_svg())
    p = Plot(logy=True).add([1, 2, 3], [1.0, np.nan, -1.0])
    ET.fromstring(p.to_svg())
    ET.fromstring(Plot().add([0, 1], [5, 5]).to_svg())


def test_heatmap():
    v = np.zeros((400, 300))
    v[0, 0] = 1.0
    svg = heatmap_svg(v, "rho")
    root = ET.fromstring(svg)
    rects = root.findall(NS + "rect")
    # background, one shaded block, frame
    assert len(rects) == 3
    assert svg == heatmap_svg(v, "rho")
