import xml.etree.ElementTree as ET

import numpy as np

from ivi.svgplot import heatmap, line_plot


def test_line_plot_is_valid_svg(tmp_path):
    x = np.arange(1, 11)
    path = tmp_path / "lines.svg"
    line_plot(path, [{"x": x, "y": 1.0 / x, "label": "decay"}, {"x": x, "y": 0.5 / x, "label": "band", "fill_to": 2.0 / x}], logy=True)
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    assert "decay" in path.read_text()


def test_heatmap_subsamples(tmp_path):
    path = tmp_path / "heat.svg"
    heatmap(path, np.eye(300), max_cells=50)
    rects = [e for e in ET.parse(path).getroot().iter() if e.tag.endswith("rect")]
    assert 50 * 50 <= len(rects) <= 50 * 50 + 5
