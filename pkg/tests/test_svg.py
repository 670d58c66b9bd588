import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ecgsal.saliency import upsample_normalize
from ecgsal.svg import RAMP_STOPS, hex_color, overlay_svg, ramp_rgb

NS = "{http://www.w3.org/2000/svg}"


def dots(svg: str):
    root = ET.fromstring(svg.split("\n", 1)[1])
    return [(int(c.get("data-t")), float(c.get("data-v")), c.get("fill")) for c in root.iter(NS + "circle")]


def test_ramp_endpoints_and_clipping():
    assert hex_color(ramp_rgb(0.0)) == "#440154"
    assert hex_color(ramp_rgb(1.0)) == "#fde725"
    assert hex_color(ramp_rgb(-3.0)) == "#440154" and hex_color(ramp_rgb(7.0)) == "#fde725"
    for v, rgb in RAMP_STOPS:
        assert tuple(ramp_rgb(v)) == rgb


def test_ramp_is_piecewise_linear():
    mid = ramp_rgb(0.125)
    np.testing.assert_allclose(mid, np.rint((np.array(RAMP_STOPS[0][1]) + RAMP_STOPS[1][1]) / 2))
    assert ramp_rgb(np.zeros((2, 3))).shape == (2, 3, 3)


def test_argmax_dot_is_yellow_and_min_dot_is_violet():
    rng = np.random.default_rng(0)
    x = rng.normal(size=720)
    _, overlay = upsample_normalize(rng.normal(size=48))
    d = dots(overlay_svg(x, overlay, title="PVC <0001>"))
    assert len(d) == 720 and [t for t, _, _ in d] == list(range(720))
    assert d[int(overlay.argmax())][2] == "#fde725"
    assert d[int(overlay.argmin())][2] == "#440154"


def test_title_is_escaped_and_lengths_checked():
    svg = overlay_svg(np.zeros(4), np.zeros(4), title="a<b & c")
    assert "a&lt;b &amp; c" in svg
    assert re.search(r'data-ramp-version="1"', svg)
    with pytest.raises(ValueError):
        overlay_svg(np.zeros(4), np.zeros(5))
