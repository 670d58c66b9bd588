"""SVG export of a signal drawn as dots colored by a saliency overlay."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

RAMP_VERSION = 1
# piecewise-linear violet -> blue -> green -> orange -> yellow
RAMP_STOPS: tuple[tuple[float, tuple[int, int, int]], ...] = (
    (0.00, (68, 1, 84)),
    (0.25, (49, 104, 142)),
    (0.50, (53, 183, 121)),
    (0.75, (246, 149, 64)),
    (1.00, (253, 231, 37)),
)


def ramp_rgb(v) -> np.ndarray:
    """Map values in [0, 1] (clipped) to integer RGB triples, shape ``[..., 3]``."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    pos = np.array([s[0] for s in RAMP_STOPS])
    rgb = np.array([s[1] for s in RAMP_STOPS], dtype=np.float64)
    out = np.stack([np.interp(v, pos, rgb[:, c]) for c in range(3)], axis=-1)
    return np.rint(out).astype(np.int64)


def hex_color(rgb) -> str:
    r, g, b = (int(c) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def overlay_svg(
    signal: np.ndarray,
    overlay: np.ndarray,
    title: str = "",
    width: int = 960,
    height: int = 240,
    margin: int = 12,
    radius: float = 1.2,
) -> str:
    """One ``<circle>`` per sample, colored by ``overlay`` through the ramp.

    Each dot carries ``data-t`` (sample index) and ``data-v`` (overlay value)
    so the output can be checked without rendering.
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    v = np.asarray(overlay, dtype=np.float64).reshape(-1)
    if x.shape != v.shape:
        raise ValueError(f"signal has {x.size} samples but overlay has {v.size}")
    n = x.size
    top = margin + (16 if title else 0)
    px = margin + np.arange(n) * (width - 2 * margin) / max(n - 1, 1)
    lo, hi = (float(x.min()), float(x.max())) if n else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    py = height - margin - (x - lo) / span * (height - top - margin)
    colors = ramp_rgb(v)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-ramp-version="{RAMP_VERSION}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin + 10}" font-family="sans-serif" font-size="12">{escape(title)}</text>')
    out.append('<g stroke="none">')
    for t in range(n):
        out.append(
            f'<circle cx="{px[t]:.2f}" cy="{py[t]:.2f}" r="{radius}" fill="{hex_color(colors[t])}" '
            f'data-t="{t}" data-v="{v[t]:.6f}"/>'
        )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
