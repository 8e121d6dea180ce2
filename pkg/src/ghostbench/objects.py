"""Built-in test objects.

``peppers`` is a procedurally drawn stand-in for the classic peppers still
life (shaded elliptical bodies, stems, specular highlights, dark gaps); the
original photograph is not redistributable with this package. A 128x128
8-bit copy ships as ``data/peppers.pgm``.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .core import Image, load_image, resize_box

# (cx, cy, semi-axis a, semi-axis b, angle rad, base brightness) in unit coordinates
_PEPPERS = [
    (0.30, 0.62, 0.27, 0.20, 0.35, 0.55),
    (0.72, 0.66, 0.25, 0.22, -0.30, 0.80),
    (0.52, 0.30, 0.30, 0.17, 0.10, 0.38),
    (0.15, 0.22, 0.16, 0.13, 0.80, 0.68),
    (0.86, 0.24, 0.15, 0.19, 0.20, 0.30),
    (0.55, 0.88, 0.22, 0.12, 0.05, 0.62),
]
_BIT_GLYPHS = {
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "I": ["11111", "00100", "00100", "00100", "00100", "00100", "11111"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
}


def peppers_image(size: int = 128, supersample: int = 4) -> Image:
    """Render the synthetic peppers scene at ``size x size`` (box-filtered)."""
    n = size * supersample
    ys, xs = (np.mgrid[0:n, 0:n] + 0.5) / n
    img = 0.12 + 0.06 * xs + 0.04 * np.sin(7.0 * ys)  # dim cloth backdrop
    for cx, cy, a, b, ang, level in _PEPPERS:
        c, s = np.cos(ang), np.sin(ang)
        u = ((xs - cx) * c + (ys - cy) * s) / a
        v = (-(xs - cx) * s + (ys - cy) * c) / b
        r2 = u * u + v * v
        body = r2 < 1.0
        # dark rim where bodies meet, then a lit dome with a lobe crease
        img = np.where((r2 < 1.12) & ~body, 0.05, img)
        shade = level * (0.55 + 0.45 * np.sqrt(np.clip(1.0 - r2, 0.0, 1.0)))
        shade *= 1.0 - 0.18 * np.exp(-((u - 0.05) ** 2) / 0.01) * (np.abs(v) < 0.85)
        hx, hy = u + 0.35, v + 0.40
        shade += 0.35 * np.exp(-(hx * hx + hy * hy) / 0.03)
        img = np.where(body, shade, img)
        # stem
        sx, sy = cx, cy - b * 0.95
        stem = (np.abs(xs - sx) < 0.018) & (ys > sy - 0.07) & (ys < sy + 0.02)
        img = np.where(stem, 0.45, img)
    img = np.clip(img, 0.0, 1.0)
    img = img.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return Image(np.round(img * 255.0) / 255.0)


def bit_image(size: int = 128, text: str = "BIT") -> Image:
    """White block letters on a black background."""
    glyph_w, glyph_h, gap = 5, 7, 1
    cols = len(text) * glyph_w + (len(text) - 1) * gap
    scale = max(1, int(size * 0.8) // cols)
    canvas = np.zeros((size, size))
    x0 = (size - cols * scale) // 2
    y0 = (size - glyph_h * scale) // 2
    for k, ch in enumerate(text.upper()):
        rows = _BIT_GLYPHS.get(ch)
        if rows is None:
            raise ValueError(f"no glyph for {ch!r}")
        gx = x0 + k * (glyph_w + gap) * scale
        for r, line in enumerate(rows):
            for q, bit in enumerate(line):
                if bit == "1":
                    canvas[y0 + r * scale:y0 + (r + 1) * scale, gx + q * scale:gx + (q + 1) * scale] = 1.0
    return Image(canvas)


def builtin_object(name: str, size: int) -> Image:
    """Named object (``peppers`` or ``bit``) at ``size x size``."""
    if name == "peppers":
        ref = resources.files("ghostbench") / "data" / "peppers.pgm"
        with resources.as_file(ref) as path:
            base = load_image(path)
        if 128 % size == 0:
            return resize_box(base, size)
        return peppers_image(size)
    if name == "bit":
        return bit_image(size)
    raise ValueError(f"unknown built-in object {name!r}")
