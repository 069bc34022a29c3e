"""Synthetic shape image generator.

Each image is a 256x256x3 uint8 canvas, white background, one solid
colored shape. Class identity is the outline (circle, square, triangle,
heart, star, hexagon); color, size, rotation, and position are sampled
per image. Size is the circumcircle diameter in pixels, and the center
is drawn so the circumcircle stays inside the canvas for any rotation.
Rasterization is hard-edged (no anti-aliasing) on integer pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError

CLASS_NAMES = ("circle", "square", "triangle", "heart", "star", "hexagon")
CANVAS = 256
SIZE_RANGE = (50.0, 150.0)

_GRID_CACHE = {}


def _pixel_grid(canvas):
    if canvas not in _GRID_CACHE:
        ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
        _GRID_CACHE[canvas] = (xs, ys)
    return _GRID_CACHE[canvas]


@dataclass
class ShapeImage:
    pixels: np.ndarray          # (canvas, canvas, 3) uint8
    class_id: int
    attributes: dict = field(default_factory=dict)


def _polygon_mask(u, v, verts):
    """Even-odd crossing test, vectorized over the coordinate grids."""
    inside = np.zeros(u.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > v) != (y2 > v)
        x_at = x1 + (v - y1) * (x2 - x1) / (y2 - y1 + 1e-300)
        inside ^= crosses & (u < x_at)
    return inside


def _regular_polygon(n_verts, phase):
    return [(math.cos(phase + 2 * math.pi * k / n_verts),
             math.sin(phase + 2 * math.pi * k / n_verts)) for k in range(n_verts)]


def _star_verts():
    inner = math.cos(math.radians(72)) / math.cos(math.radians(36))
    verts = []
    for k in range(5):
        a_out = math.pi / 2 + 2 * math.pi * k / 5
        a_in = a_out + math.pi / 5
        verts.append((math.cos(a_out), math.sin(a_out)))
        verts.append((inner * math.cos(a_in), inner * math.sin(a_in)))
    return verts


_HEART_SCALE = None


def _heart_inside(u, v):
    """Classic sextic heart, rescaled to circumradius 1, point-down in image rows."""
    global _HEART_SCALE
    if _HEART_SCALE is None:
        g = np.linspace(-1.6, 1.6, 801)
        gu, gv = np.meshgrid(g, g)
        raw = (gu ** 2 + gv ** 2 - 1) ** 3 - gu ** 2 * gv ** 3
        r = np.sqrt(gu ** 2 + gv ** 2)[raw <= 0]
        _HEART_SCALE = float(r.max())
    x = u * _HEART_SCALE
    y = -v * _HEART_SCALE  # image v grows downward, heart formula points up
    return (x ** 2 + y ** 2 - 1) ** 3 - x ** 2 * y ** 3 <= 0


def shape_mask(class_id, center, radius, rotation_deg, canvas=CANVAS) -> np.ndarray:
    """Boolean mask of a unit-circumradius shape scaled/rotated onto the canvas."""
    xs, ys = _pixel_grid(canvas)
    th = math.radians(rotation_deg)
    c, s = math.cos(th), math.sin(th)
    dx = (xs - center[0]) / radius
    dy = (ys - center[1]) / radius
    u = c * dx + s * dy
    v = -s * dx + c * dy
    name = CLASS_NAMES[class_id]
    if name == "circle":
        return u * u + v * v <= 1.0
    if name == "square":
        half = 1.0 / math.sqrt(2.0)
        return np.maximum(np.abs(u), np.abs(v)) <= half
    if name == "triangle":
        return _polygon_mask(u, v, _regular_polygon(3, math.pi / 2))
    if name == "heart":
        return _heart_inside(u, v)
    if name == "star":
        return _polygon_mask(u, v, _star_verts())
    if name == "hexagon":
        apothem = math.cos(math.pi / 6)
        proj = np.full(u.shape, -np.inf)
        for k in range(6):
            a = math.pi * k / 3
            proj = np.maximum(proj, u * math.cos(a) + v * math.sin(a))
        return proj <= apothem
    raise UsageError(f"unknown class id {class_id}")


def generate_shape_image(class_id, rng, canvas=CANVAS) -> ShapeImage:
    if not 0 <= class_id < len(CLASS_NAMES):
        raise UsageError(f"class_id must be in [0, {len(CLASS_NAMES)})")
    size = rng.uniform(*SIZE_RANGE)
    rotation = rng.uniform(0.0, 360.0)
    color = rng.integers(0, 256, size=3)
    while int(color[0]) == 255 and int(color[1]) == 255 and int(color[2]) == 255:
        color = rng.integers(0, 256, size=3)  # keep foreground distinct from background
    radius = size / 2.0
    margin = radius + 1.0
    cx = rng.uniform(margin, canvas - 1 - margin)
    cy = rng.uniform(margin, canvas - 1 - margin)

    pixels = np.full((canvas, canvas, 3), 255, dtype=np.uint8)
    mask = shape_mask(class_id, (cx, cy), radius, rotation, canvas)
    pixels[mask] = np.array(color, dtype=np.uint8)
    return ShapeImage(
        pixels=pixels,
        class_id=int(class_id),
        attributes={
            "color": [int(c) for c in color],
            "size": float(size),
            "rotation": float(rotation),
            "center": [float(cx), float(cy)],
        },
    )
