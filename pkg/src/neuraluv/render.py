"""UV layout rendering and checker coloring.

Raster output is drawn into a numpy image and encoded with Pillow;
vector output is a hand-rolled SVG. Both are deterministic byte-for-byte
for fixed inputs. Point colors encode normals as (n + 1) / 2; seam
points are overdrawn in a distinct color.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

__all__ = ["assign_checker_colors", "render_uv_layout", "normal_colors"]

LIGHT = np.array([0.85, 0.85, 0.85])
DARK = np.array([0.25, 0.25, 0.25])
SEAM_COLOR = np.array([0.9, 0.1, 0.1])
DEFAULT_COLOR = np.array([0.2, 0.45, 0.8])


def assign_checker_colors(uv: np.ndarray, period: float) -> np.ndarray:
    """Light/dark RGB per point by the parity of the UV checker cell."""
    uv = np.asarray(uv, dtype=np.float64)
    if period <= 0:
        raise ValueError("period must be positive")
    cells = np.floor(uv[:, 0] / period) + np.floor(uv[:, 1] / period)
    dark = (cells.astype(np.int64) % 2).astype(bool)
    out = np.where(dark[:, None], DARK, LIGHT)
    return out


def normal_colors(normals: np.ndarray) -> np.ndarray:
    """Map unit normals to RGB via (n + 1) / 2."""
    return (np.asarray(normals, dtype=np.float64) + 1.0) / 2.0


def _point_colors(n_points: int, normals, colors) -> np.ndarray:
    if colors is not None:
        return np.asarray(colors, dtype=np.float64)
    if normals is not None:
        return normal_colors(normals)
    return np.tile(DEFAULT_COLOR, (n_points, 1))


def _to_pixels(uv: np.ndarray, size: int, margin: int):
    lo = uv.min(axis=0)
    extent = float((uv.max(axis=0) - lo).max())
    if extent <= 0:
        extent = 1.0
    scale = (size - 2 * margin) / extent
    px = (uv - lo) * scale + margin
    px[:, 1] = size - px[:, 1]  # flip v so larger v is up
    return px


def render_uv_layout(
    uv: np.ndarray,
    path,
    normals: Optional[np.ndarray] = None,
    colors: Optional[np.ndarray] = None,
    seam_indices: Optional[np.ndarray] = None,
    size: int = 800,
    point_radius: int = 2,
) -> None:
    """Scatter plot of a UV layout to PNG (raster) or SVG (vector).

    The format follows the file extension. Any explicit ``colors``
    override the normal-derived ones.
    """
    uv = np.asarray(uv, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2 or uv.shape[0] == 0:
        raise ValueError("uv must be a non-empty (N, 2) array")
    rgb = _point_colors(uv.shape[0], normals, colors)
    if rgb.shape != (uv.shape[0], 3):
        raise ValueError("colors must be (N, 3)")
    suffix = Path(path).suffix.lower()
    if suffix == ".svg":
        _render_svg(uv, rgb, seam_indices, path, size, point_radius)
    elif suffix == ".png":
        _render_png(uv, rgb, seam_indices, path, size, point_radius)
    else:
        raise ValueError(f"unsupported image format {suffix!r}")


def _render_png(uv, rgb, seam_indices, path, size, radius):
    margin = max(8, radius + 2)
    px = _to_pixels(uv, size, margin)
    image = np.full((size, size, 3), 255, dtype=np.uint8)
    quant = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    order = np.arange(uv.shape[0])
    seam_set = set() if seam_indices is None else set(np.asarray(seam_indices).tolist())
    seam_rgb = np.clip(np.round(SEAM_COLOR * 255.0), 0, 255).astype(np.uint8)
    # draw seams last so they stay visible
    order = np.concatenate(
        [order[[i not in seam_set for i in order]],
         order[[i in seam_set for i in order]]]
    )
    for i in order:
        cx, cy = int(round(px[i, 0])), int(round(px[i, 1]))
        r = radius + 1 if i in seam_set else radius
        color = seam_rgb if i in seam_set else quant[i]
        x0, x1 = max(0, cx - r), min(size, cx + r + 1)
        y0, y1 = max(0, cy - r), min(size, cy + r + 1)
        if x0 < x1 and y0 < y1:
            image[y0:y1, x0:x1] = color
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def _render_svg(uv, rgb, seam_indices, path, size, radius):
    margin = max(8, radius + 2)
    px = _to_pixels(uv, size, margin)
    quant = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    seam_set = set() if seam_indices is None else set(np.asarray(seam_indices).tolist())
    seam_hex = "#%02x%02x%02x" % tuple(
        np.clip(np.round(SEAM_COLOR * 255.0), 0, 255).astype(int)
    )
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="#ffffff"/>',
    ]
    seam_lines = []
    for i in range(uv.shape[0]):
        cx, cy = px[i]
        if i in seam_set:
            seam_lines.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius + 1}" '
                f'fill="{seam_hex}"/>'
            )
        else:
            color = "#%02x%02x%02x" % tuple(int(c) for c in quant[i])
            lines.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius}" '
                f'fill="{color}"/>'
            )
    lines.extend(seam_lines)
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
