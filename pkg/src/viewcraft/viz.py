"""Qualitative view export: 3x3 grids with the original centered.

Image inputs render directly (original carries a pink border); spectrogram
inputs render as signed difference maps on a red-white-blue scale with
endpoints at -2.5 (red) and +2.5 (blue).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .errors import ShapeMismatch

PINK = (255, 105, 180)
DIFF_SCALE = 2.5


def _to_uint8_rgb(tile: torch.Tensor) -> np.ndarray:
    """C x H x W in [0, 1] -> H x W x 3 uint8; grayscale channels replicate."""
    if tile.shape[0] == 1:
        tile = tile.expand(3, -1, -1)
    elif tile.shape[0] != 3:
        raise ShapeMismatch(f"direct rendering needs 1 or 3 channels, got {tile.shape[0]}")
    array = (tile.clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
    return np.ascontiguousarray(array)


def _grayscale_normalized(plane: torch.Tensor) -> np.ndarray:
    lo, hi = plane.min(), plane.max()
    scaled = (plane - lo) / (hi - lo) if hi > lo else torch.zeros_like(plane)
    return _to_uint8_rgb(scaled.unsqueeze(0))


def _diff_map(delta: torch.Tensor, scale: float = DIFF_SCALE) -> np.ndarray:
    """Signed 2D difference -> red (negative) / white (zero) / blue (positive)."""
    t = (delta / scale).clamp(-1.0, 1.0).numpy()
    h, w = t.shape
    rgb = np.full((h, w, 3), 255, dtype=np.float64)
    negative = t < 0
    rgb[negative, 1] = rgb[negative, 2] = 255 * (1 + t[negative])
    positive = t > 0
    rgb[positive, 0] = rgb[positive, 1] = 255 * (1 - t[positive])
    return rgb.round().astype(np.uint8)


def render_view_grid(
    original: torch.Tensor,
    views: list[torch.Tensor],
    style: str = "auto",
    border: int = 3,
    gap: int = 2,
    channel: int = 0,
) -> np.ndarray:
    """3x3 uint8 RGB grid: eight views around the bordered original.

    ``style``: "image" pastes views directly; "diff" renders view-minus-input
    difference maps; "auto" picks by channel count.
    """
    if len(views) != 8:
        raise ShapeMismatch(f"a 3x3 grid needs exactly 8 views, got {len(views)}")
    if style == "auto":
        style = "image" if original.shape[0] in (1, 3) else "diff"

    if style == "image":
        center = _to_uint8_rgb(original)
        tiles = [_to_uint8_rgb(v) for v in views]
    else:
        center = _grayscale_normalized(original[channel])
        tiles = [_diff_map((v - original)[channel]) for v in views]

    h, w = center.shape[:2]
    cell_h, cell_w = h + 2 * border, w + 2 * border
    canvas = np.full((3 * cell_h + 2 * gap, 3 * cell_w + 2 * gap, 3), 255, dtype=np.uint8)

    order = iter(tiles)
    for row in range(3):
        for col in range(3):
            top = row * (cell_h + gap)
            left = col * (cell_w + gap)
            if (row, col) == (1, 1):
                canvas[top : top + cell_h, left : left + cell_w] = PINK
                canvas[top + border : top + border + h, left + border : left + border + w] = center
            else:
                canvas[top + border : top + border + h, left + border : left + border + w] = next(order)
    return canvas


def save_png(array: np.ndarray, path) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path, format="PNG")
