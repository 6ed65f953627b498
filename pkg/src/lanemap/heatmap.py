"""Gaussian vertex-heatmap encoding and peak decoding at a fixed stride.

A vertex at continuous pixel p lands in low-resolution cell floor(p/R).
Encoding splats a unit-peak Gaussian around that cell; overlapping splats
are combined by element-wise maximum.  The offset map stores the sub-cell
fraction p/R - floor(p/R) at the peak cell, which makes decoding exact.
Without offsets, decoding returns cell centers, bounding the error by
R*sqrt(2)/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geom import PixelPoint
from .tensorio import load_tensors, save_tensors

_MAX_OFFSET = float(np.nextafter(np.float32(1.0), np.float32(0.0)))


class HeatmapMode(str, Enum):
    PER_VERTEX_CHANNEL = "per_vertex_channel"
    SHARED_CHANNEL = "shared_channel"


@dataclass(frozen=True)
class HeatmapConfig:
    stride: int = 4
    sigma: float = 2.0
    mode: HeatmapMode = HeatmapMode.PER_VERTEX_CHANNEL
    c_vert: int = 64
    peak_threshold: float = 0.3

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", HeatmapMode(self.mode))
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if self.c_vert < 1:
            raise ValidationError(f"c_vert must be >= 1, got {self.c_vert}")
        if not 0.0 <= self.peak_threshold <= 1.0:
            raise ValidationError(f"peak_threshold must be in [0,1], got {self.peak_threshold}")

    def grid_shape(self, width: int, height: int) -> tuple[int, int]:
        return (-(-height // self.stride), -(-width // self.stride))


@dataclass(frozen=True)
class VertexHeatmaps:
    grid: np.ndarray  # float32 (H', W', C), values in [0, 1]
    stride: int

    @property
    def channels(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class OffsetMap:
    grid: np.ndarray  # float32 (H', W', 2), fractions in [0, 1)
    stride: int


def _cells_and_offsets(
    vertices: Sequence[PixelPoint], cfg: HeatmapConfig, width: int, height: int
) -> tuple[np.ndarray, np.ndarray]:
    gh, gw = cfg.grid_shape(width, height)
    cells = np.empty((len(vertices), 2), dtype=np.int64)  # (cx, cy)
    offsets = np.empty((len(vertices), 2), dtype=np.float64)
    for i, p in enumerate(vertices):
        if not (0.0 <= p.x <= width and 0.0 <= p.y <= height):
            raise ValidationError(f"vertex {i} at ({p.x}, {p.y}) outside image bounds {width}x{height}")
        fx = p.x / cfg.stride
        fy = p.y / cfg.stride
        cx = min(int(np.floor(fx)), gw - 1)
        cy = min(int(np.floor(fy)), gh - 1)
        cells[i] = (cx, cy)
        offsets[i] = (min(fx - cx, _MAX_OFFSET), min(fy - cy, _MAX_OFFSET))
    return cells, offsets


def encode_vertices(
    vertices: Sequence[PixelPoint], cfg: HeatmapConfig, width: int, height: int
) -> tuple[VertexHeatmaps, OffsetMap]:
    """Splat vertices into Gaussian heatmaps plus a sub-cell offset map."""
    if cfg.mode is HeatmapMode.PER_VERTEX_CHANNEL and len(vertices) > cfg.c_vert:
        raise ValidationError(f"{len(vertices)} vertices exceed c_vert={cfg.c_vert}")
    gh, gw = cfg.grid_shape(width, height)
    channels = cfg.c_vert if cfg.mode is HeatmapMode.PER_VERTEX_CHANNEL else 1
    grid = np.zeros((gh, gw, channels), dtype=np.float32)
    off = np.zeros((gh, gw, 2), dtype=np.float32)

    cells, offsets = _cells_and_offsets(vertices, cfg, width, height)
    ys = np.arange(gh, dtype=np.float64)[:, None]
    xs = np.arange(gw, dtype=np.float64)[None, :]
    inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma)
    for i in range(len(vertices)):
        cx, cy = cells[i]
        splat = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) * inv).astype(np.float32)
        channel = i if cfg.mode is HeatmapMode.PER_VERTEX_CHANNEL else 0
        np.maximum(grid[:, :, channel], splat, out=grid[:, :, channel])
        off[cy, cx, 0] = offsets[i, 0]
        off[cy, cx, 1] = offsets[i, 1]
    return VertexHeatmaps(grid, cfg.stride), OffsetMap(off, cfg.stride)


def _shared_peak_mask(plane: np.ndarray, threshold: float) -> np.ndarray:
    """Strict 3x3 local maxima; equal-value ties go to the smaller (y, x)."""
    gh, gw = plane.shape
    padded = np.full((gh + 2, gw + 2), -np.inf, dtype=plane.dtype)
    padded[1:-1, 1:-1] = plane
    mask = plane >= threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[1 + dy : gh + 1 + dy, 1 + dx : gw + 1 + dx]
            if (dy, dx) < (0, 0):
                # Neighbor precedes this cell in scan order: must beat it strictly.
                mask &= plane > neighbor
            else:
                mask &= plane >= neighbor
    return mask


def decode_peaks(
    hm: VertexHeatmaps, off: OffsetMap | None, cfg: HeatmapConfig
) -> list[tuple[PixelPoint, float]]:
    """Recover vertex coordinates and confidences from heatmaps.

    Per-vertex mode returns at most one peak per channel (its argmax, when
    above threshold); shared mode returns all strict 3x3 local maxima.
    Peaks decode to (cell + offset) * R when an offset map is supplied and
    to cell centers (cell + 0.5) * R otherwise.
    """
    R = hm.stride
    results: list[tuple[PixelPoint, float]] = []

    def to_point(cy: int, cx: int) -> PixelPoint:
        if off is not None:
            fx = cx + float(off.grid[cy, cx, 0])
            fy = cy + float(off.grid[cy, cx, 1])
        else:
            fx = cx + 0.5
            fy = cy + 0.5
        return PixelPoint(fx * R, fy * R)

    if cfg.mode is HeatmapMode.PER_VERTEX_CHANNEL:
        for c in range(hm.channels):
            plane = hm.grid[:, :, c]
            flat = int(np.argmax(plane))
            cy, cx = divmod(flat, plane.shape[1])
            value = float(plane[cy, cx])
            if value >= cfg.peak_threshold and value > 0.0:
                results.append((to_point(cy, cx), value))
    else:
        plane = hm.grid[:, :, 0]
        mask = _shared_peak_mask(plane, max(cfg.peak_threshold, np.finfo(np.float32).tiny))
        for cy, cx in np.argwhere(mask):
            results.append((to_point(int(cy), int(cx)), float(plane[cy, cx])))
    return results


def save_heatmaps(hm: VertexHeatmaps, path: str | Path) -> None:
    save_tensors(path, [(hm.grid, hm.stride)])


def load_heatmaps(path: str | Path) -> VertexHeatmaps:
    records = load_tensors(path)
    grid, stride = records[0]
    return VertexHeatmaps(grid, stride)


def save_offsets(off: OffsetMap, path: str | Path) -> None:
    save_tensors(path, [(off.grid, off.stride)])


def load_offsets(path: str | Path) -> OffsetMap:
    records = load_tensors(path)
    grid, stride = records[0]
    return OffsetMap(grid, stride)
