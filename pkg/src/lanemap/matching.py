"""Top-K candidate search and per-anchor feature aggregation.

For every anchor vertex the matcher gathers its K nearest neighbors, then
builds an S x S crop of channel-concatenated evidence around the anchor:

    channel 0                : segmentation map
    channel 1                : the anchor's own vertex map
    channels 2 .. K+1        : the K neighbor vertex maps (padded slots zero)
    channels K+2 .. K+1+c    : the c_feat feature channels

All crops live at feature (heatmap) resolution; vertex coordinates are
image pixels unless noted otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geom import PixelPoint


@dataclass(frozen=True)
class MatchConfig:
    k: int = 20
    crop_size: int = 64  # S, cells at feature resolution; even, >= 4
    c_feat: int = 4
    use_terminal_class: bool = True
    lambda1: float = 0.1
    lambda2: float = 0.01
    exclude_visited: bool = True  # honored when candidates are rebuilt during tracing

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.crop_size < 4 or self.crop_size % 2 != 0:
            raise ValidationError(f"crop_size must be even and >= 4, got {self.crop_size}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("loss weights must be >= 0")

    @property
    def n_classes(self) -> int:
        return self.k + 1 if self.use_terminal_class else self.k

    @property
    def terminal_class(self) -> int | None:
        return self.k if self.use_terminal_class else None

    @property
    def patch_channels(self) -> int:
        return self.c_feat + self.k + 2


@dataclass(frozen=True)
class CandidateSet:
    """Up to K nearest neighbors of one anchor, ascending by distance."""

    anchor: int
    neighbors: tuple[tuple[int, float], ...]
    padding: int

    def __post_init__(self) -> None:
        for (i, d), (j, d2) in zip(self.neighbors, self.neighbors[1:]):
            if d2 < d:
                raise ValidationError("candidate distances must be nondecreasing")
        if any(i == self.anchor for i, _ in self.neighbors):
            raise ValidationError("anchor cannot be its own candidate")

    @property
    def k(self) -> int:
        return len(self.neighbors) + self.padding

    def slot_of(self, vertex_index: int) -> int | None:
        for slot, (i, _) in enumerate(self.neighbors):
            if i == vertex_index:
                return slot
        return None


@dataclass(frozen=True)
class AggregatedPatch:
    grid: np.ndarray  # float32 (S, S, c_feat + K + 2)


@dataclass(frozen=True)
class MatchDecision:
    class_probs: np.ndarray  # (K,) or (K+1,) simplex
    corrected_location: tuple[float, float]  # image px

    def __post_init__(self) -> None:
        p = np.asarray(self.class_probs, dtype=np.float64)
        object.__setattr__(self, "class_probs", p)
        if p.min(initial=0.0) < 0.0 or abs(p.sum() - 1.0) > 1e-6:
            raise ValidationError("class_probs must be a simplex (>= 0, sum 1 within 1e-6)")

    @property
    def best_class(self) -> int:
        return int(np.argmax(self.class_probs))


@dataclass(frozen=True)
class MatchQuery:
    """Everything a scorer may consult for one anchor."""

    candidates: CandidateSet
    patch: AggregatedPatch
    anchor_xy: tuple[float, float]  # image px (as detected)
    candidate_xy: np.ndarray  # (len(neighbors), 2) image px
    crop_center: tuple[int, int]  # feature-res cell (cx, cy) of the crop center
    stride: int
    incoming_dir: tuple[float, float] | None = None  # unit vector, image frame


def topk_neighbors(
    vertices: Sequence[PixelPoint] | np.ndarray,
    anchor: int,
    k: int,
    exclude: frozenset[int] | set[int] | None = None,
) -> CandidateSet:
    """K nearest vertices by Euclidean distance; ties by (distance, y, x).

    ``exclude`` removes already-visited vertices from consideration when the
    caller traces sequentially; the anchor itself is always excluded.
    """
    xy = _as_xy(vertices)
    n = xy.shape[0]
    if not 0 <= anchor < n:
        raise ValidationError(f"anchor {anchor} out of range for {n} vertices")
    ax, ay = xy[anchor]
    order = []
    for i in range(n):
        if i == anchor or (exclude is not None and i in exclude):
            continue
        d = math.hypot(xy[i, 0] - ax, xy[i, 1] - ay)
        order.append((d, xy[i, 1], xy[i, 0], i))
    order.sort()
    chosen = tuple((i, d) for d, _, _, i in order[:k])
    return CandidateSet(anchor=anchor, neighbors=chosen, padding=k - len(chosen))


def _as_xy(vertices: Sequence[PixelPoint] | np.ndarray) -> np.ndarray:
    if isinstance(vertices, np.ndarray):
        return np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    return np.array([(p.x, p.y) for p in vertices], dtype=np.float64).reshape(-1, 2)


def crop_window(plane_shape: tuple[int, int], center: tuple[int, int], size: int):
    """Slices mapping an S x S window centered at (cx, cy) onto a plane.

    Returns ((dst_rows, dst_cols), (src_rows, src_cols)); regions outside
    the plane stay zero in the destination.
    """
    gh, gw = plane_shape
    cx, cy = center
    half = size // 2
    r0, r1 = cy - half, cy + half
    c0, c1 = cx - half, cx + half
    sr0, sr1 = max(r0, 0), min(r1, gh)
    sc0, sc1 = max(c0, 0), min(c1, gw)
    if sr0 >= sr1 or sc0 >= sc1:
        return (slice(0, 0), slice(0, 0)), (slice(0, 0), slice(0, 0))
    return (
        (slice(sr0 - r0, sr1 - r0), slice(sc0 - c0, sc1 - c0)),
        (slice(sr0, sr1), slice(sc0, sc1)),
    )


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def aggregate_patch(
    seg: np.ndarray,
    features: np.ndarray,
    vertex_maps: np.ndarray,
    candidates: CandidateSet,
    cfg: MatchConfig,
    anchor_xy_feat: tuple[float, float],
) -> AggregatedPatch:
    """Concatenate and crop evidence channels around one anchor.

    seg: (H', W'); features: (H', W', c_feat); vertex_maps: (n, H', W'),
    one per scene vertex.  anchor_xy_feat is the anchor position at feature
    resolution; the crop is centered at its rounded cell, zero-padded at
    the borders.
    """
    seg = np.asarray(seg, dtype=np.float32)
    features = np.asarray(features, dtype=np.float32)
    vertex_maps = np.asarray(vertex_maps, dtype=np.float32)
    if seg.ndim != 2:
        raise ValidationError(f"seg must be 2-D, got {seg.shape}")
    if features.shape != (*seg.shape, cfg.c_feat):
        raise ValidationError(f"features shape {features.shape} != {(*seg.shape, cfg.c_feat)}")
    if vertex_maps.ndim != 3 or vertex_maps.shape[1:] != seg.shape:
        raise ValidationError(f"vertex_maps shape {vertex_maps.shape} incompatible with seg {seg.shape}")

    s = cfg.crop_size
    center = (round_half_up(anchor_xy_feat[0]), round_half_up(anchor_xy_feat[1]))
    (dst, src) = crop_window(seg.shape, center, s)
    grid = np.zeros((s, s, cfg.patch_channels), dtype=np.float32)
    grid[dst[0], dst[1], 0] = seg[src[0], src[1]]
    grid[dst[0], dst[1], 1] = vertex_maps[candidates.anchor][src[0], src[1]]
    for slot, (idx, _) in enumerate(candidates.neighbors):
        grid[dst[0], dst[1], 2 + slot] = vertex_maps[idx][src[0], src[1]]
    grid[dst[0], dst[1], 2 + cfg.k :] = features[src[0], src[1], :]
    return AggregatedPatch(grid)


def build_query(
    vertices: Sequence[PixelPoint] | np.ndarray,
    anchor: int,
    seg: np.ndarray,
    features: np.ndarray,
    vertex_maps: np.ndarray,
    cfg: MatchConfig,
    stride: int,
    incoming_dir: tuple[float, float] | None = None,
    exclude: frozenset[int] | None = None,
) -> MatchQuery:
    """Assemble the candidate set and aggregated patch for one anchor."""
    xy = _as_xy(vertices)
    candidates = topk_neighbors(xy, anchor, cfg.k, exclude)
    anchor_xy = (float(xy[anchor, 0]), float(xy[anchor, 1]))
    anchor_feat = (anchor_xy[0] / stride, anchor_xy[1] / stride)
    patch = aggregate_patch(seg, features, vertex_maps, candidates, cfg, anchor_feat)
    candidate_xy = np.array([[xy[i, 0], xy[i, 1]] for i, _ in candidates.neighbors], dtype=np.float64).reshape(
        -1, 2
    )
    center = (round_half_up(anchor_feat[0]), round_half_up(anchor_feat[1]))
    return MatchQuery(
        candidates=candidates,
        patch=patch,
        anchor_xy=anchor_xy,
        candidate_xy=candidate_xy,
        crop_center=center,
        stride=stride,
        incoming_dir=incoming_dir,
    )
