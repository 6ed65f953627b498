"""Deterministic synthetic scenes: smooth lanes, masks, features, labels.

Each lane is a bounded-turn heading walk: successive vertices are placed a
random in-range distance apart while the heading drifts by at most the
configured turn angle, which samples a tangent-continuous curve at the
vertex spacing.  Lanes are rejection-sampled to keep a minimum pairwise
separation, so top-K candidate geometry stays realistic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .dataset import (
    AnnotatedLane,
    ImageAnnotation,
    LaneMask,
    SplitAssignment,
    load_annotations,
    load_mask_png,
    rasterize_mask,
    save_annotations,
    save_mask_png,
    split_dataset,
)
from .errors import ValidationError
from .geom import GeoTransform, LaneAttributes, PixelPoint
from .tensorio import load_tensors, save_tensors

log = logging.getLogger(__name__)

SCENE_GEO_TRANSFORM = GeoTransform(1e-5, 0.0, 0.0, 0.0, -1e-5, 0.0)
FEATURE_CHANNELS = 4  # blurred mask x2 scales + normalized x/y coordinates


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    width: int = 320
    height: int = 320
    n_lanes_min: int = 2
    n_lanes_max: int = 6
    spacing_min: float = 15.0
    spacing_max: float = 40.0
    min_separation: float = 12.0
    max_turn_deg: float = 18.0
    noise: float = 0.0
    stroke_width: float = 5.0
    margin: float = 10.0
    image_id: str = ""

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("canvas size must be positive")
        if not 0 <= self.n_lanes_min <= self.n_lanes_max:
            raise ValidationError("invalid lane count range")
        if not 0 < self.spacing_min <= self.spacing_max:
            raise ValidationError("invalid spacing range")
        if self.min_separation <= 0:
            raise ValidationError("min_separation must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValidationError("noise must be in [0, 1]")


@dataclass(frozen=True)
class SyntheticScene:
    annotation: ImageAnnotation
    seg_mask: LaneMask  # noise-corrupted at noise > 0
    features: np.ndarray  # float32 (H, W, FEATURE_CHANNELS)
    vertices: np.ndarray = field(repr=False, default=None)  # (n, 2) all lanes concatenated
    next_vertex: dict[int, int | None] = field(default_factory=dict)

    @property
    def image_id(self) -> str:
        return self.annotation.image_id

    def gt_polylines(self) -> list[list[tuple[float, float]]]:
        return [[(p.x, p.y) for p in lane.pixel_vertices] for lane in self.annotation.lanes]

    def gt_chains(self) -> list[list[int]]:
        chains: list[list[int]] = []
        offset = 0
        for lane in self.annotation.lanes:
            n = len(lane.pixel_vertices)
            chains.append(list(range(offset, offset + n)))
            offset += n
        return chains


def scene_labels(annotation: ImageAnnotation) -> tuple[np.ndarray, dict[int, int | None]]:
    """Global vertex array and successor labels derived from polyline order."""
    coords: list[tuple[float, float]] = []
    successor: dict[int, int | None] = {}
    for lane in annotation.lanes:
        start = len(coords)
        n = len(lane.pixel_vertices)
        coords.extend((p.x, p.y) for p in lane.pixel_vertices)
        for i in range(n):
            g = start + i
            successor[g] = g + 1 if i + 1 < n else None
    return np.array(coords, dtype=np.float64).reshape(-1, 2), successor


def _sample_polyline_points(pts: np.ndarray, delta: float) -> np.ndarray:
    """Dense arc-length samples used for the separation checks."""
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        seg = b - a
        length = float(np.hypot(*seg))
        n = max(1, int(math.ceil(length / delta)))
        for i in range(1, n + 1):
            out.append(a + seg * (i / n))
    return np.asarray(out)


def _walk_lane(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray | None:
    x = rng.uniform(cfg.margin, cfg.width - cfg.margin)
    y = rng.uniform(cfg.margin, cfg.height - cfg.margin)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    max_turn = math.radians(cfg.max_turn_deg)
    target = int(rng.integers(5, 14))
    pts = [(x, y)]
    for _ in range(target - 1):
        step = rng.uniform(cfg.spacing_min, cfg.spacing_max)
        heading += rng.uniform(-max_turn, max_turn)
        nx = x + step * math.cos(heading)
        ny = y + step * math.sin(heading)
        if not (cfg.margin <= nx <= cfg.width - cfg.margin and cfg.margin <= ny <= cfg.height - cfg.margin):
            break
        pts.append((nx, ny))
        x, y = nx, ny
    if len(pts) < 2:
        return None
    return np.asarray(pts)


def _self_separated(pts: np.ndarray, cfg: SynthConfig) -> bool:
    samples = _sample_polyline_points(pts, 1.0)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(samples, axis=0).T))])
    window = 1.5 * cfg.spacing_max
    d2 = ((samples[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
    far_in_arc = np.abs(arc[:, None] - arc[None, :]) > window
    close = d2 < cfg.min_separation**2
    return not bool((far_in_arc & close).any())


def _separated_from(pts: np.ndarray, others: list[np.ndarray], cfg: SynthConfig) -> bool:
    if not others:
        return True
    mine = _sample_polyline_points(pts, 1.0)
    for other in others:
        theirs = _sample_polyline_points(other, 1.0)
        d2 = ((mine[:, None, :] - theirs[None, :, :]) ** 2).sum(axis=2)
        if d2.min() < cfg.min_separation**2:
            return False
    return True


def _corrupt_mask(grid: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    if noise == 0.0:
        return grid.copy()
    out = grid.copy()
    lane = grid == 1
    background = ~lane
    drop = rng.random(grid.shape) < noise * 0.5
    add = rng.random(grid.shape) < noise * 0.02
    out[lane & drop] = 0
    out[background & add] = 1
    return out


def _build_features(noisy_mask: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    h, w = noisy_mask.shape
    m = noisy_mask.astype(np.float32)
    features = np.empty((h, w, FEATURE_CHANNELS), dtype=np.float32)
    features[:, :, 0] = gaussian_filter(m, sigma=2.0)
    features[:, :, 1] = gaussian_filter(m, sigma=5.0)
    features[:, :, 2] = (np.arange(w, dtype=np.float32) / w)[None, :]
    features[:, :, 3] = (np.arange(h, dtype=np.float32) / h)[:, None]
    return features


_ATTRIBUTE_CHOICES = (
    ("single", "white", "solid"),
    ("single", "white", "dash"),
    ("single", "yellow", "solid"),
    ("double", "yellow", "solid"),
    ("double", "white", "dash"),
)


def gen_scene(cfg: SynthConfig) -> SyntheticScene:
    """Deterministic scene from cfg.seed; lane count drops after 1000 misses."""
    rng = np.random.default_rng(cfg.seed)
    n_lanes = int(rng.integers(cfg.n_lanes_min, cfg.n_lanes_max + 1))
    placed: list[np.ndarray] = []
    attempts = 0
    while len(placed) < n_lanes:
        attempts += 1
        if attempts > 1000:
            log.warning(
                "scene %s: placed %d of %d lanes after 1000 attempts; reducing lane count",
                cfg.image_id or cfg.seed,
                len(placed),
                n_lanes,
            )
            break
        pts = _walk_lane(rng, cfg)
        if pts is None:
            continue
        if not _self_separated(pts, cfg):
            continue
        if not _separated_from(pts, placed, cfg):
            continue
        placed.append(pts)

    lanes = []
    for j, pts in enumerate(placed):
        form, color, cont = _ATTRIBUTE_CHOICES[int(rng.integers(0, len(_ATTRIBUTE_CHOICES)))]
        lanes.append(
            AnnotatedLane(
                lane_id=f"lane{j}",
                road_id=f"road{j // 2}",
                attributes=LaneAttributes(form, color, cont),
                pixel_vertices=tuple(PixelPoint(float(x), float(y)) for x, y in pts),
            )
        )
    annotation = ImageAnnotation(
        image_id=cfg.image_id or f"synth_{cfg.seed:010d}",
        geo_transform=SCENE_GEO_TRANSFORM,
        lanes=tuple(lanes),
        width=cfg.width,
        height=cfg.height,
    )
    clean = rasterize_mask(annotation, cfg.stroke_width)
    noisy = _corrupt_mask(clean.grid, cfg.noise, rng)
    features = _build_features(noisy, cfg)
    vertices, successor = scene_labels(annotation)
    return SyntheticScene(
        annotation=annotation,
        seg_mask=LaneMask(noisy, cfg.stroke_width),
        features=features,
        vertices=vertices,
        next_vertex=successor,
    )


def scene_seeds(cfg: SynthConfig, n_scenes: int) -> list[int]:
    """Deterministic per-scene seed stream derived from the master seed."""
    if n_scenes < 1:
        raise ValidationError("n_scenes must be >= 1")
    state = np.random.SeedSequence(cfg.seed).generate_state(n_scenes, dtype=np.uint64)
    return [int(s) for s in state]


def scene_config(cfg: SynthConfig, index: int, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed, image_id=f"synth_{cfg.seed}_{index:05d}")


def gen_dataset(cfg: SynthConfig, n_scenes: int) -> tuple[list[SyntheticScene], SplitAssignment]:
    """n independent scenes plus a 7:2:1 split over their image ids."""
    scenes = [gen_scene(scene_config(cfg, i, s)) for i, s in enumerate(scene_seeds(cfg, n_scenes))]
    assignment = split_dataset([s.image_id for s in scenes], seed=cfg.seed)
    return scenes, assignment


# --------------------------------------------------------------------------
# Persistence: annotation JSON + mask PNG + feature tensor


def save_scene(scene: SyntheticScene, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = scene.image_id
    save_annotations([scene.annotation], out / f"{base}.json")
    save_mask_png(scene.seg_mask, out / f"{base}_mask.png")
    save_tensors(out / f"{base}_features.bin", [(scene.features, 0)])


def load_scene(scene_dir: str | Path, image_id: str) -> SyntheticScene:
    base = Path(scene_dir) / image_id
    [annotation] = load_annotations(base.with_suffix(".json"))
    mask = load_mask_png(Path(f"{base}_mask.png"))
    features, _ = load_tensors(Path(f"{base}_features.bin"))[0]
    vertices, successor = scene_labels(annotation)
    return SyntheticScene(
        annotation=annotation,
        seg_mask=mask,
        features=features,
        vertices=vertices,
        next_vertex=successor,
    )


def list_scene_ids(scene_dir: str | Path) -> list[str]:
    return sorted(p.stem for p in Path(scene_dir).glob("*.json"))
