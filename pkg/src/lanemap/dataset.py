"""Annotation serialization, mask rasterization, and deterministic splitting.

Annotation documents are UTF-8 JSON, one object per image:

    {
      "image_id": "...",
      "width": 1280,
      "height": 1280,
      "geo_transform": [a, b, c, d, e, f],
      "lanes": [
        {
          "lane_id": "...",
          "road_id": "...",
          "attributes": {"line_form": "single", "color": "white", "continuity": "solid"},
          "vertices": [[x, y], ...]
        }
      ]
    }

A file may hold a single object or an array of them; a directory is read as
all ``*.json`` files in name order.  Serialization uses sorted keys and a
fixed layout, so re-serializing a loaded document is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ParseError, ValidationError
from .geom import (
    GeoPoint,
    GeoTransform,
    Lane,
    LaneAttributes,
    LaneMap,
    PixelPoint,
    pixel_to_geo,
)

DEFAULT_IMAGE_SIZE = 1280
DEFAULT_STROKE_WIDTH = 5.0


@dataclass(frozen=True)
class AnnotatedLane:
    """A lane in one image's pixel frame; vertex order is the lane direction."""

    lane_id: str
    road_id: str
    attributes: LaneAttributes
    pixel_vertices: tuple[PixelPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixel_vertices", tuple(self.pixel_vertices))


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    geo_transform: GeoTransform
    lanes: tuple[AnnotatedLane, ...] = field(default_factory=tuple)
    width: int = DEFAULT_IMAGE_SIZE
    height: int = DEFAULT_IMAGE_SIZE

    def __post_init__(self) -> None:
        object.__setattr__(self, "lanes", tuple(self.lanes))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image {self.image_id!r}: size {self.width}x{self.height} must be positive")
        seen: set[str] = set()
        for lane in self.lanes:
            where = f"image {self.image_id!r}, lane {lane.lane_id!r}"
            if lane.lane_id in seen:
                raise ValidationError(f"{where}: duplicate lane_id")
            seen.add(lane.lane_id)
            if len(lane.pixel_vertices) < 2:
                raise ValidationError(f"{where}: {len(lane.pixel_vertices)} vertices, need >= 2")
            prev: PixelPoint | None = None
            for i, p in enumerate(lane.pixel_vertices):
                if not (0.0 <= p.x <= self.width and 0.0 <= p.y <= self.height):
                    raise ValidationError(f"{where}: vertex {i} at ({p.x}, {p.y}) outside image bounds")
                if prev is not None and p == prev:
                    raise ValidationError(f"{where}: repeated vertex at position {i}")
                prev = p

    def vertex_count(self) -> int:
        return sum(len(l.pixel_vertices) for l in self.lanes)


@dataclass(frozen=True)
class LaneMask:
    grid: np.ndarray  # uint8 (height, width), values in {0, 1}
    stroke_width: float

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=np.uint8)
        object.__setattr__(self, "grid", g)
        if g.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {g.shape}")
        if g.max(initial=0) > 1:
            raise ValidationError("mask values must be 0 or 1")


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SplitAssignment:
    mapping: dict[str, Split]
    seed: int

    def ids(self, split: Split) -> list[str]:
        return sorted(i for i, s in self.mapping.items() if s is split)

    def sizes(self) -> tuple[int, int, int]:
        return (
            sum(1 for s in self.mapping.values() if s is Split.TRAIN),
            sum(1 for s in self.mapping.values() if s is Split.VAL),
            sum(1 for s in self.mapping.values() if s is Split.TEST),
        )


# --------------------------------------------------------------------------
# JSON (de)serialization


def annotation_to_doc(ann: ImageAnnotation) -> dict:
    t = ann.geo_transform
    return {
        "image_id": ann.image_id,
        "width": ann.width,
        "height": ann.height,
        "geo_transform": [t.a, t.b, t.c, t.d, t.e, t.f],
        "lanes": [
            {
                "lane_id": l.lane_id,
                "road_id": l.road_id,
                "attributes": {
                    "line_form": l.attributes.line_form.value,
                    "color": l.attributes.color.value,
                    "continuity": l.attributes.continuity.value,
                },
                "vertices": [[p.x, p.y] for p in l.pixel_vertices],
            }
            for l in ann.lanes
        ],
    }


def _require(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ValidationError(f"{ctx}: missing field {key!r}")
    return doc[key]


def doc_to_annotation(doc: dict) -> ImageAnnotation:
    if not isinstance(doc, dict):
        raise ValidationError(f"annotation document must be an object, got {type(doc).__name__}")
    image_id = str(_require(doc, "image_id", "annotation"))
    ctx = f"image {image_id!r}"
    width = int(doc.get("width", DEFAULT_IMAGE_SIZE))
    height = int(doc.get("height", DEFAULT_IMAGE_SIZE))
    gt = _require(doc, "geo_transform", ctx)
    if not (isinstance(gt, (list, tuple)) and len(gt) == 6):
        raise ValidationError(f"{ctx}: geo_transform must be a list of 6 numbers")
    transform = GeoTransform(*(float(v) for v in gt))
    lanes = []
    for entry in doc.get("lanes", []):
        lane_id = str(_require(entry, "lane_id", ctx))
        attrs = entry.get("attributes", {})
        try:
            attributes = LaneAttributes(
                attrs.get("line_form", "single"),
                attrs.get("color", "white"),
                attrs.get("continuity", "solid"),
            )
        except ValueError as exc:
            raise ValidationError(f"{ctx}, lane {lane_id!r}: {exc}") from exc
        vertices = tuple(
            PixelPoint(float(v[0]), float(v[1])) for v in _require(entry, "vertices", f"{ctx}, lane {lane_id!r}")
        )
        lanes.append(AnnotatedLane(lane_id, str(entry.get("road_id", "")), attributes, vertices))
    return ImageAnnotation(image_id, transform, tuple(lanes), width, height)


def dumps_annotations(anns: Sequence[ImageAnnotation]) -> str:
    """Serialize to canonical JSON (sorted keys, fixed indent, trailing newline)."""
    docs = [annotation_to_doc(a) for a in anns]
    payload: object = docs
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def save_annotations(anns: Sequence[ImageAnnotation], path: str | Path) -> None:
    Path(path).write_text(dumps_annotations(anns), encoding="utf-8")


def loads_annotations(text: str, source: str = "<string>") -> list[ImageAnnotation]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: malformed JSON: {exc}") from exc
    docs = payload if isinstance(payload, list) else [payload]
    return [doc_to_annotation(d) for d in docs]


def load_annotations(path: str | Path) -> list[ImageAnnotation]:
    """Load annotations from a JSON file or from every ``*.json`` in a directory."""
    p = Path(path)
    if p.is_dir():
        anns: list[ImageAnnotation] = []
        for child in sorted(p.glob("*.json")):
            anns.extend(loads_annotations(child.read_text(encoding="utf-8"), source=str(child)))
        return anns
    if not p.exists():
        raise FileNotFoundError(f"annotation path does not exist: {p}")
    return loads_annotations(p.read_text(encoding="utf-8"), source=str(p))


def load_lane_map(path: str | Path) -> LaneMap:
    """Region-level geo lane map: lanes with lon/lat vertices.

    Schema: {"region": str, "lanes": [{"lane_id", "road_id", "attributes",
    "vertices": [[lon, lat], ...]}]}.
    """
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: malformed JSON: {exc}") from exc
    lanes = []
    for entry in doc.get("lanes", []):
        lane_id = str(_require(entry, "lane_id", str(p)))
        attrs = entry.get("attributes", {})
        lanes.append(
            Lane(
                lane_id,
                str(entry.get("road_id", "")),
                LaneAttributes(
                    attrs.get("line_form", "single"),
                    attrs.get("color", "white"),
                    attrs.get("continuity", "solid"),
                ),
                tuple(GeoPoint(float(v[0]), float(v[1])) for v in _require(entry, "vertices", lane_id)),
            )
        )
    return LaneMap(str(doc.get("region", p.stem)), tuple(lanes))


def annotation_to_lane_map(ann: ImageAnnotation) -> LaneMap:
    """Lift pixel-space lanes back to geo space via the image's transform."""
    lanes = tuple(
        Lane(
            l.lane_id,
            l.road_id,
            l.attributes,
            tuple(pixel_to_geo(ann.geo_transform, p) for p in l.pixel_vertices),
        )
        for l in ann.lanes
    )
    return LaneMap(ann.image_id, lanes)


# --------------------------------------------------------------------------
# Rasterization


def rasterize_mask(ann: ImageAnnotation, stroke_width: float = DEFAULT_STROKE_WIDTH) -> LaneMask:
    """Binary mask: 1 where a pixel center is within stroke_width/2 of any segment.

    Pixel (row, col) has its center at (col + 0.5, row + 0.5).  Distance is
    Euclidean point-to-segment, which gives round caps and joins.
    """
    if stroke_width < 1.0:
        raise ValidationError(f"stroke_width must be >= 1, got {stroke_width}")
    h, w = ann.height, ann.width
    grid = np.zeros((h, w), dtype=np.uint8)
    radius = stroke_width / 2.0
    for lane in ann.lanes:
        pts = lane.pixel_vertices
        for p0, p1 in zip(pts, pts[1:]):
            _paint_segment(grid, p0, p1, radius)
    return LaneMask(grid, stroke_width)


def _paint_segment(grid: np.ndarray, p0: PixelPoint, p1: PixelPoint, radius: float) -> None:
    h, w = grid.shape
    # Only pixels in the segment's inflated bounding box can be hit.
    r0 = max(0, int(np.floor(min(p0.y, p1.y) - radius - 0.5)))
    r1 = min(h - 1, int(np.ceil(max(p0.y, p1.y) + radius - 0.5)))
    c0 = max(0, int(np.floor(min(p0.x, p1.x) - radius - 0.5)))
    c1 = min(w - 1, int(np.ceil(max(p0.x, p1.x) + radius - 0.5)))
    if r0 > r1 or c0 > c1:
        return
    ys = np.arange(r0, r1 + 1, dtype=np.float64) + 0.5
    xs = np.arange(c0, c1 + 1, dtype=np.float64) + 0.5
    cx, cy = np.meshgrid(xs, ys)
    dx = p1.x - p0.x
    dy = p1.y - p0.y
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        d2 = (cx - p0.x) ** 2 + (cy - p0.y) ** 2
    else:
        t = np.clip(((cx - p0.x) * dx + (cy - p0.y) * dy) / seg_len2, 0.0, 1.0)
        d2 = (cx - (p0.x + t * dx)) ** 2 + (cy - (p0.y + t * dy)) ** 2
    hit = d2 <= radius * radius
    grid[r0 : r1 + 1, c0 : c1 + 1] |= hit.astype(np.uint8)


def save_mask_png(mask: LaneMask, path: str | Path) -> None:
    """Write as 8-bit single-channel PNG: background 0, lane 255."""
    Image.fromarray(mask.grid * np.uint8(255), mode="L").save(Path(path), format="PNG")


def load_mask_png(path: str | Path, stroke_width: float = DEFAULT_STROKE_WIDTH) -> LaneMask:
    img = Image.open(Path(path)).convert("L")
    grid = (np.asarray(img) > 127).astype(np.uint8)
    return LaneMask(grid, stroke_width)


# --------------------------------------------------------------------------
# Dataset splitting


_SPLIT_ORDER = (Split.TRAIN, Split.VAL, Split.TEST)
_SPLIT_WEIGHTS = (7, 2, 1)  # out of 10


def split_sizes(n: int) -> tuple[int, int, int]:
    """Integer 7:2:1 partition of n by largest remainder (exact arithmetic)."""
    base = [(wgt * n) // 10 for wgt in _SPLIT_WEIGHTS]
    rems = [(wgt * n) % 10 for wgt in _SPLIT_WEIGHTS]
    leftover = n - sum(base)
    # Ties go to the earlier split (train, then val, then test).
    order = sorted(range(3), key=lambda i: (-rems[i], i))
    for i in range(leftover):
        base[order[i]] += 1
    return tuple(base)  # type: ignore[return-value]


def split_dataset(ids: Sequence[str], seed: int) -> SplitAssignment:
    """Deterministic 7:2:1 split by sorted per-id hash."""
    ids = list(ids)
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate ids: {dupes[:5]}")

    def key(image_id: str) -> tuple[str, str]:
        digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).hexdigest()
        return (digest, image_id)

    ranked = sorted(ids, key=key)
    n_train, n_val, _ = split_sizes(len(ids))
    mapping: dict[str, Split] = {}
    for i, image_id in enumerate(ranked):
        if i < n_train:
            mapping[image_id] = Split.TRAIN
        elif i < n_train + n_val:
            mapping[image_id] = Split.VAL
        else:
            mapping[image_id] = Split.TEST
    return SplitAssignment(mapping, seed)


def save_split_manifest(assignment: SplitAssignment, path: str | Path) -> None:
    """Write ``image_id<TAB>split`` lines, sorted by image_id."""
    lines = [f"{image_id}\t{split.value}" for image_id, split in sorted(assignment.mapping.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split_manifest(path: str | Path, seed: int = 0) -> SplitAssignment:
    mapping: dict[str, Split] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            image_id, split = line.split("\t")
            mapping[image_id] = Split(split)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad manifest line {line!r}") from exc
    return SplitAssignment(mapping, seed)
