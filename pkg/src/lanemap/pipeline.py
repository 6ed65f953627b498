"""Stage wiring: scene -> detected vertices -> match queries -> polylines.

The first stage is simulated faithfully: ground-truth vertices are encoded
to per-vertex heatmaps and decoded back, so detected positions carry the
true quantization behavior (exact with offsets, cell centers without).
Channel order keeps a 1:1 correspondence between detected and ground-truth
vertices, which supplies labels for training and metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
import numpy as np

from .errors import ValidationError
from .geom import PixelPoint
from .heatmap import HeatmapConfig, HeatmapMode, decode_peaks, encode_vertices
from .linking import VertexGraph, build_polylines
from .matching import CandidateSet, MatchConfig, MatchDecision, MatchQuery, build_query
from .scorers import OracleScorer, Scorer, TrainExample, make_train_example, score_queries
from .synth import SyntheticScene


@dataclass(frozen=True)
class AnchorTruth:
    """Ground truth for one anchor: its class slot and true location."""

    true_slot: int | None  # None: successor exists but is outside the top-K
    has_successor: bool
    true_location: tuple[float, float]


@dataclass(frozen=True)
class SceneQueries:
    detected: np.ndarray  # (n, 2) detected vertex positions, image px
    queries: list[MatchQuery]
    candidates: list[CandidateSet]
    truths: list[AnchorTruth]


@dataclass(frozen=True)
class PipelineResult:
    detected: np.ndarray
    candidates: list[CandidateSet]
    decisions: list[MatchDecision]
    graph: VertexGraph
    chains: list[list[int]]
    polylines: list[list[tuple[float, float]]]  # corrected locations along each chain
    truths: list[AnchorTruth]


def downsample_mean(arr: np.ndarray, stride: int) -> np.ndarray:
    """Mean-pool by a stride, zero-padding ragged edges."""
    a = np.asarray(arr, dtype=np.float32)
    h, w = a.shape[:2]
    gh = -(-h // stride)
    gw = -(-w // stride)
    ph, pw = gh * stride - h, gw * stride - w
    if ph or pw:
        a = np.pad(a, [(0, ph), (0, pw)] + [(0, 0)] * (a.ndim - 2))
    if a.ndim == 2:
        return a.reshape(gh, stride, gw, stride).mean(axis=(1, 3))
    return a.reshape(gh, stride, gw, stride, a.shape[2]).mean(axis=(1, 3))


def detect_vertices(
    scene: SyntheticScene, hm_cfg: HeatmapConfig, use_offsets: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Encode + decode the scene's vertices; returns positions and vertex maps.

    Positions come back in channel order, so detected[i] corresponds to
    ground-truth vertex i.
    """
    n = scene.vertices.shape[0]
    gh, gw = hm_cfg.grid_shape(scene.annotation.width, scene.annotation.height)
    if n == 0:
        return np.zeros((0, 2)), np.zeros((0, gh, gw), dtype=np.float32)
    cfg = replace(hm_cfg, mode=HeatmapMode.PER_VERTEX_CHANNEL, c_vert=n)
    points = [PixelPoint(float(x), float(y)) for x, y in scene.vertices]
    hm, off = encode_vertices(points, cfg, scene.annotation.width, scene.annotation.height)
    decoded = decode_peaks(hm, off if use_offsets else None, cfg)
    if len(decoded) != n:
        raise ValidationError(f"decoded {len(decoded)} peaks for {n} vertices")
    detected = np.array([[p.x, p.y] for p, _ in decoded], dtype=np.float64)
    vertex_maps = np.ascontiguousarray(hm.grid.transpose(2, 0, 1))
    return detected, vertex_maps


@dataclass(frozen=True)
class StageOne:
    """First-stage outputs: detections plus pooled evidence planes."""

    detected: np.ndarray  # (n, 2) image px
    vertex_maps: np.ndarray  # (n, H', W')
    seg: np.ndarray  # (H', W')
    features: np.ndarray  # (H', W', c_feat)


def run_stage_one(scene: SyntheticScene, hm_cfg: HeatmapConfig, use_offsets: bool) -> StageOne:
    detected, vertex_maps = detect_vertices(scene, hm_cfg, use_offsets)
    stride = hm_cfg.stride
    return StageOne(
        detected=detected,
        vertex_maps=vertex_maps,
        seg=downsample_mean(scene.seg_mask.grid, stride),
        features=downsample_mean(scene.features, stride),
    )


def build_scene_queries(
    scene: SyntheticScene,
    match_cfg: MatchConfig,
    hm_cfg: HeatmapConfig,
    use_offsets: bool = True,
    stage_one: StageOne | None = None,
) -> SceneQueries:
    """Detected vertices, per-anchor queries, and aligned ground truth."""
    if scene.features.shape[2] != match_cfg.c_feat:
        raise ValidationError(
            f"scene has {scene.features.shape[2]} feature channels, config expects {match_cfg.c_feat}"
        )
    if stage_one is None:
        stage_one = run_stage_one(scene, hm_cfg, use_offsets)
    detected = stage_one.detected
    vertex_maps = stage_one.vertex_maps
    stride = hm_cfg.stride
    seg = stage_one.seg
    feats = stage_one.features

    queries: list[MatchQuery] = []
    candidates: list[CandidateSet] = []
    truths: list[AnchorTruth] = []
    for g in range(detected.shape[0]):
        query = build_query(detected, g, seg, feats, vertex_maps, match_cfg, stride)
        queries.append(query)
        candidates.append(query.candidates)
        successor = scene.next_vertex.get(g)
        if successor is None:
            slot: int | None = match_cfg.terminal_class
            has_successor = False
        else:
            slot = query.candidates.slot_of(successor)
            has_successor = True
        truths.append(
            AnchorTruth(
                true_slot=slot,
                has_successor=has_successor,
                true_location=(float(scene.vertices[g, 0]), float(scene.vertices[g, 1])),
            )
        )
    return SceneQueries(detected, queries, candidates, truths)


def oracle_for_scene(scene: SyntheticScene, cfg: MatchConfig) -> OracleScorer:
    return OracleScorer(scene.next_vertex, scene.vertices, cfg)


def run_pipeline(
    scene: SyntheticScene,
    scorer: Scorer,
    match_cfg: MatchConfig,
    hm_cfg: HeatmapConfig,
    use_offsets: bool = True,
) -> PipelineResult:
    """Full second stage: score every anchor, link, and extract polylines.

    Polyline geometry uses each vertex's corrected location from its own
    decision.
    """
    sq = build_scene_queries(scene, match_cfg, hm_cfg, use_offsets)
    decisions = score_queries(scorer, sq.queries)
    points = [PixelPoint(float(x), float(y)) for x, y in sq.detected]
    graph, chains = build_polylines(points, decisions, sq.candidates, match_cfg.terminal_class)
    polylines = [[decisions[i].corrected_location for i in chain] for chain in chains]
    return PipelineResult(sq.detected, sq.candidates, decisions, graph, chains, polylines, sq.truths)


def matcher_examples(
    scene: SyntheticScene, match_cfg: MatchConfig, hm_cfg: HeatmapConfig
) -> list[TrainExample]:
    """Supervised examples for the trainable scorer.

    Anchors are the quantized (offset-free) detections; targets are the
    true class slot and the true vertex location.  Anchors whose successor
    falls outside the top-K are skipped.
    """
    sq = build_scene_queries(scene, match_cfg, hm_cfg, use_offsets=False)
    examples: list[TrainExample] = []
    for query, truth in zip(sq.queries, sq.truths):
        if truth.true_slot is None:
            continue
        examples.append(make_train_example(query, truth.true_slot, truth.true_location, match_cfg))
    return examples


def run_matcher(
    scene: SyntheticScene,
    scorer: Scorer,
    match_cfg: MatchConfig,
    hm_cfg: HeatmapConfig,
) -> tuple[list[MatchDecision], list[AnchorTruth], float]:
    """Score one scene's anchors (offset-free detections).

    The returned wall time covers the matching stage only (candidate
    search, aggregation, scoring), not the first-stage encode/decode.
    """
    stage_one = run_stage_one(scene, hm_cfg, use_offsets=False)
    start = time.perf_counter()
    sq = build_scene_queries(scene, match_cfg, hm_cfg, use_offsets=False, stage_one=stage_one)
    decisions = score_queries(scorer, sq.queries)
    elapsed = time.perf_counter() - start
    return decisions, sq.truths, elapsed
