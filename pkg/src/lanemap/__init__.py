"""Desk-scale vectorized lane mapping toolkit.

Geo-referenced polyline lane annotations, Gaussian vertex-heatmap encoding
and decoding, top-K next-vertex matching with pluggable scorers, polyline
graph reconstruction, and distance-thresholded evaluation.
"""

from .dataset import (
    AnnotatedLane,
    ImageAnnotation,
    LaneMask,
    Split,
    SplitAssignment,
    load_annotations,
    rasterize_mask,
    save_annotations,
    split_dataset,
)
from .errors import ParseError, ValidationError
from .evaluation import EvalConfig, EvalReport, MatcherReport, ablate_k, evaluate, matcher_metrics
from .geom import (
    GeoPoint,
    GeoTransform,
    Lane,
    LaneAttributes,
    LaneMap,
    PixelPoint,
    geo_to_pixel,
    lane_length_m,
    map_stats,
    pixel_to_geo,
    project_lane,
)
from .heatmap import HeatmapConfig, HeatmapMode, OffsetMap, VertexHeatmaps, decode_peaks, encode_vertices
from .linking import DirectedEdge, VertexGraph, break_cycles, extract_polylines, link, resolve_conflicts
from .losses import (
    LossReport,
    cross_entropy_loss,
    focal_loss,
    grad_check,
    seg_loss,
    smooth_l1_loss,
    total_loss,
)
from .matching import AggregatedPatch, CandidateSet, MatchConfig, MatchDecision, aggregate_patch, topk_neighbors
from .pipeline import run_pipeline
from .scorers import GeometricScorer, OracleScorer, Scorer, TinyScorer, tiny_scorer_train
from .synth import SynthConfig, SyntheticScene, gen_dataset, gen_scene

__version__ = "0.1.0"
