"""Distance-thresholded polyline metrics and matcher-ablation reports.

Geometry metrics follow the correctness/completeness protocol: polylines
are resampled at a fixed arc-length interval, and a sample point counts as
correct when it lies within the threshold of the opposing geometry
(point-to-segment distance, minimized over all segments).  Precision
samples the prediction against ground truth; recall is the exact mirror.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .heatmap import HeatmapConfig
from .matching import MatchConfig, MatchDecision
from .pipeline import AnchorTruth, matcher_examples, run_matcher
from .scorers import GeometricScorer, Scorer, TrainExample, tiny_scorer_train
from .synth import SyntheticScene

Polyline = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = (2.0, 5.0, 10.0)
    sample_interval: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise ValidationError("thresholds must be positive")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValidationError("thresholds must be ascending")
        if self.sample_interval <= 0:
            raise ValidationError("sample_interval must be positive")


@dataclass(frozen=True)
class ThresholdScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    scores: dict[float, ThresholdScores]

    def csv(self) -> str:
        lines = ["threshold,precision,recall,f1"]
        for tau, s in self.scores.items():
            lines.append(f"{tau:g},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f}")
        return "\n".join(lines) + "\n"

    def text(self) -> str:
        header = f"{'threshold':>10} {'precision':>10} {'recall':>10} {'f1':>10}"
        rows = [
            f"{tau:>10g} {s.precision:>10.4f} {s.recall:>10.4f} {s.f1:>10.4f}"
            for tau, s in self.scores.items()
        ]
        return "\n".join([header, *rows]) + "\n"


def sample_polyline(poly: Polyline | np.ndarray, delta: float) -> np.ndarray:
    """Arc-length resampling at spacing delta, always keeping both endpoints."""
    pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValidationError(f"polyline needs >= 2 vertices, got {pts.shape[0]}")
    if delta <= 0:
        raise ValidationError("sample interval must be positive")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    stations = list(np.arange(0.0, total, delta))
    if not stations or total - stations[-1] > 1e-12:
        stations.append(total)
    out = np.empty((len(stations), 2))
    idx = 0
    for row, s in enumerate(stations):
        while idx < len(seg_len) - 1 and cum[idx + 1] < s:
            idx += 1
        t = 0.0 if seg_len[idx] == 0 else (s - cum[idx]) / seg_len[idx]
        out[row] = pts[idx] + seg[idx] * min(max(t, 0.0), 1.0)
    return out


def _segments(polylines: Sequence[Polyline]) -> np.ndarray:
    rows = []
    for poly in polylines:
        pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        for a, b in zip(pts, pts[1:]):
            rows.append((a[0], a[1], b[0], b[1]))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def _min_distance_to_segments(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Per-point minimum distance to any segment; inf for empty geometry."""
    if points.shape[0] == 0:
        return np.zeros(0)
    if segments.shape[0] == 0:
        return np.full(points.shape[0], np.inf)
    p = points[:, None, :]
    a = segments[None, :, 0:2]
    d = segments[None, :, 2:4] - a
    len2 = (d**2).sum(axis=2)
    t = ((p - a) * d).sum(axis=2)
    with np.errstate(invalid="ignore"):
        t = np.where(len2 > 0, t / np.where(len2 > 0, len2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, :, None] * d
    dist = np.hypot(p[:, :, 0] - closest[:, :, 0], p[:, :, 1] - closest[:, :, 1])
    return dist.min(axis=1)


def coverage_distances(
    from_polys: Sequence[Polyline], to_polys: Sequence[Polyline], delta: float
) -> np.ndarray:
    """Distances from resampled points of from_polys to the to_polys geometry."""
    samples = [sample_polyline(p, delta) for p in from_polys if len(p) >= 2]
    if not samples:
        return np.zeros(0)
    points = np.concatenate(samples, axis=0)
    return _min_distance_to_segments(points, _segments(to_polys))


def evaluate(
    pred: Sequence[Polyline],
    gt: Sequence[Polyline],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Precision/recall/F1 at each threshold; empty sides score zero."""
    d_pred = coverage_distances(pred, gt, cfg.sample_interval)
    d_gt = coverage_distances(gt, pred, cfg.sample_interval)
    scores: dict[float, ThresholdScores] = {}
    for tau in cfg.thresholds:
        precision = float((d_pred <= tau).mean()) if d_pred.size else 0.0
        recall = float((d_gt <= tau).mean()) if d_gt.size else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores[tau] = ThresholdScores(precision, recall, f1)
    return EvalReport(scores)


# --------------------------------------------------------------------------
# Matcher metrics (classification / regression / runtime)


@dataclass(frozen=True)
class MatcherReport:
    f1_class: float  # macro F1 over class slots, percent
    mse_position: float  # mean squared Euclidean error, px^2
    runtime_class: float  # mean seconds per image
    oracle_coverage: float = 1.0

    def row(self) -> tuple[float, float, float, float]:
        return (self.f1_class, self.mse_position, self.runtime_class, self.oracle_coverage)


def macro_f1(true_labels: Sequence[int | None], pred_labels: Sequence[int]) -> float:
    """Macro F1 over every class observed in truth or prediction.

    A None truth marks an anchor whose successor was outside the candidate
    set: no prediction can be correct there, so it counts against the
    predicted class's precision without adding a recallable instance.
    """
    classes = sorted(
        {c for c in true_labels if c is not None} | set(pred_labels)
    )
    if not classes:
        return 1.0
    f1s = []
    for c in classes:
        tp = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p == c)
        fp = sum(1 for t, p in zip(true_labels, pred_labels) if t != c and p == c)
        fn = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(f1s))


def matcher_metrics(
    decisions: Sequence[MatchDecision],
    truths: Sequence[AnchorTruth],
    wall_times: Sequence[float],
) -> MatcherReport:
    if len(decisions) != len(truths):
        raise ValidationError(f"{len(decisions)} decisions vs {len(truths)} truths")
    pred_labels = [d.best_class for d in decisions]
    true_labels = [t.true_slot for t in truths]
    f1 = macro_f1(true_labels, pred_labels) * 100.0
    if decisions:
        sq_err = [
            (d.corrected_location[0] - t.true_location[0]) ** 2
            + (d.corrected_location[1] - t.true_location[1]) ** 2
            for d, t in zip(decisions, truths)
        ]
        mse = float(np.mean(sq_err))
    else:
        mse = 0.0
    runtime = float(np.mean(wall_times)) if len(wall_times) else 0.0
    with_successor = [t for t in truths if t.has_successor]
    covered = sum(1 for t in with_successor if t.true_slot is not None)
    coverage = covered / len(with_successor) if with_successor else 1.0
    return MatcherReport(f1, mse, runtime, coverage)


# --------------------------------------------------------------------------
# K ablation

ScorerFactory = Callable[[MatchConfig, Callable[[], list[TrainExample]]], Scorer]


def geometric_factory(cfg: MatchConfig, _examples: Callable[[], list[TrainExample]]) -> Scorer:
    return GeometricScorer(cfg)


def tiny_factory(epochs: int = 12, lr: float = 0.05, batch_size: int = 32, seed: int = 0) -> ScorerFactory:
    def build(cfg: MatchConfig, examples: Callable[[], list[TrainExample]]) -> Scorer:
        scorer, _ = tiny_scorer_train(
            examples(), cfg, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed
        )
        return scorer

    return build


@dataclass(frozen=True)
class KAblation:
    k: int
    report: MatcherReport


def ablate_k(
    train_scenes: Sequence[SyntheticScene],
    eval_scenes: Sequence[SyntheticScene],
    k_values: Sequence[int],
    base_cfg: MatchConfig,
    hm_cfg: HeatmapConfig,
    make_scorer: ScorerFactory = geometric_factory,
) -> list[KAblation]:
    """Re-run the matching stage per K and report Table-style metrics.

    The factory receives a lazy provider for training examples so scorers
    that need no training skip that cost.
    """
    if not eval_scenes:
        raise ValidationError("eval scene set is empty")
    results: list[KAblation] = []
    for k in k_values:
        cfg_k = replace(base_cfg, k=k)

        def provider(cfg_k: MatchConfig = cfg_k) -> list[TrainExample]:
            examples: list[TrainExample] = []
            for scene in train_scenes:
                examples.extend(matcher_examples(scene, cfg_k, hm_cfg))
            return examples

        scorer = make_scorer(cfg_k, provider)
        decisions: list[MatchDecision] = []
        truths: list[AnchorTruth] = []
        times: list[float] = []
        for scene in eval_scenes:
            d, t, elapsed = run_matcher(scene, scorer, cfg_k, hm_cfg)
            decisions.extend(d)
            truths.extend(t)
            times.append(elapsed)
        results.append(KAblation(k, matcher_metrics(decisions, truths, times)))
    return results


def ablation_table(results: Sequence[KAblation]) -> str:
    header = f"{'K':>4} {'F1_class':>9} {'MSE_position':>13} {'Runtime_class':>14} {'coverage':>9}"
    rows = [
        f"{r.k:>4d} {r.report.f1_class:>9.1f} {r.report.mse_position:>13.2f} "
        f"{r.report.runtime_class:>14.4f} {r.report.oracle_coverage:>9.3f}"
        for r in results
    ]
    return "\n".join([header, *rows]) + "\n"


def ablation_csv(results: Sequence[KAblation]) -> str:
    lines = ["k,f1_class,mse_position,runtime_class,oracle_coverage"]
    lines += [
        f"{r.k},{r.report.f1_class:.4f},{r.report.mse_position:.6f},"
        f"{r.report.runtime_class:.6f},{r.report.oracle_coverage:.6f}"
        for r in results
    ]
    return "\n".join(lines) + "\n"
