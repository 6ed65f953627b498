"""Next-vertex scorers: ground-truth oracle, geometric baseline, trainable MLP.

A scorer turns one MatchQuery into a MatchDecision: a simplex over the K
candidate slots (plus the terminal class when enabled) and a corrected
anchor location in image pixels.  Padded candidate slots are masked to
-inf before the softmax so they receive exactly zero probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .losses import smooth_l1_grad, smooth_l1_loss, softmax
from .matching import MatchConfig, MatchDecision, MatchQuery
from .tensorio import load_tensors, save_tensors


class Scorer(Protocol):
    def evaluate(self, query: MatchQuery) -> MatchDecision: ...


def class_mask(query: MatchQuery, cfg: MatchConfig) -> np.ndarray:
    """Valid class slots for a query: real candidates plus the terminal slot."""
    mask = np.zeros(cfg.n_classes, dtype=bool)
    mask[: len(query.candidates.neighbors)] = True
    if cfg.use_terminal_class:
        mask[cfg.terminal_class] = True
    return mask


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    if not mask.any():
        raise ValidationError("no valid class slot to score")
    return softmax(z)


def score_queries(scorer: Scorer, queries: Sequence[MatchQuery]) -> list[MatchDecision]:
    batch = getattr(scorer, "evaluate_batch", None)
    if batch is not None:
        return batch(queries)
    return [scorer.evaluate(q) for q in queries]


# --------------------------------------------------------------------------
# Oracle


class OracleScorer:
    """Answers from ground truth; isolates pipeline correctness from models.

    next_vertex maps a global vertex index to its true successor index, or
    None at the end of a polyline.  A successor missing from the candidate
    set decays to the terminal class (reported by oracle coverage, not
    hidden).  Requires the terminal class to be enabled.
    """

    def __init__(
        self,
        next_vertex: dict[int, int | None],
        true_locations: np.ndarray,
        cfg: MatchConfig,
    ) -> None:
        if not cfg.use_terminal_class:
            raise ValidationError("OracleScorer requires use_terminal_class")
        self.next_vertex = dict(next_vertex)
        self.true_locations = np.asarray(true_locations, dtype=np.float64).reshape(-1, 2)
        self.cfg = cfg

    def evaluate(self, query: MatchQuery) -> MatchDecision:
        anchor = query.candidates.anchor
        probs = np.zeros(self.cfg.n_classes, dtype=np.float64)
        successor = self.next_vertex.get(anchor)
        slot = None if successor is None else query.candidates.slot_of(successor)
        probs[self.cfg.terminal_class if slot is None else slot] = 1.0
        loc = self.true_locations[anchor]
        return MatchDecision(probs, (float(loc[0]), float(loc[1])))


# --------------------------------------------------------------------------
# Geometric baseline


def bilinear_sample(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation with cells as lattice points; outside reads 0."""
    h, w = plane.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def at(yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out = np.zeros(yy.shape, dtype=np.float64)
        out[inside] = plane[yy[inside], xx[inside]]
        return out

    v00 = at(y0, x0)
    v01 = at(y0, x0 + 1)
    v10 = at(y0 + 1, x0)
    v11 = at(y0 + 1, x0 + 1)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


@dataclass(frozen=True)
class GeometricScorer:
    """Hand-tuned baseline: on-mask evidence + direction continuity - distance.

    Each real candidate k scores
        w_evidence * (mean segmentation sampled along anchor->k)
      + w_turn     * cos(angle to the incoming direction; 1 when unknown)
      - w_distance * (distance / S)
    followed by a temperature-1 softmax; the terminal slot competes with a
    fixed bias.  The corrected location is the anchor unchanged.
    """

    cfg: MatchConfig
    w_evidence: float = 1.0
    w_turn: float = 0.5
    w_distance: float = 0.5
    terminal_bias: float = 0.2
    temperature: float = 1.0

    def evaluate(self, query: MatchQuery) -> MatchDecision:
        cfg = self.cfg
        neighbors = query.candidates.neighbors
        logits = np.full(cfg.n_classes, -np.inf, dtype=np.float64)
        if cfg.use_terminal_class:
            logits[cfg.terminal_class] = self.terminal_bias
        if neighbors:
            s = cfg.crop_size
            origin_x = query.crop_center[0] - s // 2
            origin_y = query.crop_center[1] - s // 2
            ax = query.anchor_xy[0] / query.stride - origin_x
            ay = query.anchor_xy[1] / query.stride - origin_y
            seg_plane = query.patch.grid[:, :, 0].astype(np.float64)
            for slot in range(len(neighbors)):
                cx = query.candidate_xy[slot, 0] / query.stride - origin_x
                cy = query.candidate_xy[slot, 1] / query.stride - origin_y
                length = math.hypot(cx - ax, cy - ay)
                n = max(2, int(math.ceil(length)) + 1)
                ts = np.linspace(0.0, 1.0, n)
                evidence = float(
                    bilinear_sample(seg_plane, ax + ts * (cx - ax), ay + ts * (cy - ay)).mean()
                )
                turn = 1.0
                if query.incoming_dir is not None and length > 0:
                    dx = query.candidate_xy[slot, 0] - query.anchor_xy[0]
                    dy = query.candidate_xy[slot, 1] - query.anchor_xy[1]
                    norm = math.hypot(dx, dy)
                    turn = (dx * query.incoming_dir[0] + dy * query.incoming_dir[1]) / norm
                logits[slot] = (
                    self.w_evidence * evidence + self.w_turn * turn - self.w_distance * length / s
                )
        elif not cfg.use_terminal_class:
            raise ValidationError("no candidates and no terminal class to fall back on")
        probs = _masked_softmax(logits / self.temperature, np.isfinite(logits))
        return MatchDecision(probs, query.anchor_xy)


# --------------------------------------------------------------------------
# Trainable two-layer scorer


@dataclass
class TinyParams:
    w1: np.ndarray  # (d, hidden)
    b1: np.ndarray  # (hidden,)
    w_cls: np.ndarray  # (hidden, n_classes)
    b_cls: np.ndarray  # (n_classes,)
    w_reg: np.ndarray  # (hidden, 2)
    b_reg: np.ndarray  # (2,)


@dataclass(frozen=True)
class TrainExample:
    """One supervised anchor: flattened patch, valid slots, targets."""

    features: np.ndarray  # (d,) float32
    mask: np.ndarray  # (n_classes,) bool
    true_class: int
    target_norm: np.ndarray  # (2,) anchor-relative target, normalized by S*stride
    anchor_xy: tuple[float, float]
    stride: int


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_cls: float
    l_reg: float
    total: float


def regression_target(true_location: tuple[float, float], query: MatchQuery, cfg: MatchConfig) -> np.ndarray:
    """Regression target: the anchor's residual to its true position.

    Crop-local (anchor-relative) and normalized by the crop extent, so a
    zero output reproduces the detected anchor location exactly.
    """
    span = cfg.crop_size * query.stride
    tx = (true_location[0] - query.anchor_xy[0]) / span
    ty = (true_location[1] - query.anchor_xy[1]) / span
    return np.array([tx, ty], dtype=np.float64)


def make_train_example(
    query: MatchQuery,
    true_class: int,
    true_location: tuple[float, float],
    cfg: MatchConfig,
) -> TrainExample:
    mask = class_mask(query, cfg)
    if not 0 <= true_class < cfg.n_classes or not mask[true_class]:
        raise ValidationError(f"true_class {true_class} is not a valid slot for this query")
    return TrainExample(
        features=query.patch.grid.reshape(-1).astype(np.float32),
        mask=mask,
        true_class=true_class,
        target_norm=regression_target(true_location, query, cfg),
        anchor_xy=query.anchor_xy,
        stride=query.stride,
    )


class TinyScorer:
    """Two-layer perceptron over the flattened patch: shared hidden layer,
    one head for the (K+1)-way class logits and one for the location."""

    def __init__(self, params: TinyParams, cfg: MatchConfig) -> None:
        self.params = params
        self.cfg = cfg

    # -- inference ---------------------------------------------------------

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.params
        h_pre = x @ p.w1 + p.b1
        h = np.maximum(h_pre, 0.0)
        return h_pre, h @ p.w_cls + p.b_cls, h @ p.w_reg + p.b_reg

    def evaluate(self, query: MatchQuery) -> MatchDecision:
        return self.evaluate_batch([query])[0]

    def evaluate_batch(self, queries: Sequence[MatchQuery]) -> list[MatchDecision]:
        if not queries:
            return []
        x = np.stack([q.patch.grid.reshape(-1) for q in queries]).astype(np.float64)
        masks = np.stack([class_mask(q, self.cfg) for q in queries])
        _, logits, reg = self._forward(x)
        logits = np.where(masks, logits, -np.inf)
        probs = softmax(logits, axis=1)
        out = []
        for i, q in enumerate(queries):
            span = self.cfg.crop_size * q.stride
            px = q.anchor_xy[0] + reg[i, 0] * span
            py = q.anchor_xy[1] + reg[i, 1] * span
            out.append(MatchDecision(probs[i], (float(px), float(py))))
        return out

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        cfg = self.cfg
        meta = np.array(
            [cfg.k, cfg.crop_size, cfg.c_feat, int(cfg.use_terminal_class)], dtype=np.float32
        )
        p = self.params
        save_tensors(
            path,
            [(meta, 0), (p.w1, 0), (p.b1, 0), (p.w_cls, 0), (p.b_cls, 0), (p.w_reg, 0), (p.b_reg, 0)],
        )

    @classmethod
    def load(cls, path: str | Path) -> "TinyScorer":
        records = load_tensors(path)
        if len(records) != 7:
            raise ValidationError(f"scorer file has {len(records)} records, expected 7")
        meta = records[0][0].reshape(-1)
        cfg = MatchConfig(
            k=int(meta[0]),
            crop_size=int(meta[1]),
            c_feat=int(meta[2]),
            use_terminal_class=bool(int(meta[3])),
        )
        arrays = [r[0] for r in records[1:]]
        w1 = arrays[0].reshape(arrays[0].shape[0], arrays[0].shape[1])
        params = TinyParams(
            w1=np.asarray(w1, dtype=np.float64),
            b1=np.asarray(arrays[1], dtype=np.float64).reshape(-1),
            w_cls=np.asarray(arrays[2], dtype=np.float64).reshape(arrays[2].shape[0], arrays[2].shape[1]),
            b_cls=np.asarray(arrays[3], dtype=np.float64).reshape(-1),
            w_reg=np.asarray(arrays[4], dtype=np.float64).reshape(arrays[4].shape[0], arrays[4].shape[1]),
            b_reg=np.asarray(arrays[5], dtype=np.float64).reshape(-1),
        )
        return cls(params, cfg)


def tiny_scorer_train(
    examples: Sequence[TrainExample],
    cfg: MatchConfig,
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    hidden: int = 64,
) -> tuple[TinyScorer, list[EpochStats]]:
    """Mini-batch gradient descent on lambda1*L_cls + lambda2*L_reg.

    Deterministic for a fixed seed: initialization and per-epoch shuffling
    both come from one seeded generator.
    """
    if not examples:
        raise ValidationError("training dataset is empty")
    d = examples[0].features.size
    x_all = np.stack([e.features for e in examples]).astype(np.float64)
    masks = np.stack([e.mask for e in examples])
    classes = np.array([e.true_class for e in examples], dtype=np.int64)
    targets = np.stack([e.target_norm for e in examples]).astype(np.float64)

    rng = np.random.default_rng(seed)
    # Output heads start at zero: the untrained scorer emits uniform class
    # probabilities and keeps the anchor location unchanged.
    params = TinyParams(
        w1=rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, hidden)),
        b1=np.zeros(hidden),
        w_cls=np.zeros((hidden, cfg.n_classes)),
        b_cls=np.zeros(cfg.n_classes),
        w_reg=np.zeros((hidden, 2)),
        b_reg=np.zeros(2),
    )
    scorer = TinyScorer(params, cfg)
    n = len(examples)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sum_cls = 0.0
        sum_reg = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = x_all[idx]
            m = masks[idx]
            tc = classes[idx]
            tgt = targets[idx]
            b = len(idx)

            h_pre = x @ params.w1 + params.b1
            h = np.maximum(h_pre, 0.0)
            logits = h @ params.w_cls + params.b_cls
            logits = np.where(m, logits, -np.inf)
            probs = softmax(logits, axis=1)
            reg = h @ params.w_reg + params.b_reg

            rows = np.arange(b)
            l_cls = float(-np.log(np.clip(probs[rows, tc], 1e-12, 1.0)).sum())
            l_reg = float(sum(smooth_l1_loss(reg[i], tgt[i]) for i in range(b)))
            sum_cls += l_cls
            sum_reg += l_reg

            dlogits = probs.copy()
            dlogits[rows, tc] -= 1.0
            dlogits *= cfg.lambda1 / b
            dreg = np.stack([smooth_l1_grad(reg[i], tgt[i]) for i in range(b)]) * (cfg.lambda2 / b)

            dw_cls = h.T @ dlogits
            db_cls = dlogits.sum(axis=0)
            dw_reg = h.T @ dreg
            db_reg = dreg.sum(axis=0)
            dh = dlogits @ params.w_cls.T + dreg @ params.w_reg.T
            dh_pre = dh * (h_pre > 0.0)
            dw1 = x.T @ dh_pre
            db1 = dh_pre.sum(axis=0)

            params.w_cls -= lr * dw_cls
            params.b_cls -= lr * db_cls
            params.w_reg -= lr * dw_reg
            params.b_reg -= lr * db_reg
            params.w1 -= lr * dw1
            params.b1 -= lr * db1

        mean_cls = sum_cls / n
        mean_reg = sum_reg / n
        history.append(
            EpochStats(epoch, mean_cls, mean_reg, cfg.lambda1 * mean_cls + cfg.lambda2 * mean_reg)
        )
    return scorer, history


def history_to_csv(history: Sequence[EpochStats]) -> str:
    lines = ["epoch,l_cls,l_reg,total"]
    lines += [f"{h.epoch},{h.l_cls:.9g},{h.l_reg:.9g},{h.total:.9g}" for h in history]
    return "\n".join(lines) + "\n"
