"""Command-line entry point: reproducible pipelines over annotations and scenes.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error.  Worker count
comes from LANEMAP_THREADS (default: logical cores); all persisted outputs
are byte-deterministic for a fixed seed and config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .config import Settings, load_settings
from .dataset import (
    AnnotatedLane,
    ImageAnnotation,
    Split,
    annotation_to_lane_map,
    load_annotations,
    load_split_manifest,
    rasterize_mask,
    save_annotations,
    save_mask_png,
    save_split_manifest,
    split_dataset,
)
from .errors import ParseError, ValidationError
from .evaluation import (
    ablate_k,
    ablation_csv,
    ablation_table,
    evaluate,
    geometric_factory,
    tiny_factory,
)
from .geom import LaneAttributes, PixelPoint, map_stats
from .heatmap import (
    decode_peaks,
    encode_vertices,
    load_heatmaps,
    load_offsets,
    save_heatmaps,
    save_offsets,
)
from .linking import DirectedEdge, VertexGraph, break_cycles, extract_chains, resolve_conflicts
from .matching import MatchConfig
from .pipeline import matcher_examples, oracle_for_scene, run_pipeline
from .scorers import GeometricScorer, Scorer, TinyScorer, history_to_csv, tiny_scorer_train
from .synth import (
    SyntheticScene,
    gen_scene,
    list_scene_ids,
    load_scene,
    save_scene,
    scene_config,
    scene_seeds,
)


class CliParser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _threads() -> int:
    raw = os.environ.get("LANEMAP_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValidationError(f"LANEMAP_THREADS must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ValidationError(f"LANEMAP_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _pmap(fn, items: Sequence):
    """Parallel map that collects results in input order."""
    workers = min(_threads(), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _override(cfg, **flags):
    updates = {k: v for k, v in flags.items() if v is not None}
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _scenes_from_dir(path: str) -> list[SyntheticScene]:
    ids = list_scene_ids(path)
    return [load_scene(path, image_id) for image_id in ids]


def _split_scenes(scene_dir: str, scenes: Sequence[SyntheticScene]):
    """(train, eval) partition from the directory's split manifest, if any."""
    manifest = Path(scene_dir) / "split.tsv"
    if not manifest.exists():
        return [], list(scenes)
    assignment = load_split_manifest(manifest)
    train = [s for s in scenes if assignment.mapping.get(s.image_id) is Split.TRAIN]
    rest = [s for s in scenes if assignment.mapping.get(s.image_id) is not Split.TRAIN]
    return train, rest


# --------------------------------------------------------------------------
# Subcommands


def cmd_stats(args, settings: Settings) -> int:
    anns = load_annotations(args.annotations)
    total_lanes = total_vertices = 0
    total_km = 0.0
    print(f"{'image_id':<28} {'lanes':>6} {'vertices':>9} {'length_km':>10}")
    for ann in anns:
        stats = map_stats(annotation_to_lane_map(ann))
        total_lanes += stats.lane_count
        total_vertices += stats.vertex_count
        total_km += stats.total_length_km
        print(f"{ann.image_id:<28} {stats.lane_count:>6d} {stats.vertex_count:>9d} {stats.total_length_km:>10.4f}")
    print(f"{'TOTAL':<28} {total_lanes:>6d} {total_vertices:>9d} {total_km:>10.4f}")
    return 0


def cmd_rasterize(args, settings: Settings) -> int:
    anns = load_annotations(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stroke = args.stroke if args.stroke is not None else settings.synth.stroke_width

    results = _pmap(lambda ann: (ann.image_id, rasterize_mask(ann, stroke)), anns)
    for image_id, mask in results:
        save_mask_png(mask, out / f"{image_id}_mask.png")
    print(f"rasterized {len(anns)} masks -> {out}")
    return 0


def cmd_split(args, settings: Settings) -> int:
    anns = load_annotations(args.annotations)
    assignment = split_dataset([a.image_id for a in anns], seed=args.seed)
    save_split_manifest(assignment, args.out)
    sizes = assignment.sizes()
    print(f"split {len(anns)} ids -> train={sizes[0]} val={sizes[1]} test={sizes[2]} ({args.out})")
    return 0


def cmd_encode(args, settings: Settings) -> int:
    cfg = _override(
        settings.heatmap,
        stride=args.stride,
        sigma=args.sigma,
        mode=args.mode,
        c_vert=args.c_vert,
        peak_threshold=args.peak_threshold,
    )
    anns = load_annotations(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(ann: ImageAnnotation):
        vertices = [p for lane in ann.lanes for p in lane.pixel_vertices]
        local = cfg
        if local.mode.value == "per_vertex_channel" and len(vertices) > local.c_vert:
            local = dataclasses.replace(local, c_vert=len(vertices))
        return ann.image_id, encode_vertices(vertices, local, ann.width, ann.height)

    for image_id, (hm, off) in _pmap(work, anns):
        save_heatmaps(hm, out / f"{image_id}_heatmap.bin")
        save_offsets(off, out / f"{image_id}_offsets.bin")
    print(f"encoded {len(anns)} images -> {out}")
    return 0


def cmd_decode(args, settings: Settings) -> int:
    hm = load_heatmaps(args.heatmap)
    cfg = _override(settings.heatmap, peak_threshold=args.peak_threshold)
    mode = "shared_channel" if hm.channels == 1 else "per_vertex_channel"
    cfg = dataclasses.replace(cfg, stride=hm.stride, mode=mode, c_vert=max(cfg.c_vert, hm.channels))
    off = load_offsets(args.offsets) if args.offsets else None
    peaks = decode_peaks(hm, off, cfg)
    text = _csv_text(
        ["x", "y", "confidence"],
        [[_fmt(p.x), _fmt(p.y), _fmt(conf)] for p, conf in peaks],
    )
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _build_scorer(kind: str, params: str | None, cfg: MatchConfig) -> Scorer | None:
    if kind == "geometric":
        return GeometricScorer(cfg)
    if kind == "tiny":
        if not params:
            raise ValidationError("--scorer tiny requires --params")
        return TinyScorer.load(params)
    if kind == "oracle":
        return None  # built per scene from its labels
    raise ValidationError(f"unknown scorer {kind!r}")


def cmd_match(args, settings: Settings) -> int:
    cfg = _override(settings.match, k=args.k, crop_size=args.crop_size)
    scorer = _build_scorer(args.scorer, args.params, cfg)
    if args.scorer == "tiny":
        cfg = scorer.cfg  # saved weights fix K, S and c_feat
    scenes = _scenes_from_dir(args.scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        active = oracle_for_scene(scene, cfg) if args.scorer == "oracle" else scorer
        result = run_pipeline(scene, active, cfg, settings.heatmap, use_offsets=not args.no_offsets)
        rows = []
        for anchor, decision in enumerate(result.decisions):
            best = decision.best_class
            neighbors = result.candidates[anchor].neighbors
            target = neighbors[best][0] if best < len(neighbors) else -1
            rows.append(
                [
                    anchor,
                    best,
                    target,
                    _fmt(float(decision.class_probs[best])),
                    _fmt(decision.corrected_location[0]),
                    _fmt(decision.corrected_location[1]),
                ]
            )
        text = _csv_text(
            ["anchor", "best_class", "next_vertex", "probability", "corrected_x", "corrected_y"], rows
        )
        (out / f"{scene.image_id}_decisions.csv").write_text(text, encoding="utf-8")
    print(f"matched {len(scenes)} scenes -> {out}")
    return 0


def _read_decisions(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _polylines_to_annotation(
    polylines: list[list[tuple[float, float]]], template: ImageAnnotation
) -> ImageAnnotation:
    """Predicted polylines as an annotation document (attributes defaulted)."""
    w, h = template.width, template.height
    lanes = []
    for i, poly in enumerate(polylines):
        clamped = [(min(max(x, 0.0), float(w)), min(max(y, 0.0), float(h))) for x, y in poly]
        deduped = [clamped[0]]
        for p in clamped[1:]:
            if p != deduped[-1]:
                deduped.append(p)
        if len(deduped) < 2:
            continue
        lanes.append(
            AnnotatedLane(
                lane_id=f"pred{i}",
                road_id="pred",
                attributes=LaneAttributes(),
                pixel_vertices=tuple(PixelPoint(x, y) for x, y in deduped),
            )
        )
    return ImageAnnotation(
        image_id=f"{template.image_id}_pred",
        geo_transform=template.geo_transform,
        lanes=tuple(lanes),
        width=w,
        height=h,
    )


def cmd_build(args, settings: Settings) -> int:
    scenes = _scenes_from_dir(args.scenes)
    decisions_dir = Path(args.decisions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    built = 0
    for scene in scenes:
        path = decisions_dir / f"{scene.image_id}_decisions.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing decisions for scene {scene.image_id}: {path}")
        rows = _read_decisions(path)
        edges = []
        corrected: dict[int, tuple[float, float]] = {}
        for row in rows:
            anchor = int(row["anchor"])
            corrected[anchor] = (float(row["corrected_x"]), float(row["corrected_y"]))
            target = int(row["next_vertex"])
            if target >= 0:
                edges.append(DirectedEdge(anchor, target, float(row["probability"])))
        edges = break_cycles(resolve_conflicts(edges))
        n = len(rows)
        points = [PixelPoint(*corrected.get(i, (0.0, 0.0))) for i in range(n)]
        graph = VertexGraph(tuple(points), tuple(edges))
        chains = extract_chains(graph)
        polylines = [[corrected[i] for i in chain] for chain in chains]
        ann = _polylines_to_annotation(polylines, scene.annotation)
        save_annotations([ann], out / f"{scene.image_id}_pred.json")
        built += 1
    print(f"built polylines for {built} scenes -> {out}")
    return 0


def _annotation_polylines(anns: Sequence[ImageAnnotation]) -> dict[str, list[list[tuple[float, float]]]]:
    out: dict[str, list[list[tuple[float, float]]]] = {}
    for ann in anns:
        key = ann.image_id.removesuffix("_pred")
        out.setdefault(key, []).extend(
            [(p.x, p.y) for p in lane.pixel_vertices] for lane in ann.lanes
        )
    return out


def cmd_eval(args, settings: Settings) -> int:
    cfg = settings.eval
    if args.thresholds:
        cfg = dataclasses.replace(cfg, thresholds=tuple(float(t) for t in args.thresholds.split(",")))
    if args.interval:
        cfg = dataclasses.replace(cfg, sample_interval=args.interval)
    pred = _annotation_polylines(load_annotations(args.pred))
    gt = _annotation_polylines(load_annotations(args.gt))
    all_pred = [poly for key in sorted(pred) for poly in pred[key]]
    all_gt = [poly for key in sorted(gt) for poly in gt[key]]
    report = evaluate(all_pred, all_gt, cfg)
    sys.stdout.write(report.text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.csv").write_text(report.csv(), encoding="utf-8")
        (out / "eval_report.txt").write_text(report.text(), encoding="utf-8")
    return 0


def cmd_synth(args, settings: Settings) -> int:
    base = _override(
        settings.synth,
        seed=args.seed,
        width=args.width,
        height=args.height,
        noise=args.noise,
        n_lanes_min=args.lanes_min,
        n_lanes_max=args.lanes_max,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = list(enumerate(scene_seeds(base, args.scenes)))
    scenes = _pmap(lambda p: gen_scene(scene_config(base, p[0], p[1])), pairs)
    for scene in scenes:
        save_scene(scene, out)
    assignment = split_dataset([s.image_id for s in scenes], seed=base.seed)
    save_split_manifest(assignment, out / "split.tsv")
    print(f"generated {args.scenes} scenes -> {out}")
    return 0


def cmd_train_scorer(args, settings: Settings) -> int:
    cfg = _override(settings.match, k=args.k, crop_size=args.crop_size)
    scenes = _scenes_from_dir(args.scenes)
    train, _ = _split_scenes(args.scenes, scenes)
    if not train:
        train = scenes  # no manifest: train on everything
    examples = []
    for scene in train:
        examples.extend(matcher_examples(scene, cfg, settings.heatmap))
    scorer, history = tiny_scorer_train(
        examples,
        cfg,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    scorer.save(args.out)
    if args.log:
        Path(args.log).write_text(history_to_csv(history), encoding="utf-8")
    final = history[-1]
    print(
        f"trained on {len(examples)} examples from {len(train)} scenes; "
        f"final l_cls={final.l_cls:.4f} l_reg={final.l_reg:.4f} total={final.total:.4f} -> {args.out}"
    )
    return 0


def cmd_ablate_k(args, settings: Settings) -> int:
    k_values = [int(v) for v in args.k.split(",")]
    cfg = _override(settings.match, crop_size=args.crop_size)
    scenes = _scenes_from_dir(args.scenes)
    train, rest = _split_scenes(args.scenes, scenes)
    if args.scorer == "tiny":
        if not train:
            raise ValidationError("--scorer tiny needs a split.tsv manifest with a train split")
        factory = tiny_factory(epochs=args.epochs, lr=args.lr, seed=args.seed)
    else:
        factory = geometric_factory
    results = ablate_k(train, rest or scenes, k_values, cfg, settings.heatmap, factory)
    sys.stdout.write(ablation_table(results))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(ablation_csv(results), encoding="utf-8")
        (out / "ablation.txt").write_text(ablation_table(results), encoding="utf-8")
    return 0


def cmd_e2e_oracle(args, settings: Settings) -> int:
    base = _override(settings.synth, seed=args.seed, noise=args.noise)
    match_cfg = _override(settings.match, k=args.k)
    scorer = _build_scorer(args.scorer, args.params, match_cfg)
    if args.scorer == "tiny":
        match_cfg = scorer.cfg
    pred_polys: list[list[tuple[float, float]]] = []
    gt_polys: list[list[tuple[float, float]]] = []
    exact_chains = 0
    scenes = [
        gen_scene(scene_config(base, i, s)) for i, s in enumerate(scene_seeds(base, args.scenes))
    ]
    for scene in scenes:
        active = oracle_for_scene(scene, match_cfg) if args.scorer == "oracle" else scorer
        result = run_pipeline(scene, active, match_cfg, settings.heatmap, use_offsets=not args.no_offsets)
        pred_polys.extend(result.polylines)
        gt_polys.extend(scene.gt_polylines())
        if result.chains == scene.gt_chains():
            exact_chains += 1
    report = evaluate(pred_polys, gt_polys, settings.eval)
    summary = report.text() + f"exact_chain_scenes: {exact_chains}/{len(scenes)}\n"
    sys.stdout.write(summary)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.csv").write_text(report.csv(), encoding="utf-8")
        (out / "summary.txt").write_text(summary, encoding="utf-8")
    return 0


# --------------------------------------------------------------------------
# Parser assembly


def build_parser() -> CliParser:
    parser = CliParser(prog="lanemap", description=__doc__)
    parser.add_argument("--config", help="key=value config file (sections: heatmap, match, eval, synth)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("stats", help="annotation statistics table")
    p.add_argument("annotations", help="annotation JSON file or directory")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("rasterize", help="write lane mask PNGs")
    p.add_argument("annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--stroke", type=float)
    p.set_defaults(fn=cmd_rasterize)

    p = sub.add_parser("split", help="deterministic 7:2:1 split manifest")
    p.add_argument("annotations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("encode", help="vertex heatmap + offset tensors")
    p.add_argument("annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--mode", choices=["per_vertex_channel", "shared_channel"])
    p.add_argument("--c-vert", dest="c_vert", type=int)
    p.add_argument("--peak-threshold", dest="peak_threshold", type=float)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="peaks from a heatmap tensor")
    p.add_argument("heatmap")
    p.add_argument("--offsets")
    p.add_argument("--out")
    p.add_argument("--peak-threshold", dest="peak_threshold", type=float)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("match", help="next-vertex decisions per scene")
    p.add_argument("scenes", help="scene directory (synth output)")
    p.add_argument("--scorer", choices=["oracle", "geometric", "tiny"], default="geometric")
    p.add_argument("--params", help="TinyScorer weights file")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--no-offsets", action="store_true", help="decode without sub-cell offsets")
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("build", help="polylines from decisions")
    p.add_argument("scenes")
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("eval", help="distance-thresholded P/R/F1")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--interval", type=float)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--lanes-min", dest="lanes_min", type=int)
    p.add_argument("--lanes-max", dest="lanes_max", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-scorer", help="train the tiny MLP scorer")
    p.add_argument("scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch CSV log path")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int)
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.set_defaults(fn=cmd_train_scorer)

    p = sub.add_parser("ablate-k", help="Table-style K ablation")
    p.add_argument("scenes")
    p.add_argument("--k", default="5,10,20,40")
    p.add_argument("--scorer", choices=["geometric", "tiny"], default="geometric")
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate_k)

    p = sub.add_parser("e2e-oracle", help="synth -> match -> build -> eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--scorer", choices=["oracle", "geometric", "tiny"], default="oracle")
    p.add_argument("--params")
    p.add_argument("--k", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--no-offsets", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_e2e_oracle)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = load_settings(args.config)
        return args.fn(args, settings)
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
