import numpy as np
import pytest

from lanemap.errors import ValidationError
from lanemap.evaluation import (
    EvalConfig,
    ablate_k,
    ablation_csv,
    ablation_table,
    evaluate,
    geometric_factory,
    macro_f1,
    matcher_metrics,
    sample_polyline,
)
from lanemap.heatmap import HeatmapConfig
from lanemap.matching import MatchConfig, MatchDecision
from lanemap.pipeline import AnchorTruth
from lanemap.synth import SynthConfig, gen_scene


def truth(slot, loc=(0.0, 0.0), has_successor=True):
    return AnchorTruth(true_slot=slot, has_successor=has_successor, true_location=loc)


def decision(n_classes, best, loc=(0.0, 0.0)):
    probs = np.full(n_classes, 0.0)
    probs[best] = 1.0
    return MatchDecision(probs, loc)


class TestSamplePolyline:
    def test_unit_spacing_counts_endpoints(self):
        pts = sample_polyline([(0.0, 0.0), (10.0, 0.0)], 1.0)
        assert pts.shape == (11, 2)
        assert pts[0].tolist() == [0.0, 0.0]
        assert pts[-1].tolist() == [10.0, 0.0]

    def test_spacing_three_walks_arc_length(self):
        pts = sample_polyline([(0.0, 0.0), (10.0, 0.0)], 3.0)
        assert pts[:, 0].tolist() == [0.0, 3.0, 6.0, 9.0, 10.0]

    def test_multi_segment_arc_positions(self):
        # L-shape of total length 20; stations continue across the corner.
        pts = sample_polyline([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)], 4.0)
        expected = [(0, 0), (4, 0), (8, 0), (10, 2), (10, 6), (10, 10)]
        assert pts.tolist() == [[float(x), float(y)] for x, y in expected]

    def test_degenerate_rejected(self):
        with pytest.raises(ValidationError):
            sample_polyline([(1.0, 1.0)], 1.0)


class TestEvaluate:
    def test_identical_sets_perfect(self):
        polys = [[(0.0, 0.0), (50.0, 0.0)], [(0.0, 10.0), (30.0, 40.0)]]
        report = evaluate(polys, polys)
        for s in report.scores.values():
            assert s.precision == 1.0
            assert s.recall == 1.0
            assert s.f1 == 1.0

    def test_three_px_parallel_translation(self):
        gt = [[(0.0, 0.0), (200.0, 0.0)]]
        pred = [[(0.0, 3.0), (200.0, 3.0)]]
        report = evaluate(pred, gt)
        assert report.scores[2.0].f1 == 0.0
        assert report.scores[5.0].f1 == 1.0
        assert report.scores[10.0].f1 == 1.0

    def test_empty_prediction_all_zero(self):
        gt = [[(0.0, 0.0), (10.0, 0.0)]]
        report = evaluate([], gt)
        for s in report.scores.values():
            assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = [rng.uniform(0, 100, size=(3, 2)).tolist() for _ in range(2)]
            gt = [rng.uniform(0, 100, size=(3, 2)).tolist() for _ in range(2)]
            report = evaluate(pred, gt)
            taus = list(report.scores)
            for a, b in zip(taus, taus[1:]):
                assert report.scores[a].precision <= report.scores[b].precision
                assert report.scores[a].recall <= report.scores[b].recall
                assert report.scores[a].f1 <= report.scores[b].f1 + 1e-12

    def test_precision_recall_symmetry_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = [rng.uniform(0, 50, size=(4, 2)).tolist()]
            b = [rng.uniform(0, 50, size=(4, 2)).tolist()]
            fwd = evaluate(a, b)
            bwd = evaluate(b, a)
            for tau in fwd.scores:
                assert fwd.scores[tau].precision == bwd.scores[tau].recall
                assert fwd.scores[tau].recall == bwd.scores[tau].precision

    def test_reversal_and_order_invariance(self):
        # Lengths are multiples of the sampling interval, so the sample sets mirror exactly.
        a = [(0.0, 0.0), (10.0, 0.0)]
        b = [(20.0, 5.0), (20.0, 15.0)]
        gt = [[(0.0, 1.0), (10.0, 1.0)], [(19.0, 5.0), (19.0, 15.0)]]
        r1 = evaluate([a, b], gt)
        r2 = evaluate([list(reversed(a)), list(reversed(b))], gt)
        r3 = evaluate([b, a], gt)
        assert r1 == r2 == r3

    def test_f1_bounded_by_twice_min_side(self):
        gt = [[(0.0, 0.0), (100.0, 0.0)]]
        pred = [[(0.0, 0.0), (40.0, 0.0)]]  # partial coverage
        report = evaluate(pred, gt)
        for s in report.scores.values():
            assert s.f1 <= 2 * min(s.precision, s.recall) + 1e-12

    def test_csv_and_text_outputs(self):
        report = evaluate([[(0.0, 0.0), (5.0, 0.0)]], [[(0.0, 0.0), (5.0, 0.0)]])
        csv = report.csv()
        assert csv.splitlines()[0] == "threshold,precision,recall,f1"
        assert len(csv.splitlines()) == 4
        assert "threshold" in report.text()

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            EvalConfig(thresholds=(5.0, 2.0))
        with pytest.raises(ValidationError):
            EvalConfig(thresholds=())
        with pytest.raises(ValidationError):
            EvalConfig(sample_interval=0.0)


class TestMatcherMetrics:
    def test_perfect_decisions(self):
        truths = [truth(0, (1.0, 2.0)), truth(1, (3.0, 4.0)), truth(2, (5.0, 6.0), has_successor=False)]
        decisions = [decision(3, 0, (1.0, 2.0)), decision(3, 1, (3.0, 4.0)), decision(3, 2, (5.0, 6.0))]
        report = matcher_metrics(decisions, truths, [0.01])
        assert report.f1_class == 100.0
        assert report.mse_position == 0.0
        assert report.oracle_coverage == 1.0

    def test_one_px_offset_mse(self):
        truths = [truth(0, (0.0, 0.0)), truth(0, (5.0, 5.0))]
        decisions = [decision(2, 0, (1.0, 0.0)), decision(2, 0, (6.0, 5.0))]
        report = matcher_metrics(decisions, truths, [0.0])
        assert report.mse_position == pytest.approx(1.0)

    def test_report_row_structure(self):
        report = matcher_metrics([decision(2, 0)], [truth(0)], [0.03])
        f1, mse, runtime, coverage = report.row()
        assert f1 >= 0 and mse >= 0 and runtime >= 0 and 0 <= coverage <= 1

    def test_uncovered_truth_penalizes(self):
        truths = [truth(None), truth(0)]
        decisions = [decision(2, 0), decision(2, 0)]
        report = matcher_metrics(decisions, truths, [0.0])
        assert report.f1_class < 100.0
        assert report.oracle_coverage == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            matcher_metrics([decision(2, 0)], [], [0.0])

    def test_macro_f1_degenerate(self):
        assert macro_f1([], []) == 1.0
        assert macro_f1([0, 1], [0, 1]) == 1.0
        assert macro_f1([0, 1], [1, 0]) == 0.0


class TestAblateK:
    def setup_method(self):
        cfg = SynthConfig(seed=31, width=160, height=160, n_lanes_min=1, n_lanes_max=2)
        self.scenes = [gen_scene(SynthConfig(seed=s, width=160, height=160, n_lanes_min=1, n_lanes_max=2)) for s in (31, 32, 33)]
        self.base = MatchConfig(k=5, crop_size=16, c_feat=4)
        self.hm = HeatmapConfig()

    def test_coverage_nondecreasing_and_saturates(self):
        max_vertices = max(s.vertices.shape[0] for s in self.scenes)
        results = ablate_k(
            [], self.scenes, [2, 5, max_vertices], self.base, self.hm, geometric_factory
        )
        coverages = [r.report.oracle_coverage for r in results]
        assert coverages == sorted(coverages)
        assert coverages[-1] == 1.0

    def test_table_and_csv_shapes(self):
        results = ablate_k([], self.scenes, [2, 4], self.base, self.hm, geometric_factory)
        table = ablation_table(results)
        assert len(table.strip().splitlines()) == 3
        csv = ablation_csv(results)
        assert csv.splitlines()[0] == "k,f1_class,mse_position,runtime_class,oracle_coverage"

    def test_empty_eval_set_rejected(self):
        with pytest.raises(ValidationError):
            ablate_k([], [], [2], self.base, self.hm, geometric_factory)
