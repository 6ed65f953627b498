import math

import numpy as np
import pytest

from lanemap.errors import ValidationError
from lanemap.geom import PixelPoint
from lanemap.heatmap import (
    HeatmapConfig,
    HeatmapMode,
    VertexHeatmaps,
    decode_peaks,
    encode_vertices,
    load_heatmaps,
    load_offsets,
    save_heatmaps,
    save_offsets,
)

SHARED = HeatmapConfig(mode=HeatmapMode.SHARED_CHANNEL)
PER_VERTEX = HeatmapConfig(mode=HeatmapMode.PER_VERTEX_CHANNEL, c_vert=8)


def pts(*coords):
    return [PixelPoint(x, y) for x, y in coords]


class TestEncode:
    def test_single_vertex_peak_cell(self):
        hm, off = encode_vertices(pts((8.0, 8.0)), PER_VERTEX, 64, 64)
        assert hm.grid.shape == (16, 16, 8)
        assert hm.grid[2, 2, 0] == 1.0
        assert off.grid[2, 2, 0] == 0.0
        assert off.grid[2, 2, 1] == 0.0

    def test_neighbor_cell_gaussian_value(self):
        hm, _ = encode_vertices(pts((8.0, 8.0)), PER_VERTEX, 64, 64)
        expected = math.exp(-1.0 / 8.0)  # one cell away, sigma=2
        assert hm.grid[2, 3, 0] == pytest.approx(expected, abs=1e-6)
        assert hm.grid[3, 2, 0] == pytest.approx(expected, abs=1e-6)

    def test_same_cell_max_merge_not_sum(self):
        hm, _ = encode_vertices(pts((8.0, 8.0), (9.0, 9.0)), SHARED, 64, 64)
        assert hm.grid[2, 2, 0] == 1.0
        assert float(hm.grid.max()) == 1.0

    def test_values_in_unit_interval_and_peak_count(self):
        rng = np.random.default_rng(0)
        vertices = pts(*[(float(x), float(y)) for x, y in rng.uniform(0, 63, size=(6, 2))])
        hm, _ = encode_vertices(vertices, HeatmapConfig(mode=HeatmapMode.SHARED_CHANNEL, sigma=1.0), 64, 64)
        assert hm.grid.min() >= 0.0
        assert hm.grid.max() <= 1.0
        cells = {(int(p.y // 4), int(p.x // 4)) for p in vertices}
        if len(cells) == len(vertices):
            assert int((hm.grid == 1.0).sum()) == len(vertices)

    def test_order_independent_shared(self):
        a = pts((8.0, 8.0), (40.0, 20.0), (20.0, 44.0))
        hm1, _ = encode_vertices(a, SHARED, 64, 64)
        hm2, _ = encode_vertices(list(reversed(a)), SHARED, 64, 64)
        assert np.array_equal(hm1.grid, hm2.grid)

    def test_too_many_vertices_per_vertex_mode(self):
        cfg = HeatmapConfig(mode=HeatmapMode.PER_VERTEX_CHANNEL, c_vert=2)
        with pytest.raises(ValidationError, match="c_vert"):
            encode_vertices(pts((1, 1), (2, 2), (3, 3)), cfg, 64, 64)

    def test_out_of_bounds_vertex_rejected(self):
        with pytest.raises(ValidationError, match="outside"):
            encode_vertices(pts((100.0, 1.0)), PER_VERTEX, 64, 64)

    def test_empty_vertex_list(self):
        hm, off = encode_vertices([], SHARED, 64, 64)
        assert hm.grid.sum() == 0
        assert off.grid.sum() == 0


class TestDecode:
    def test_all_zero_empty(self):
        hm = VertexHeatmaps(np.zeros((16, 16, 1), dtype=np.float32), 4)
        assert decode_peaks(hm, None, SHARED) == []

    def test_round_trip_cell_center_exact(self):
        hm, off = encode_vertices(pts((8.0, 8.0)), SHARED, 64, 64)
        [(p, conf)] = decode_peaks(hm, off, SHARED)
        assert conf == 1.0
        assert abs(p.x - 8.0) < 1e-6
        assert abs(p.y - 8.0) < 1e-6

    def test_no_offsets_quantizes_to_cell_center(self):
        hm, _ = encode_vertices(pts((9.0, 10.0)), SHARED, 64, 64)
        [(p, _)] = decode_peaks(hm, None, SHARED)
        assert (p.x, p.y) == (10.0, 10.0)
        assert math.hypot(p.x - 9.0, p.y - 10.0) <= 4 * math.sqrt(2) / 2

    def test_offsets_recover_fractional_position(self):
        hm, off = encode_vertices(pts((9.25, 10.75)), SHARED, 64, 64)
        [(p, _)] = decode_peaks(hm, off, SHARED)
        assert abs(p.x - 9.25) < 1e-6
        assert abs(p.y - 10.75) < 1e-6

    def test_per_vertex_one_peak_per_channel(self):
        vertices = pts((8.0, 8.0), (40.0, 40.0), (60.0, 12.0))
        cfg = HeatmapConfig(mode=HeatmapMode.PER_VERTEX_CHANNEL, c_vert=3)
        hm, off = encode_vertices(vertices, cfg, 64, 64)
        decoded = decode_peaks(hm, off, cfg)
        assert len(decoded) == 3
        for original, (p, conf) in zip(vertices, decoded):
            assert conf == 1.0
            assert abs(p.x - original.x) < 1e-6
            assert abs(p.y - original.y) < 1e-6

    def test_threshold_filters_peaks(self):
        grid = np.zeros((16, 16, 1), dtype=np.float32)
        grid[4, 4, 0] = 0.2
        grid[8, 8, 0] = 0.9
        hm = VertexHeatmaps(grid, 4)
        decoded = decode_peaks(hm, None, SHARED)
        assert len(decoded) == 1
        assert decoded[0][1] == pytest.approx(0.9)

    def test_tie_broken_toward_smaller_scan_order(self):
        grid = np.zeros((16, 16, 1), dtype=np.float32)
        grid[5, 5, 0] = 0.8
        grid[5, 6, 0] = 0.8  # adjacent equal value: only (5,5) is the peak
        hm = VertexHeatmaps(grid, 4)
        decoded = decode_peaks(hm, None, SHARED)
        assert len(decoded) == 1
        p, _ = decoded[0]
        assert (p.x, p.y) == ((5 + 0.5) * 4, (5 + 0.5) * 4)

    def test_round_trip_random_sets(self):
        # Property over random well-separated vertex sets, both decode modes.
        rng = np.random.default_rng(1234)
        cfg = HeatmapConfig(mode=HeatmapMode.SHARED_CHANNEL)
        spacing = 3 * cfg.sigma * cfg.stride  # 24 px
        bound = cfg.stride * math.sqrt(2) / 2
        for _ in range(50):
            vertices = []
            while len(vertices) < 6:
                cand = rng.uniform(1, 255, size=2)
                if all(np.hypot(cand[0] - v.x, cand[1] - v.y) >= spacing for v in vertices):
                    vertices.append(PixelPoint(float(cand[0]), float(cand[1])))
            hm, off = encode_vertices(vertices, cfg, 256, 256)
            with_off = decode_peaks(hm, off, cfg)
            without = decode_peaks(hm, None, cfg)
            assert len(with_off) == len(without) == len(vertices)
            def nearest_errors(decoded):
                return [
                    min(math.hypot(v.x - p.x, v.y - p.y) for p, _ in decoded)
                    for v in vertices
                ]

            assert max(nearest_errors(with_off)) < 1e-6
            assert max(nearest_errors(without)) <= bound + 1e-9


class TestSerialization:
    def test_heatmap_file_round_trip(self, tmp_path):
        hm, off = encode_vertices(pts((8.5, 9.5), (40.0, 41.0)), SHARED, 64, 64)
        hm_path = tmp_path / "peaks.bin"
        off_path = tmp_path / "offsets.bin"
        save_heatmaps(hm, hm_path)
        save_offsets(off, off_path)
        hm2 = load_heatmaps(hm_path)
        off2 = load_offsets(off_path)
        assert hm2.stride == hm.stride
        assert np.array_equal(hm2.grid, hm.grid)
        assert np.array_equal(off2.grid, off.grid)
        # 16-byte header + float32 payload, exactly.
        assert hm_path.stat().st_size == 16 + hm.grid.size * 4
