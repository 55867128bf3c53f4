import numpy as np
import pytest
from numpy.testing import assert_allclose

from mwdnn import optics, readout


def mask_pool_reference(intensity, layout, task):
    """Mean over boolean masks; independent of the rectangle fast path."""
    out = np.empty(layout.categories)
    for j in range(layout.categories):
        out[j] = intensity[layout.masks[j, task]].mean()
    return out


class TestBuildLayout:
    def test_reference_arrangement(self):
        # 10 categories on a 200 px detector: 2x5 cells, 25 px regions,
        # two 12 x 25 bands each, all gaps at least 200 // 16 = 12 px
        layout = readout.build_layout(200, 10, 2)
        assert layout.region_size == 25
        assert layout.band_height == 12
        assert layout.band_area == 300
        assert layout.masks.shape == (10, 2, 200, 200)
        coverage = layout.masks.sum(axis=(0, 1))
        assert coverage.max() == 1
        assert int(coverage.sum()) == 10 * 2 * 300
        # top band belongs to task 0
        r0 = layout.rects[0, 0]
        r1 = layout.rects[1, 0]
        assert r0[1] == r1[0] and r0[0] < r1[0]
        # cells are 100 x 40; regions centered
        assert tuple(layout.rects[0, 0]) == (38, 50, 7, 32)
        assert tuple(layout.rects[1, 0]) == (50, 62, 7, 32)
        assert tuple(layout.rects[0, 9]) == (138, 150, 167, 192)

    def test_grid_shapes(self):
        assert readout._grid_shape(10) == (2, 5)
        assert readout._grid_shape(4) == (2, 2)
        assert readout._grid_shape(7) == (1, 7)
        assert readout._grid_shape(9) == (3, 3)

    def test_minimum_gap_enforced(self):
        # 10 regions of 24 px on 120 px: cells 60x24 leave no horizontal gap
        with pytest.raises(ValueError):
            readout.build_layout(120, 10, 2, region_size=24, gap_min=1)

    def test_region_must_fit_cell(self):
        with pytest.raises(ValueError):
            readout.build_layout(32, 10, 2, region_size=8, gap_min=0)

    def test_region_must_hold_bands(self):
        with pytest.raises(ValueError):
            readout.build_layout(64, 4, 3, region_size=2)

    def test_accepts_gridspec(self):
        grid = optics.build_grid(64, 4e-6)
        layout = readout.build_layout(grid, 4, 2)
        assert layout.side == 64

    def test_outside_masks_complement_bands(self):
        layout = readout.build_layout(80, 4, 2)
        for i in range(2):
            union = layout.masks[:, i].any(axis=0)
            assert np.array_equal(layout.outside[i] == 0.0, union)


class TestPooling:
    def _layout(self):
        return readout.build_layout(48, 4, 2, region_size=6, gap_min=2)

    def test_matches_mask_reference(self):
        rng = np.random.default_rng(0)
        layout = self._layout()
        maps = [rng.random((48, 48)) for _ in range(2)]
        scores = readout.pool(maps, layout, readout.FilterMode.BROADBAND)
        total = maps[0] + maps[1]
        for i in range(2):
            assert_allclose(scores.values[i], mask_pool_reference(total, layout, i),
                            rtol=1e-13)
        sel = readout.pool(maps, layout, readout.FilterMode.WAVELENGTH_SELECTIVE)
        for i in range(2):
            assert_allclose(sel.values[i], mask_pool_reference(maps[i], layout, i),
                            rtol=1e-13)

    def test_selective_needs_one_channel_per_task(self):
        layout = self._layout()
        with pytest.raises(ValueError):
            readout.pool([np.ones((48, 48))], layout,
                         readout.FilterMode.WAVELENGTH_SELECTIVE)

    def test_shape_mismatch_rejected(self):
        layout = self._layout()
        with pytest.raises(ValueError):
            readout.pool([np.ones((32, 32))], layout, readout.FilterMode.BROADBAND)

    @pytest.mark.parametrize("mode", [readout.FilterMode.BROADBAND,
                                      readout.FilterMode.WAVELENGTH_SELECTIVE])
    def test_scatter_is_pool_adjoint(self, mode):
        rng = np.random.default_rng(5)
        layout = self._layout()
        nb, ch = 3, 2
        maps = [rng.random((nb, 48, 48)) for _ in range(ch)]
        coef = rng.standard_normal((nb, layout.tasks, layout.categories))
        scores = readout.pool_batch(maps, layout, mode)
        lhs = float((scores * coef).sum())
        scattered = readout.scatter_pool_cotangent(coef, layout, mode, ch)
        rhs = float(sum((m * s).sum() for m, s in zip(maps, scattered)))
        assert abs(lhs - rhs) / abs(lhs) < 1e-12


class TestClassifyAndEnergy:
    def test_argmax_with_low_index_ties(self):
        scores = readout.PooledScores(np.array([[1.0, 3.0, 3.0, 0.0],
                                                [2.0, 2.0, 2.0, 2.0]]))
        assert list(readout.classify(scores)) == [1, 0]

    def test_energy_rows_sum_to_100(self):
        rng = np.random.default_rng(9)
        scores = readout.PooledScores(rng.random((3, 5)))
        dist = readout.energy_distribution(scores)
        assert_allclose(dist.sum(axis=1), 100.0, atol=1e-12)
        assert np.all(dist >= 0.0)

    def test_zero_row_stays_zero(self):
        scores = readout.PooledScores(np.array([[0.0, 0.0], [1.0, 3.0]]))
        dist = readout.energy_distribution(scores)
        assert np.all(dist[0] == 0.0)
        assert_allclose(dist[1], [25.0, 75.0])


class TestFilterMode:
    def test_parse(self):
        assert readout.FilterMode.parse("broadband") is readout.FilterMode.BROADBAND
        assert readout.FilterMode.parse("selective") is readout.FilterMode.WAVELENGTH_SELECTIVE
        assert readout.FilterMode.parse("Wavelength-Selective") \
            is readout.FilterMode.WAVELENGTH_SELECTIVE
        with pytest.raises(ValueError):
            readout.FilterMode.parse("magic")


class TestToText:
    def test_sketch_mentions_every_band(self):
        layout = readout.build_layout(64, 4, 2)
        text = readout.to_text(layout)
        assert "4 categories" in text
        for i in range(2):
            for j in range(4):
                assert f"task {i} cat {j}:" in text
        # sketch shows region marks for all four categories
        sketch = "\n".join(text.splitlines()[1:-9])
        for mark in "0123":
            assert mark in sketch
