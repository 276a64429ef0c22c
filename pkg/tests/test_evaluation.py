import io

import numpy as np
import pytest

from pdanet.errors import ContractError, DegenerateMetricError, DimensionError
from pdanet.evaluation import (
    MetricReport,
    argmax_cell,
    cell_center_in_box,
    cell_hits_box,
    export_attention,
    grid_from_csv,
    heatmap_levels,
    mse_metric,
    polarity_match_rate,
    r2_metric,
)


def loop_mse(P, G):
    out = []
    for j in range(3):
        out.append(sum((P[i][j] - G[i][j]) ** 2 for i in range(len(P))) / len(P))
    return out


class TestMse:
    def test_identical(self, rng):
        g = rng.random((5, 3))
        assert set(mse_metric(g, g).values()) == {0.0}

    def test_single_sample(self):
        m = mse_metric([[0.6, 0.5, 0.5]], [[0.5, 0.5, 0.5]])
        assert abs(m["V"] - 0.01) < 1e-15 and m["A"] == 0 and abs(m["mean"] - 0.01 / 3) < 1e-15

    def test_loop_oracle(self, rng):
        P, G = rng.random((7, 3)), rng.random((7, 3))
        m = mse_metric(P, G)
        for d, ref in zip("VAD", loop_mse(P.tolist(), G.tolist())):
            assert abs(m[d] - ref) < 1e-12

    @pytest.mark.parametrize("shapes", [((2, 3), (3, 3)), ((0, 3), (0, 3)), ((2, 2), (2, 2))])
    def test_contract(self, shapes):
        with pytest.raises(ContractError):
            mse_metric(np.zeros(shapes[0]), np.zeros(shapes[1]))


class TestR2:
    def test_perfect(self, rng):
        g = rng.random((5, 3))
        r = r2_metric(g, g)
        assert r["V"] == r["A"] == r["D"] == r["mean"] == 1.0

    def test_mean_predictor_zero(self, rng):
        g = rng.random((6, 3))
        r = r2_metric(np.tile(g.mean(axis=0), (6, 1)), g)
        for d in "VAD":
            assert abs(r[d]) < 1e-12

    def test_can_be_negative(self):
        g = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        assert r2_metric(1 - g, g)["V"] < 0

    def test_identity(self, rng):
        P, G = rng.random((9, 3)), rng.random((9, 3))
        m, r = mse_metric(P, G), r2_metric(P, G)
        var = G.var(axis=0)
        for j, d in enumerate("VAD"):
            assert abs(r[d] - (1 - m[d] / var[j])) < 1e-12

    def test_degenerate_names_dimension(self, rng):
        g = rng.random((4, 3))
        g[:, 1] = 0.3
        with pytest.raises(DegenerateMetricError) as info:
            r2_metric(rng.random((4, 3)), g)
        assert info.value.dimension == "A"

    def test_single_sample(self):
        with pytest.raises(ContractError):
            r2_metric([[0, 0, 0]], [[1, 1, 1]])

    def test_permutation_invariant(self, rng):
        P, G = rng.random((10, 3)), rng.random((10, 3))
        perm = rng.permutation(10)
        for fn in (mse_metric, r2_metric):
            a, b = fn(P, G), fn(P[perm], G[perm])
            assert all(abs(a[k] - b[k]) < 1e-14 for k in a)


class TestReport:
    def test_means_and_round_trip(self, rng):
        P, G = rng.random((8, 3)), rng.random((8, 3))
        rep = MetricReport.from_predictions(P, G)
        assert abs(rep.mse["mean"] - np.mean([rep.mse[d] for d in "VAD"])) < 1e-15
        assert all(rep.r2[d] <= 1 for d in "VAD")
        assert MetricReport.from_kv(rep.to_kv()) == rep
        header = rep.to_table().splitlines()[0].split()
        assert header[1:] == ["V", "A", "D", "M"]

    def test_polarity_match_rate(self):
        p = np.array([[0.6, 0.4, 0.5], [0.1, 0.9, 0.2]])
        g = np.array([[0.7, 0.6, 0.5], [0.2, 0.8, 0.9]])
        assert polarity_match_rate(p, g) == 4 / 6


class TestExport:
    def test_uniform_is_128(self):
        levels, _ = export_attention(np.full(6, 1 / 6), 2, 3)
        assert levels.shape == (2, 3) and np.all(levels == 128)

    def test_one_hot(self):
        a = np.zeros(12)
        a[5] = 1
        levels, _ = export_attention(a, 3, 4)
        assert levels[1, 1] == 255 and levels.sum() == 255

    def test_dimension_error(self):
        with pytest.raises(DimensionError):
            export_attention(np.ones(5), 2, 3)

    def test_sinks(self, rng):
        a = rng.dirichlet(np.ones(16))
        pgm, csv = io.BytesIO(), io.StringIO()
        levels, grid = export_attention(a, 4, 4, pgm, csv, upsample=2)
        assert pgm.getvalue().startswith(b"P5\n8 8\n255\n") and len(pgm.getvalue()) == 11 + 64
        back = grid_from_csv(csv.getvalue())
        np.testing.assert_allclose(back, a.reshape(4, 4), rtol=5e-6)
        assert argmax_cell(back) == argmax_cell(grid)
        assert levels.shape == (8, 8)

    def test_upsample_nearest(self):
        lv = heatmap_levels(np.array([[0.0, 1.0]]), upsample=2)
        np.testing.assert_array_equal(lv, [[0, 0, 255, 255], [0, 0, 255, 255]])

    def test_csv_argmax_random(self, rng):
        for _ in range(50):
            a = rng.dirichlet(np.ones(16) * 0.3)
            csv = io.StringIO()
            _, grid = export_attention(a, 4, 4, csv_sink=csv)
            assert argmax_cell(grid_from_csv(csv.getvalue())) == argmax_cell(grid)


class TestLocalization:
    def test_center_vs_overlap(self):
        box = (10, 10, 10, 10)  # rows 10..19, cols 10..19
        # 4x4 grid over 64 px: cell (0, 0) covers 0..15 with centre 8
        assert cell_hits_box((0, 0), (4, 4), 64, box)
        assert not cell_center_in_box((0, 0), (4, 4), 64, box)
        assert cell_center_in_box((1, 1), (4, 4), 64, (20, 20, 10, 10))
        assert not cell_hits_box((3, 3), (4, 4), 64, box)
