import numpy as np
import pytest

from urbanmorph.errors import (
    AlignmentError,
    EmptyStatisticsError,
    FormatError,
    ShapeError,
    VoidError,
)
from urbanmorph.raster import (
    NormalizationParams,
    Raster,
    clamp_nonnegative,
    denormalize,
    downsample_average,
    minmax_normalize,
    read_raster,
    resample_cubic,
    subtract,
    write_raster,
)

NODATA = -9999.0


def make(values, cell_size=1.0, origin=(0.0, 0.0), nodata=NODATA):
    arr = np.asarray(values, dtype=np.float32)
    return Raster(
        width=arr.shape[1],
        height=arr.shape[0],
        origin_x=origin[0],
        origin_y=origin[1],
        cell_size=cell_size,
        nodata=nodata,
        values=arr,
    )


class TestSubtract:
    def test_simple_difference(self):
        dsm = make([[110.0]])
        dem = make([[100.0]])
        assert subtract(dsm, dem).values[0, 0] == 10.0

    def test_nodata_propagates(self):
        dsm = make([[110.0, 105.0]])
        dem = make([[NODATA, 100.0]])
        out = subtract(dsm, dem)
        assert out.values[0, 0] == np.float32(NODATA)
        assert out.values[0, 1] == 5.0

    def test_matches_per_cell_loop(self):
        rng = np.random.default_rng(7)
        a = make(rng.uniform(0, 200, (3, 3)))
        b = make(rng.uniform(0, 100, (3, 3)))
        out = subtract(a, b)
        for r in range(3):
            for c in range(3):
                assert out.values[r, c] == np.float32(a.values[r, c]) - np.float32(
                    b.values[r, c]
                )

    def test_misaligned_raises(self):
        with pytest.raises(AlignmentError):
            subtract(make([[1.0]]), make([[1.0]], cell_size=2.0))

    def test_add_back_recovers(self):
        rng = np.random.default_rng(11)
        a = make(rng.uniform(-50, 50, (6, 6)))
        b = make(rng.uniform(-50, 50, (6, 6)))
        diff = subtract(a, b)
        recovered = diff.values + b.values
        np.testing.assert_allclose(recovered, a.values, rtol=1e-5, atol=1e-4)


class TestClamp:
    def test_values(self):
        r = make([[-2.5, 7.0, NODATA]])
        out = clamp_nonnegative(r)
        assert out.values[0, 0] == 0.0
        assert out.values[0, 1] == 7.0
        assert out.values[0, 2] == np.float32(NODATA)


class TestResampleCubic:
    def test_constant_preserved(self):
        r = make(np.full((4, 4), 42.0), cell_size=30.0)
        out = resample_cubic(r, 1.0)
        assert out.width == 120 and out.height == 120
        np.testing.assert_allclose(out.values, 42.0, atol=1e-5)

    def test_linear_ramp_reproduced(self):
        # Catmull-Rom reproduces affine fields; sample f(x,y) = x + y.
        size = 8
        xc = (np.arange(size) + 0.5) * 4.0
        vals = xc[None, :] + xc[:, None]
        r = make(vals, cell_size=4.0)
        out = resample_cubic(r, 1.0)
        ox = out.cell_centers_x()
        expect = ox[None, :] + out.cell_centers_y()[:, None]
        # Edge cells extrapolate with a clamped stencil; check the interior.
        interior = np.s_[8:-8, 8:-8]
        np.testing.assert_allclose(out.values[interior], expect[interior], atol=1e-4)

    def test_checkerboard_overshoot_bounded(self):
        vals = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = resample_cubic(make(vals, cell_size=4.0), 1.0)
        # Catmull-Rom overshoot is bounded by half the data range.
        assert out.values.min() >= 0.0 - 0.5
        assert out.values.max() <= 1.0 + 0.5

    def test_nodata_rejected(self):
        r = make([[1.0, NODATA], [2.0, 3.0]])
        with pytest.raises(VoidError):
            resample_cubic(r, 0.5)

    def test_bad_cell_size(self):
        with pytest.raises(ShapeError):
            resample_cubic(make([[1.0]]), 0.0)


class TestNormalize:
    def test_basic(self):
        r = make([[0.0, 5.0, 10.0]])
        out, params = minmax_normalize(r)
        np.testing.assert_allclose(out.values, [[0.0, 0.5, 1.0]])
        assert (params.min_value, params.max_value) == (0.0, 10.0)

    def test_constant_maps_to_zero(self):
        out, params = minmax_normalize(make([[7.0, 7.0, 7.0]]))
        np.testing.assert_array_equal(out.values, 0.0)
        assert (params.min_value, params.max_value) == (7.0, 7.0)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        r = make(rng.uniform(-30, 120, (8, 8)))
        norm, params = minmax_normalize(r)
        back = denormalize(norm, params)
        np.testing.assert_allclose(back.values, r.values, atol=1e-5 * 150)
        assert norm.values.min() >= 0.0 and norm.values.max() <= 1.0

    def test_nodata_preserved(self):
        r = make([[NODATA, 5.0, 10.0]])
        out, _ = minmax_normalize(r)
        assert out.values[0, 0] == np.float32(NODATA)

    def test_all_nodata_raises(self):
        with pytest.raises(EmptyStatisticsError):
            minmax_normalize(make([[NODATA]]))

    def test_explicit_params(self):
        out, params = minmax_normalize(make([[5.0]]), NormalizationParams(0.0, 10.0))
        assert out.values[0, 0] == 0.5


class TestDenormalize:
    def test_basic(self):
        out = denormalize(make([[0.5]]), NormalizationParams(0.0, 10.0))
        assert out.values[0, 0] == 5.0

    def test_degenerate_params(self):
        out = denormalize(make([[0.3, 0.9]]), NormalizationParams(4.0, 4.0))
        np.testing.assert_array_equal(out.values, 4.0)


class TestDownsample:
    def test_block_mean(self):
        r = make([[1.0, 2.0], [3.0, 4.0]])
        out = downsample_average(r, 2)
        assert out.values[0, 0] == 2.5
        assert out.cell_size == 2.0

    def test_constant(self):
        out = downsample_average(make(np.full((4, 4), 3.25)), 2)
        np.testing.assert_array_equal(out.values, 3.25)

    def test_matches_block_loop(self):
        rng = np.random.default_rng(3)
        r = make(rng.uniform(0, 10, (8, 8)))
        out = downsample_average(r, 4)
        for br in range(2):
            for bc in range(2):
                block = r.values[br * 4 : br * 4 + 4, bc * 4 : bc * 4 + 4]
                expect = np.mean(block.astype(np.float64))
                assert abs(out.values[br, bc] - expect) < 1e-5

    def test_nodata_block(self):
        vals = np.full((2, 2), NODATA)
        vals[0, 0] = 4.0
        r = make(vals)
        out = downsample_average(r, 2)
        assert out.values[0, 0] == 4.0
        out2 = downsample_average(make(np.full((2, 2), NODATA)), 2)
        assert out2.values[0, 0] == np.float32(NODATA)

    def test_non_divisible_raises(self):
        with pytest.raises(ShapeError):
            downsample_average(make(np.zeros((3, 3))), 2)

    def test_global_mean_preserved(self):
        rng = np.random.default_rng(9)
        r = make(rng.uniform(0, 100, (12, 12)))
        out = downsample_average(r, 3)
        before = np.mean(r.values.astype(np.float64))
        after = np.mean(out.values.astype(np.float64))
        assert abs(before - after) / abs(before) < 1e-5


class TestIO:
    def test_glbr_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        r = make(rng.uniform(-100, 100, (5, 7)), cell_size=2.5, origin=(10.0, -3.0))
        path = tmp_path / "r.glbr"
        write_raster(r, path)
        back = read_raster(path)
        assert back.width == 7 and back.height == 5
        assert back.origin_x == 10.0 and back.origin_y == -3.0
        assert back.cell_size == 2.5
        assert back.values.tobytes() == r.values.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.glbr"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError):
            read_raster(path)

    def test_truncation(self, tmp_path):
        r = make(np.zeros((4, 4)))
        path = tmp_path / "r.glbr"
        write_raster(r, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="byte"):
            read_raster(path)

    def test_ascii_fixture_with_nodata(self, tmp_path):
        path = tmp_path / "fix.asc"
        path.write_text(
            "ncols 3\nnrows 3\nxllcorner 0.0\nyllcorner 0.0\ncellsize 1.0\n"
            "NODATA_value -9999\n"
            "7 8 9\n4 -9999 6\n1 2 3\n"
        )
        r = read_raster(path)
        # ASCII rows are north-first; row 0 of the raster is the south edge.
        np.testing.assert_array_equal(r.values[0], [1.0, 2.0, 3.0])
        assert r.values[1, 1] == np.float32(-9999.0)
        assert not r.valid_mask[1, 1]

    def test_ascii_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        r = make(rng.uniform(0, 50, (4, 6)).astype(np.float32))
        path = tmp_path / "r.asc"
        write_raster(r, path)
        back = read_raster(path)
        np.testing.assert_array_equal(back.values, r.values)
