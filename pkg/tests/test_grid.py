import datetime
import unittest

import numpy as np

from xai_downscale.errors import InputError
from xai_downscale.grid import (
    ChannelSpec, GridGeometry, GriddedField, LandMask, TargetField,
    bilinear_regrid, distance_field, haversine_distance)
import xai_downscale.helpers as H


class TestGrid(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.unit = GridGeometry([0.0, 1.0], [0.0, 1.0], resolution=1.0)
        cls.descending = GridGeometry([47.0, 45.0, 43.0], [-107.0, -105.0], resolution=2.0)
        cls.times = H.daily_dates('2001-01-01', 3)

    def test_haversine_antipodes(self):
        self.assertAlmostEqual(haversine_distance((0.0, 0.0), (0.0, 180.0)), 20015.087, places=3)

    def test_haversine_pole_to_equator(self):
        self.assertAlmostEqual(haversine_distance((90.0, 0.0), (0.0, 0.0)), 10007.543, places=3)

    def test_haversine_symmetry(self):
        a, b = (48.1, -3.2), (-12.5, 77.0)
        self.assertEqual(haversine_distance(a, b), haversine_distance(b, a))
        self.assertEqual(0.0, haversine_distance(a, a))

    def test_haversine_rejects_bad_latitude(self):
        with self.assertRaises(InputError):
            haversine_distance((91.0, 0.0), (0.0, 0.0))
        with self.assertRaises(InputError):
            haversine_distance((float('nan'), 0.0), (0.0, 0.0))

    def test_distance_field(self):
        dist = distance_field(self.unit, (0.0, 0.0))
        self.assertEqual((2, 2), dist.shape)
        self.assertEqual(0.0, dist[0, 0])
        self.assertAlmostEqual(dist[0, 1], 111.195, places=3)
        self.assertAlmostEqual(dist[1, 0], 111.195, places=3)
        self.assertAlmostEqual(dist[1, 1], 157.25, places=2)

    def test_distance_field_containing_cell_is_zero(self):
        dist = distance_field(self.unit, (0.2, 0.9))
        self.assertEqual(0.0, dist[0, 1])
        self.assertTrue(np.all(dist[[0, 1, 1], [0, 0, 1]] > 0.0))

    def test_distance_field_needs_valid_target(self):
        with self.assertRaises(InputError):
            distance_field(self.unit, (95.0, 0.0))

    def test_geometry_validation(self):
        with self.assertRaises(InputError):
            GridGeometry([], [0.0])
        with self.assertRaises(InputError):
            GridGeometry([0.0, 0.0], [0.0])
        with self.assertRaises(InputError):
            GridGeometry([100.0], [0.0])
        with self.assertRaises(InputError):
            GridGeometry([0.0], [0.0], lon_convention='east')

    def test_center_index_round_trip(self):
        for row in range(3):
            for col in range(2):
                lat, lon = self.descending.center(row, col)
                self.assertEqual((row, col), self.descending.index_of(lat, lon))

    def test_contains_cell(self):
        self.assertEqual((1, 0), self.descending.contains_cell(45.5, -106.5))
        self.assertIsNone(self.descending.contains_cell(60.0, -106.0))

    def test_geometry_dict_round_trip(self):
        self.assertEqual(self.descending, GridGeometry.from_dict(self.descending.to_dict()))
        self.assertNotEqual(self.unit, self.descending)

    def test_channel_spec(self):
        channel = ChannelSpec.parse('air-temperature@850')
        self.assertEqual('air-temperature', channel.variable)
        self.assertEqual(850, channel.level)
        self.assertEqual('air-temperature@850', str(channel))
        self.assertFalse(channel.is_other)
        self.assertTrue(ChannelSpec.parse('vorticity@500').is_other)
        with self.assertRaises(InputError):
            ChannelSpec.parse('air-temperature')
        with self.assertRaises(InputError):
            ChannelSpec.parse('air-temperature@high')

    def test_gridded_field_validation(self):
        data = np.zeros((3, 1, 2, 2))
        field = GriddedField(data, self.unit, ['geopotential@500'], self.times)
        self.assertEqual((1, 2, 2), field.sample_shape)
        self.assertFalse(field.data.flags.writeable)
        with self.assertRaises(InputError):
            GriddedField(np.zeros((2, 1, 2, 2)), self.unit, ['geopotential@500'], self.times)
        with self.assertRaises(InputError):
            GriddedField(np.zeros((3, 2, 2, 2)), self.unit, ['geopotential@500', 'geopotential@500'],
                         self.times)
        bad = data.copy()
        bad[1, 0, 0, 0] = np.nan
        with self.assertRaises(InputError):
            GriddedField(bad, self.unit, ['geopotential@500'], self.times)

    def test_select_times(self):
        data = np.arange(12, dtype=np.float64).reshape(3, 1, 2, 2)
        field = GriddedField(data, self.unit, ['geopotential@500'], self.times)
        subset = field.select_times('2001-01-02..2001-01-03')
        self.assertEqual([datetime.date(2001, 1, 2), datetime.date(2001, 1, 3)], subset.times)
        self.assertEqual(4.0, subset.data[0, 0, 0, 0])
        self.assertEqual(0, len(field.select_times(None, months={7})))

    def test_land_mask_enumeration(self):
        cells = np.array([[True, False], [True, True], [False, True]])
        mask = LandMask(self.descending, cells)
        self.assertEqual(4, len(mask))
        self.assertEqual([0, 1, 1, 2], list(mask.rows))
        self.assertEqual([0, 0, 1, 1], list(mask.cols))
        lats, lons = mask.coordinates()
        self.assertEqual(47.0, lats[0])
        self.assertEqual(-105.0, lons[-1])

    def test_land_mask_enumeration_starts_north_west(self):
        ascending = GridGeometry([43.0, 45.0], [-107.0, -105.0])
        mask = LandMask.full(ascending)
        lats, lons = mask.coordinates()
        self.assertEqual([45.0, 45.0, 43.0, 43.0], list(lats))
        self.assertEqual([-107.0, -105.0, -107.0, -105.0], list(lons))

    def test_land_mask_scatter_gather(self):
        mask = LandMask(self.unit, [[True, False], [False, True]])
        grid = mask.scatter([1.0, 2.0], fill=0.0)
        self.assertTrue(np.array_equal([[1.0, 0.0], [0.0, 2.0]], grid))
        self.assertTrue(np.array_equal([1.0, 2.0], mask.gather(grid)))
        with self.assertRaises(InputError):
            mask.scatter([1.0, 2.0, 3.0])

    def test_target_field(self):
        mask = LandMask.full(self.unit)
        target = TargetField(np.ones((3, 4)), mask, self.times)
        self.assertEqual(3, len(target))
        with self.assertRaises(InputError):
            TargetField(np.ones((3, 3)), mask, self.times)

    def test_bilinear_corners_and_centre(self):
        data = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
        field = GriddedField(data, self.unit, ['geopotential@500'], self.times[:1])
        same = bilinear_regrid(field, self.unit)
        self.assertTrue(np.allclose(same.data, data, atol=1e-12))
        centre = bilinear_regrid(field, GridGeometry([0.5], [0.5]))
        self.assertAlmostEqual(1.5, centre.data[0, 0, 0, 0], places=12)

    def test_bilinear_there_and_back(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((3, 2, 3, 2))
        field = GriddedField(data, self.descending, ['air-temperature@850', 'geopotential@500'], self.times)
        self.assertTrue(np.allclose(bilinear_regrid(field, self.descending).data, data, atol=1e-12))

        fine = GridGeometry([47.0, 46.0, 45.0, 44.0, 43.0], [-107.0, -106.0, -105.0], resolution=1.0)
        refined = bilinear_regrid(field, fine)
        self.assertTrue(np.allclose(refined.data[:, :, ::2, ::2], data, atol=1e-12))
        self.assertTrue(np.allclose(refined.data[:, :, 1, 0], 0.5 * (data[:, :, 0, 0] + data[:, :, 1, 0]),
                                    atol=1e-12))
        back = bilinear_regrid(refined, self.descending)
        self.assertEqual(self.descending, back.geometry)
        self.assertTrue(np.allclose(back.data, data, atol=1e-12))

    def test_bilinear_clamps_outside_hull(self):
        data = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
        field = GriddedField(data, self.unit, ['geopotential@500'], self.times[:1])
        clamped = bilinear_regrid(field, GridGeometry([0.5, 2.0], [0.0]))
        self.assertAlmostEqual(1.0, clamped.data[0, 0, 0, 0], places=12)
        self.assertAlmostEqual(2.0, clamped.data[0, 0, 1, 0], places=12)

    def test_bilinear_rejects_disjoint_destination(self):
        field = GriddedField(np.zeros((1, 1, 2, 2)), self.unit, ['geopotential@500'], self.times[:1])
        with self.assertRaises(InputError):
            bilinear_regrid(field, GridGeometry([10.0], [10.0]))
        small = GriddedField(np.zeros((1, 1, 1, 1)), GridGeometry([0.0], [0.0]), ['geopotential@500'],
                             self.times[:1])
        with self.assertRaises(InputError):
            bilinear_regrid(small, self.unit)

    def test_helpers_parse_period(self):
        self.assertEqual((datetime.date(2001, 1, 1), datetime.date(2001, 12, 31)),
                         H.parse_period('2001-01-01..2001-12-31'))
        self.assertIsNone(H.parse_period(None))
        with self.assertRaises(InputError):
            H.parse_period('2001-12-31..2001-01-01')
        with self.assertRaises(InputError):
            H.parse_period('2001-01-01')


if __name__ == "__main__":
    unittest.main(failfast=True)
