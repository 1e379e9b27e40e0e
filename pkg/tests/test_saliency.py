import os
import unittest

import numpy as np

from xai_downscale.errors import AttributionError, InputError
from xai_downscale.graph import ModelGraph
from xai_downscale.grid import GridGeometry, GriddedField, LandMask, haversine_distance
from xai_downscale.layers import Conv2D, Dense, Flatten, ReLU
from xai_downscale.models import ArchitectureConfig, build_model
from xai_downscale.saliency import (
    IntegratedGradients, SaliencyCube, accumulate_asm, asm_mass_fraction, completeness_error,
    compute_sdm, gridbox_diagonal_km, integrated_gradients, location_map, normalize_threshold,
    saliency_cubes, sdm_within, support_neighbourhood, trapezoid_weights)
import xai_downscale.helpers as H

SLOW = os.environ.get('XAI_DOWNSCALE_SLOW_TESTS')


def linear_model(input_shape, outputs=1, seed=0):
    graph = ModelGraph(input_shape, seed, dtype=np.float64)
    graph.add(Flatten('flat'))
    graph.add(Dense('dense', outputs))
    rng = np.random.default_rng(seed)
    graph.set_parameters({'dense.kernel': rng.standard_normal(graph.params['dense.kernel'].shape)})
    return graph


def relu_model(seed):
    graph = ModelGraph((1, 4, 4), seed, dtype=np.float64)
    graph.add(Conv2D('conv', 2))
    graph.add(ReLU('relu'))
    graph.add(Flatten('flat'))
    graph.add(Dense('hidden', 8, 'relu'))
    graph.add(Dense('out', 2))
    rng = np.random.default_rng(seed)
    graph.set_parameters({name: rng.normal(0.0, 0.5, graph.params[name].shape)
                          for name in graph.params.trainable_names()})
    return graph


class TestSaliency(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.rng = np.random.default_rng(7)
        cls.predictor_geometry = GridGeometry([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], resolution=1.0)
        cls.single = LandMask.full(GridGeometry([1.0], [1.0], resolution=0.5))

    def test_trapezoid_weights(self):
        self.assertTrue(np.allclose([0.5, 0.5], trapezoid_weights(1)))
        weights = trapezoid_weights(4)
        self.assertAlmostEqual(1.0, weights.sum(), places=12)
        self.assertEqual(0.125, weights[0])

    def test_linear_model_single_step(self):
        model = linear_model((2, 2, 2))
        x = self.rng.standard_normal((2, 2, 2))
        attribution = integrated_gradients(model, x, None, 0, steps=1)
        expected = model.params['dense.kernel'][:, 0].reshape(2, 2, 2) * x
        self.assertTrue(np.allclose(expected, attribution, atol=1e-12))

    def test_linear_model_custom_baseline(self):
        model = linear_model((1, 2, 2))
        x = self.rng.standard_normal((1, 2, 2))
        baseline = self.rng.standard_normal((1, 2, 2))
        attribution = integrated_gradients(model, x, baseline, 0, steps=3)
        self.assertLess(completeness_error(model, x, baseline, 0, attribution), 1e-12)

    def test_completeness_on_relu_networks(self):
        better = 0
        for seed in range(20):
            model = relu_model(seed)
            x = np.random.default_rng(100 + seed).standard_normal((1, 4, 4))
            fine = IntegratedGradients(model, x, None, 1024)
            coarse = IntegratedGradients(model, x, None, 32)
            change = abs(fine.output_change(0))
            fine_gap = fine.completeness_gap(0, fine(0))
            coarse_gap = coarse.completeness_gap(0, coarse(0))
            self.assertLessEqual(fine_gap, 1e-3 * change + 1e-6)
            if fine_gap <= coarse_gap + 1e-12:
                better += 1
        self.assertGreaterEqual(better, 19)

    def test_disconnected_channel_gets_no_attribution(self):
        model = linear_model((2, 2, 2))
        kernel = model.params['dense.kernel'].copy()
        kernel[4:] = 0.0
        model.set_parameters({'dense.kernel': kernel})
        attribution = integrated_gradients(model, self.rng.standard_normal((2, 2, 2)), None, 0, steps=8)
        self.assertTrue(np.all(attribution[1] == 0.0))

    def test_input_validation(self):
        model = linear_model((1, 2, 2))
        with self.assertRaises(InputError):
            integrated_gradients(model, np.ones((2, 2, 2)), None, 0)
        with self.assertRaises(InputError):
            integrated_gradients(model, np.ones((1, 2, 2)), np.ones((1, 3, 3)), 0)
        with self.assertRaises(InputError):
            integrated_gradients(model, np.ones((1, 2, 2)), None, 0, steps=0)
        with self.assertRaises(InputError):
            integrated_gradients(model, np.ones((1, 2, 2)), None, 1)

    def test_normalize_threshold(self):
        raw = np.zeros((2, 1, 1, 3))
        raw[0, 0, 0] = [-2.0, 1.0, 0.1]
        cube = normalize_threshold(raw, day='2001-01-01')
        self.assertTrue(np.array_equal([1.0, 0.5, 0.0], cube.values[0, 0, 0]))
        self.assertTrue(np.all(cube.values[1] == 0.0))
        self.assertEqual([1], cube.empty_locations)
        self.assertEqual(0.1, cube.provenance['threshold'])

    def test_normalize_threshold_rejects_non_finite(self):
        raw = np.ones((1, 1, 2, 2))
        raw[0, 0, 1, 1] = np.inf
        with self.assertRaises(AttributionError):
            normalize_threshold(raw)

    def test_cube_values_in_unit_interval(self):
        with self.assertRaises(InputError):
            SaliencyCube(np.full((1, 1, 2, 2), 1.5))

    def _field(self, model, days=2):
        times = H.daily_dates('2001-03-01', days)
        geometry = GridGeometry.regular(40.0, -10.0, model.input_shape[1], model.input_shape[2], 1.0)
        channels = ['air-temperature@850', 'geopotential@500'][:model.input_shape[0]]
        data = self.rng.standard_normal((days,) + model.input_shape)
        return GriddedField(data, geometry, channels, times)

    def test_saliency_cubes(self):
        model = build_model(ArchitectureConfig('DeepESD', (2, 4, 4), n_locations=3, width_scale=0.2, seed=3))
        field = self._field(model)
        cubes = saliency_cubes(model, field, steps=8)
        self.assertEqual(2, len(cubes))
        for cube in cubes:
            self.assertEqual((3, 2, 4, 4), cube.values.shape)
            self.assertTrue(np.all((cube.values >= 0.0) & (cube.values <= 1.0)))
            for location in range(3):
                if location not in cube.empty_locations:
                    self.assertEqual(1.0, cube.values[location].max())
            self.assertEqual(model.fingerprint(), cube.provenance['model_id'])
            self.assertEqual(8, cube.provenance['steps'])
            self.assertEqual('zeros', cube.provenance['baseline'])
        self.assertEqual((2, 4, 4), location_map(cubes[0], 2).shape)
        with self.assertRaises(InputError):
            location_map(cubes[0], 3)

    def test_saliency_of_constant_model_is_empty(self):
        model = build_model(ArchitectureConfig('DeepESD', (2, 4, 4), n_locations=3, width_scale=0.2, seed=3))
        model.set_parameters({'dense.kernel': np.zeros_like(model.params['dense.kernel'])})
        cubes = saliency_cubes(model, self._field(model, days=1), steps=4)
        self.assertTrue(np.all(cubes[0].values == 0.0))
        self.assertEqual([0, 1, 2], cubes[0].empty_locations)

    def test_saliency_subset_of_locations(self):
        model = build_model(ArchitectureConfig('DeepESD', (2, 4, 4), n_locations=3, width_scale=0.2, seed=3))
        cubes = saliency_cubes(model, self._field(model, days=1), steps=4, locations=[2])
        self.assertEqual((1, 2, 4, 4), cubes[0].values.shape)
        self.assertEqual([2], cubes[0].provenance['locations'])

    def test_accumulate_asm(self):
        first = np.zeros((2, 1, 1, 2))
        first[0, 0, 0] = [1.0, 0.5]
        first[1, 0, 0] = [0.0, 1.0]
        second = np.zeros((2, 1, 1, 2))
        second[:, 0, 0, 0] = 1.0
        cubes = [SaliencyCube(first, '2001-01-01'), SaliencyCube(second, '2001-01-02')]
        mean = accumulate_asm(cubes)
        self.assertTrue(np.allclose([[[1.5, 0.75]]], mean.values))
        self.assertEqual(2, mean.n_days)
        total = accumulate_asm(cubes, 'sum')
        self.assertTrue(np.allclose([[[3.0, 1.5]]], total.values))
        with self.assertRaises(InputError):
            accumulate_asm([])
        with self.assertRaises(InputError):
            accumulate_asm(cubes, 'median')

    def _cube(self, cells, channels=1):
        values = np.zeros((1, channels, 3, 3))
        for channel, row, col in cells:
            values[0, channel, row, col] = 1.0
        return SaliencyCube(values, '2001-01-01')

    def test_sdm_centre_cell(self):
        sdm = compute_sdm([self._cube([(0, 1, 1)])], self.predictor_geometry, self.single)
        self.assertEqual([0], sdm.labels)
        self.assertEqual(0.0, sdm.row(0)[0])

    def test_sdm_neighbour(self):
        cube = self._cube([(0, 1, 1), (0, 1, 2)])
        distance = haversine_distance((1.0, 2.0), (1.0, 1.0))
        raw = compute_sdm([cube], self.predictor_geometry, self.single)
        self.assertAlmostEqual(distance, raw.row(0)[0], places=9)
        normalized = compute_sdm([cube], self.predictor_geometry, self.single, normalized=True)
        self.assertAlmostEqual(distance / 2.0, normalized.row(0)[0], places=9)

    def test_sdm_channel_options(self):
        cube = self._cube([(0, 1, 2), (1, 0, 1)], channels=2)
        per_channel = compute_sdm([cube], self.predictor_geometry, self.single)
        combined = compute_sdm([cube], self.predictor_geometry, self.single, combine_channels=True)
        self.assertEqual(['all'], combined.labels)
        self.assertAlmostEqual(per_channel.values.sum(), combined.row('all')[0], places=9)
        only = compute_sdm([cube], self.predictor_geometry, self.single, channel=1)
        self.assertEqual([1], only.labels)
        self.assertAlmostEqual(per_channel.row(1)[0], only.row(1)[0], places=12)
        with self.assertRaises(InputError):
            compute_sdm([cube], self.predictor_geometry, self.single, channel=2)

    def test_sdm_of_empty_map_is_zero(self):
        sdm = compute_sdm([self._cube([])], self.predictor_geometry, self.single, normalized=True)
        self.assertEqual(0.0, sdm.row(0)[0])

    def test_locality_helpers(self):
        diagonal = gridbox_diagonal_km(self.predictor_geometry)
        self.assertAlmostEqual(haversine_distance((-0.5, 0.0), (0.5, 1.0)), diagonal, places=6)
        supports = np.zeros((3, 3), dtype=bool)
        supports[1, 1] = True
        near = support_neighbourhood(self.predictor_geometry, supports, 0.0)
        self.assertTrue(np.array_equal(supports, near))
        self.assertEqual(5, int(support_neighbourhood(self.predictor_geometry, supports, 112.0).sum()))
        cube = self._cube([(0, 1, 1), (0, 0, 0)])
        asm = accumulate_asm([cube])
        self.assertEqual(0.5, asm_mass_fraction(asm, 0, supports))
        sdm = compute_sdm([cube], self.predictor_geometry, self.single, normalized=True)
        self.assertEqual(1.0, sdm_within(sdm, 0, diagonal))

    @unittest.skipUnless(SLOW, 'set XAI_DOWNSCALE_SLOW_TESTS to run long training checks')
    def test_trained_model_saliency_is_local(self):
        from xai_downscale.preprocess import apply_standardizer, fit_standardizer
        from xai_downscale.synth import SyntheticSpec, synth_generate
        from xai_downscale.training import TrainConfig, train
        predictor_geometry = GridGeometry.regular(50.0, -110.0, 8, 8, 2.0)
        mask = LandMask.full(GridGeometry.regular(51.0, -109.0, 4, 4, 4.0))
        spec = SyntheticSpec(0, predictor_geometry, ['air-temperature@850', 'geopotential@500'], mask,
                             radius_km=450.0, days=500)
        predictors, predictand, truth = synth_generate(spec)
        standardized = apply_standardizer(predictors, fit_standardizer(predictors))
        arch = ArchitectureConfig('DeepESD', standardized.sample_shape, mask=mask, seed=0)
        result = train(build_model(arch), standardized, predictand,
                       TrainConfig(learning_rate=1e-3, batch_size=50, max_epochs=300, patience=30))
        cubes = saliency_cubes(result.model, standardized.select_times(('2001-01-01', '2001-01-20')), steps=32)
        asm = accumulate_asm(cubes)
        near = support_neighbourhood(predictor_geometry, truth['supports'], gridbox_diagonal_km(predictor_geometry))
        self.assertGreaterEqual(asm_mass_fraction(asm, 0, near), 0.9)
        sdm = compute_sdm(cubes, predictor_geometry, mask, channel=0, normalized=True)
        self.assertGreaterEqual(sdm_within(sdm, 0, 450.0 + gridbox_diagonal_km(predictor_geometry)), 0.8)

    @unittest.skipUnless(SLOW, 'set XAI_DOWNSCALE_SLOW_TESTS to run long training checks')
    def test_unet_is_more_local_than_pan(self):
        from xai_downscale.preprocess import apply_standardizer, fit_standardizer
        from xai_downscale.synth import SyntheticSpec, synth_generate
        from xai_downscale.training import TrainConfig, train
        geometry = GridGeometry.regular(30.0, -110.0, 16, 16, 2.0)
        cells = np.zeros(geometry.shape, dtype=bool)
        cells[6:10, 6:10] = True
        mask = LandMask(geometry, cells)
        channels = ['air-temperature@850', 'geopotential@500']
        radius = 2.0 * haversine_distance((45.0, -95.0), (47.0, -95.0))

        _, clean, _ = synth_generate(SyntheticSpec(0, geometry, channels, mask, radius_km=radius, days=400))
        spec = SyntheticSpec(0, geometry, channels, mask, radius_km=radius, days=400,
                             noise_std=0.1 * float(clean.values.std()))
        predictors, predictand, truth = synth_generate(spec)
        standardized = apply_standardizer(predictors, fit_standardizer(predictors))
        explained = standardized.select_times(('2001-01-01', '2001-01-10'))

        runs = dict()
        for architecture, width in (('UNET', 0.125), ('PAN', 1.0)):
            arch = ArchitectureConfig(architecture, standardized.sample_shape, mask=mask, width_scale=width, seed=0)
            result = train(build_model(arch), standardized, predictand,
                           TrainConfig(learning_rate=1e-3, batch_size=50, max_epochs=300, patience=30))
            self.assertLess(result.best_val_loss, 0.25 * float(predictand.values.var()), architecture)
            cubes = saliency_cubes(result.model, explained, steps=32)
            sdm = compute_sdm(cubes, geometry, mask, channel=0, normalized=True)
            runs[architecture] = (result.best_val_loss, float(np.median(sdm.row(0))), cubes)

        self.assertLess(runs['UNET'][1], runs['PAN'][1])
        _, _, cubes = min(runs.values(), key=lambda run: run[0])
        near = support_neighbourhood(geometry, truth['supports'], gridbox_diagonal_km(geometry))
        self.assertGreaterEqual(asm_mass_fraction(accumulate_asm(cubes), 0, near), 0.9)


if __name__ == "__main__":
    unittest.main(failfast=True)
