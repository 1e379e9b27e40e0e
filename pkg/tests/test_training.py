import os
import unittest

import numpy as np

from xai_downscale.errors import InputError, TrainingError
from xai_downscale.grid import GridGeometry, LandMask, TargetField
from xai_downscale.models import ArchitectureConfig, build_model
from xai_downscale.preprocess import apply_standardizer, fit_standardizer
from xai_downscale.synth import SyntheticSpec, synth_generate
from xai_downscale.training import (
    AdamState, TrainConfig, _batches, adam_step, mse_loss, split_days, train)

SLOW = os.environ.get('XAI_DOWNSCALE_SLOW_TESTS')


def synthetic_task(days=200, channels=2, size=4, seed=0):
    predictor_geometry = GridGeometry.regular(50.0, -110.0, size, size, 2.0)
    mask = LandMask.full(GridGeometry.regular(49.0, -109.0, size // 2, size // 2, 4.0))
    names = ['air-temperature@850', 'geopotential@500', 'specific-humidity@850', 'zonal-wind@500'][:channels]
    spec = SyntheticSpec(seed, predictor_geometry, names, mask, radius_km=450.0, days=days)
    predictors, predictand, truth = synth_generate(spec)
    return apply_standardizer(predictors, fit_standardizer(predictors)), predictand, truth


class TestTraining(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.predictors, cls.predictand, _ = synthetic_task()
        cls.arch = ArchitectureConfig('DeepESD', cls.predictors.sample_shape, mask=cls.predictand.mask,
                                      width_scale=0.2, seed=1)

    def test_mse_loss(self):
        loss, grad = mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))
        self.assertEqual(2.5, loss)
        self.assertTrue(np.array_equal([[1.0, 2.0]], grad))

    def test_mse_loss_validation(self):
        with self.assertRaises(InputError):
            mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))
        with self.assertRaises(InputError):
            mse_loss(np.zeros((1, 1)), np.array([[np.nan]]))

    def test_adam_first_step(self):
        params = {'w': np.array([0.0, 0.0])}
        updated, state = adam_step(params, {'w': np.array([0.5, -2.0])}, AdamState(), 0.1)
        self.assertEqual(1, state.t)
        self.assertTrue(np.allclose([-0.1, 0.1], updated['w'], atol=1e-6))
        self.assertTrue(np.array_equal([0.0, 0.0], params['w']))

    def test_adam_rejects_non_finite_gradient(self):
        with self.assertRaises(TrainingError):
            adam_step({'w': np.zeros(2)}, {'w': np.array([np.inf, 0.0])}, AdamState(), 0.1)

    def test_split_days(self):
        train_idx, val_idx = split_days(100, 0.1, np.random.default_rng(0))
        self.assertEqual(90, len(train_idx))
        self.assertEqual(10, len(val_idx))
        self.assertEqual(list(range(100)), sorted(np.concatenate([train_idx, val_idx]).tolist()))
        again, _ = split_days(100, 0.1, np.random.default_rng(0))
        self.assertTrue(np.array_equal(train_idx, again))

    def test_split_days_keeps_both_sides(self):
        train_idx, val_idx = split_days(3, 0.01, np.random.default_rng(0))
        self.assertEqual(2, len(train_idx))
        self.assertEqual(1, len(val_idx))

    def test_batches_merge_trailing_singleton(self):
        batches = _batches(np.arange(5), 2, merge_singleton=True)
        self.assertEqual([[0, 1], [2, 3, 4]], [b.tolist() for b in batches])
        batches = _batches(np.arange(5), 2, merge_singleton=False)
        self.assertEqual([[0, 1], [2, 3], [4]], [b.tolist() for b in batches])

    def test_train_config_validation(self):
        with self.assertRaises(InputError):
            TrainConfig(validation_fraction=1.0)
        with self.assertRaises(InputError):
            TrainConfig(batch_size=0)
        with self.assertRaises(InputError):
            TrainConfig(learning_rate=0.0)

    def test_training_reduces_validation_loss(self):
        config = TrainConfig(learning_rate=1e-2, batch_size=32, max_epochs=20, patience=20, seed=2)
        model = build_model(self.arch)
        before = model.fingerprint()
        result = train(model, self.predictors, self.predictand, config)
        self.assertEqual(before, model.fingerprint())
        self.assertLess(result.best_val_loss, result.history[0][2])
        val_idx = result.split['validation']
        val_loss, _ = mse_loss(result.model.predict(self.predictors.data[val_idx]),
                               self.predictand.values[val_idx].astype(result.model.dtype))
        self.assertAlmostEqual(result.best_val_loss, val_loss, delta=1e-6 * max(1.0, val_loss))
        self.assertEqual(result.best_epoch, [row[0] for row in result.history if row[2] == result.best_val_loss][0])

    def test_early_stopping_bookkeeping(self):
        config = TrainConfig(learning_rate=1e-1, batch_size=64, max_epochs=15, patience=2, seed=3)
        result = train(build_model(self.arch), self.predictors, self.predictand, config)
        if result.stopped_early:
            self.assertEqual(config.patience, len(result.history) - result.best_epoch)
        else:
            self.assertEqual(config.max_epochs, len(result.history))
        lines = result.log_text().splitlines()
        self.assertEqual('epoch\ttrain_loss\tval_loss\tbest', lines[0])
        self.assertEqual(len(result.history) + 1, len(lines))

    def test_training_is_deterministic(self):
        config = TrainConfig(learning_rate=1e-2, batch_size=32, max_epochs=3, patience=3, seed=4)
        first = train(build_model(self.arch), self.predictors, self.predictand, config)
        second = train(build_model(self.arch), self.predictors, self.predictand, config)
        self.assertEqual(first.history, second.history)
        self.assertEqual(first.model.fingerprint(), second.model.fingerprint())

    def test_training_needs_aligned_days(self):
        config = TrainConfig(max_epochs=1)
        shifted = self.predictand.select_times(('2001-01-02', '2001-07-19'))
        with self.assertRaises(InputError):
            train(build_model(self.arch), self.predictors, shifted, config)

    def test_batchnorm_needs_batches_of_two(self):
        mask = LandMask.full(GridGeometry(np.arange(16.0), np.arange(16.0)))
        arch = ArchitectureConfig('UNET', (1, 16, 16), mask=mask, width_scale=0.05)
        predictors, _, _ = synthetic_task(days=4, channels=1, size=16)
        predictand = TargetField(np.zeros((4, 256)), mask, predictors.times)
        with self.assertRaises(InputError):
            train(build_model(arch), predictors, predictand, TrainConfig(batch_size=1, max_epochs=1))

    @unittest.skipUnless(SLOW, 'set XAI_DOWNSCALE_SLOW_TESTS to run long training checks')
    def test_deepesd_fits_linear_task(self):
        predictors, predictand, _ = synthetic_task(days=500, channels=4, size=8)
        arch = ArchitectureConfig('DeepESD', predictors.sample_shape, mask=predictand.mask, seed=0)
        config = TrainConfig(learning_rate=1e-4, batch_size=100, max_epochs=500, patience=50, seed=0)
        result = train(build_model(arch), predictors, predictand, config)
        train_idx = result.split['train']
        loss, _ = mse_loss(result.model.predict(predictors.data[train_idx]),
                           predictand.values[train_idx].astype(np.float32))
        self.assertLess(loss, 1e-3 * float(np.var(predictand.values)))


if __name__ == "__main__":
    unittest.main(failfast=True)
