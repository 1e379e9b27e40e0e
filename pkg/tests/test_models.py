import unittest

import numpy as np

from xai_downscale.errors import GraphBuildError
from xai_downscale.grid import GridGeometry, LandMask
from xai_downscale.models import ArchitectureConfig, build_model, head_depth, scaled


class TestModels(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.fine = GridGeometry(np.arange(32.0), np.arange(32.0), resolution=1.0)
        cells = np.zeros((32, 32), dtype=bool)
        cells[4:20, 8:24] = True
        cls.mask = LandMask(cls.fine, cells)
        cls.same = LandMask.full(GridGeometry(np.arange(16.0), np.arange(16.0), resolution=2.0))

    def test_scaled(self):
        self.assertEqual(5, scaled(50, 0.1))
        self.assertEqual(3, scaled(25, 0.1))
        self.assertEqual(103, scaled(1024, 0.1))
        self.assertEqual(1, scaled(10, 0.01))
        self.assertEqual(64, scaled(64, 1.0))

    def test_deepesd_parameter_count(self):
        model = build_model(ArchitectureConfig('DeepESD', (4, 8, 8), n_locations=16))
        self.assertEqual(25641, model.parameter_count())
        self.assertEqual((16,), model.output_shape)
        self.assertEqual(['conv2d', 'relu', 'conv2d', 'relu', 'conv2d', 'relu', 'flatten', 'dense'],
                         model.layer_kinds())

    def test_pan_hidden_layer(self):
        model = build_model(ArchitectureConfig('PAN', (4, 8, 8), n_locations=16, width_scale=0.2))
        self.assertEqual((8,), model.node('dense_hidden').shape)
        self.assertEqual('relu', model.node('dense_hidden').layer.activation)
        self.assertEqual('linear', model.node('dense').layer.activation)
        self.assertEqual(5, model.layer_kinds().count('conv2d'))
        self.assertNotIn('batchnorm', model.layer_kinds())

    def test_pan_odd_locations(self):
        model = build_model(ArchitectureConfig('PAN', (1, 4, 4), n_locations=5, width_scale=0.1))
        self.assertEqual((3,), model.node('dense_hidden').shape)

    def test_unet_is_fully_convolutional(self):
        model = build_model(ArchitectureConfig('UNET', (3, 16, 16), mask=self.mask, width_scale=0.1,
                                               upsampling_factor=2))
        self.assertNotIn('dense', model.layer_kinds())
        self.assertEqual((len(self.mask),), model.output_shape)
        self.assertEqual(1, model.layer_kinds().count('mask_gather'))
        x = np.random.default_rng(0).standard_normal((2, 3, 16, 16))
        self.assertEqual((2, 256), model.predict(x).shape)

    def test_unet_same_resolution(self):
        model = build_model(ArchitectureConfig('UNET', (2, 16, 16), mask=self.same, width_scale=0.1))
        self.assertEqual(0, sum(1 for name in model.spec() if name['name'].startswith('head') and
                                name['kind'] == 'conv_transpose2d'))
        self.assertEqual((256,), model.output_shape)

    def test_unet_decoder_block_layout(self):
        model = build_model(ArchitectureConfig('UNET', (2, 16, 16), mask=self.same, width_scale=0.1))
        names = [layer['name'] for layer in model.spec()]
        for block in range(4):
            start = names.index('dec{}_up'.format(block))
            self.assertEqual(['dec{}_up'.format(block), 'dec{}_up_relu'.format(block), 'dec{}_concat'.format(block),
                              'dec{}_conv'.format(block), 'dec{}_relu'.format(block)], names[start:start + 5])

    def test_head_depth(self):
        self.assertEqual(0, head_depth(1))
        self.assertEqual(1, head_depth(2))
        self.assertEqual(2, head_depth(3))
        self.assertEqual(2, head_depth(4))

    def test_unet_needs_divisible_input(self):
        config = ArchitectureConfig('UNET', (2, 8, 8), mask=self.same, width_scale=0.1)
        with self.assertRaises(GraphBuildError):
            build_model(config)
        padded = ArchitectureConfig('UNET', (2, 8, 8), mask=self.same, width_scale=0.1, pad_input=True)
        model = build_model(padded)
        self.assertEqual('fit2d', model.layer_kinds()[0])
        self.assertEqual((256,), model.output_shape)

    def test_unet_needs_mask(self):
        with self.assertRaises(GraphBuildError):
            build_model(ArchitectureConfig('UNET', (2, 16, 16), n_locations=4))

    def test_config_validation(self):
        with self.assertRaises(GraphBuildError):
            ArchitectureConfig('ResNet', (2, 8, 8), n_locations=4)
        with self.assertRaises(GraphBuildError):
            ArchitectureConfig('DeepESD', (2, 8, 8), n_locations=4, width_scale=0.0)
        with self.assertRaises(GraphBuildError):
            ArchitectureConfig('DeepESD', (2, 8, 8), n_locations=0)
        with self.assertRaises(GraphBuildError):
            ArchitectureConfig('DeepESD', (8, 8), n_locations=4)
        with self.assertRaises(GraphBuildError):
            ArchitectureConfig('DeepESD', (2, 8, 8), n_locations=3, mask=self.same)

    def test_seeded_initialisation(self):
        config = ArchitectureConfig('DeepESD', (2, 8, 8), n_locations=4, width_scale=0.2, seed=5)
        self.assertEqual(build_model(config).fingerprint(), build_model(config).fingerprint())
        other = ArchitectureConfig('DeepESD', (2, 8, 8), n_locations=4, width_scale=0.2, seed=6)
        self.assertNotEqual(build_model(config).fingerprint(), build_model(other).fingerprint())

    def test_architecture_recorded(self):
        model = build_model(ArchitectureConfig('PAN', (2, 8, 8), n_locations=4, width_scale=0.2))
        self.assertEqual('PAN', model.architecture['architecture'])
        self.assertEqual(0.2, model.architecture['width_scale'])


if __name__ == "__main__":
    unittest.main(failfast=True)
