"""
Builders for the three downscaling architectures.

- DeepESD: three convolutions and a single linear dense layer.
- PAN: five convolutions and two dense layers (ReLU hidden, linear output).
- UNET: fully convolutional encoder/decoder with skip connections and an
  upsampling head that lands on the predictand grid.

All kernel counts are multiplied by a width scale ``s`` in (0, 1] (rounded
up, at least 1) so the same topologies can be built at desk scale.
"""

import logging
import math

import numpy as np

from xai_downscale.errors import GraphBuildError
from xai_downscale.graph import ModelGraph
from xai_downscale.layers import (
    BatchNorm, ConcatSkip, Conv2D, ConvTranspose2D, Dense, Fit2D, Flatten,
    MaskGather, MaxPool2, ReLU)

log = logging.getLogger(__name__)

DEEPESD_FILTERS = (50, 25, 10)
PAN_FILTERS = (15, 20, 20, 20, 40)
UNET_ENCODER = (64, 128, 256, 512, 1024)
UNET_DECODER = (512, 256, 128, 64)
UNET_DEPTH = 2 ** (len(UNET_ENCODER) - 1)

ARCHITECTURES = ('UNET', 'DeepESD', 'PAN')


def scaled(width, scale):
    """ Kernel count after width scaling: ceil(width * scale), at least 1 """

    return max(1, int(math.ceil(round(width * scale, 9))))


class ArchitectureConfig(object):
    """
    Everything a builder needs.

    :param architecture: 'UNET', 'DeepESD' or 'PAN'
    :param input_shape: (channels, lat, lon) of the predictors
    :param n_locations: number of predictand locations (taken from mask when given)
    :param width_scale: s in (0, 1]
    :param upsampling_factor: predictand/predictor resolution ratio (UNET head)
    :param mask: LandMask on the predictand grid (required by UNET)
    :param pad_input: zero-pad UNET inputs to a multiple of 16 instead of failing
    :param seed: parameter initialisation seed
    """

    def __init__(self, architecture, input_shape, n_locations=None, width_scale=1.0,
                 upsampling_factor=1, mask=None, pad_input=False, seed=0, dtype=np.float32):
        if architecture not in ARCHITECTURES:
            raise GraphBuildError('unknown architecture {!r}, expected one of {}'.format(
                architecture, ', '.join(ARCHITECTURES)))
        self.architecture = architecture
        self.input_shape = tuple(int(v) for v in input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise GraphBuildError('input shape must be (channels, lat, lon), got {}'.format(input_shape))
        self.mask = mask
        if mask is not None:
            if n_locations is not None and int(n_locations) != len(mask):
                raise GraphBuildError('n_locations {} disagrees with mask ({} locations)'.format(
                    n_locations, len(mask)))
            n_locations = len(mask)
        if n_locations is None or int(n_locations) < 1:
            raise GraphBuildError('the output needs at least one location')
        self.n_locations = int(n_locations)
        self.width_scale = float(width_scale)
        if not 0.0 < self.width_scale <= 1.0:
            raise GraphBuildError('width scale must lie in (0, 1], got {}'.format(width_scale))
        self.upsampling_factor = int(upsampling_factor)
        if self.upsampling_factor < 1:
            raise GraphBuildError('upsampling factor must be >= 1')
        self.pad_input = bool(pad_input)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)

    def __repr__(self):
        return 'ArchitectureConfig({}, input={}, locations={}, s={:g})'.format(
            self.architecture, self.input_shape, self.n_locations, self.width_scale)

    def width(self, base):
        return scaled(base, self.width_scale)

    def to_dict(self):
        return {
            'architecture': self.architecture,
            'input_shape': list(self.input_shape),
            'n_locations': self.n_locations,
            'width_scale': self.width_scale,
            'upsampling_factor': self.upsampling_factor,
            'pad_input': self.pad_input,
            'seed': self.seed,
        }


def _new_graph(config):
    graph = ModelGraph(config.input_shape, config.seed, dtype=config.dtype, name=config.architecture)
    graph.architecture = config.to_dict()
    return graph


def _conv_stack(graph, config, widths):
    for i, base in enumerate(widths, start=1):
        graph.add(Conv2D('conv{}'.format(i), config.width(base), kernel_size=3, padding='same'))
        graph.add(ReLU('relu{}'.format(i)))


def build_deepesd(config):
    """
    conv(50s) -> ReLU -> conv(25s) -> ReLU -> conv(10s) -> ReLU -> flatten
    -> dense(linear, locations)
    """
    if config.architecture != 'DeepESD':
        raise GraphBuildError('build_deepesd called with {}'.format(config.architecture))
    graph = _new_graph(config)
    _conv_stack(graph, config, DEEPESD_FILTERS)
    graph.add(Flatten('flatten'))
    graph.add(Dense('dense', config.n_locations, activation='linear'))
    return graph.validate()


def build_pan(config):
    """
    Five 3x3 convolutions with ReLU, flatten, dense(ReLU, ceil(L/2)) and
    dense(linear, L). No pooling, dropout or batch normalisation.
    """
    if config.architecture != 'PAN':
        raise GraphBuildError('build_pan called with {}'.format(config.architecture))
    graph = _new_graph(config)
    _conv_stack(graph, config, PAN_FILTERS)
    graph.add(Flatten('flatten'))
    graph.add(Dense('dense_hidden', int(math.ceil(config.n_locations / 2.0)), activation='relu'))
    graph.add(Dense('dense', config.n_locations, activation='linear'))
    return graph.validate()


def head_depth(upsampling_factor):
    """ Number of stride-2 transposed convolutions needed to reach the factor """

    if upsampling_factor <= 1:
        return 0
    return int(math.ceil(math.log2(upsampling_factor)))


def build_unet(config):
    """
    Encoder of five (conv + batch-norm + ReLU [+ maxpool]) blocks, decoder
    of four (transposed conv + ReLU, skip concatenation, conv + ReLU)
    blocks, an upsampling head and a 1x1 linear convolution. The output
    grid is centre-cropped or zero-padded to the predictand grid and
    gathered through the land mask.
    """
    if config.architecture != 'UNET':
        raise GraphBuildError('build_unet called with {}'.format(config.architecture))
    if config.mask is None:
        raise GraphBuildError('UNET needs the predictand land mask')
    graph = _new_graph(config)
    channels, height, width = config.input_shape
    if height % UNET_DEPTH or width % UNET_DEPTH:
        if not config.pad_input:
            raise GraphBuildError('UNET input {}x{} is not divisible by {}'.format(height, width, UNET_DEPTH))
        height = UNET_DEPTH * int(math.ceil(height / float(UNET_DEPTH)))
        width = UNET_DEPTH * int(math.ceil(width / float(UNET_DEPTH)))
        graph.add(Fit2D('pad_input', height, width))

    skips = []
    for level, base in enumerate(UNET_ENCODER):
        graph.add(Conv2D('enc{}_conv'.format(level), config.width(base)))
        graph.add(BatchNorm('enc{}_bn'.format(level)))
        graph.add(ReLU('enc{}_relu'.format(level)))
        skips.append('enc{}_relu'.format(level))
        if level < len(UNET_ENCODER) - 1:
            graph.add(MaxPool2('enc{}_pool'.format(level)))

    for block, base in enumerate(UNET_DECODER):
        level = len(UNET_ENCODER) - 2 - block
        graph.add(ConvTranspose2D('dec{}_up'.format(block), config.width(base), kernel_size=2, stride=2))
        graph.add(ReLU('dec{}_up_relu'.format(block)))
        graph.add(ConcatSkip('dec{}_concat'.format(block), skips[level]))
        graph.add(Conv2D('dec{}_conv'.format(block), config.width(base)))
        graph.add(ReLU('dec{}_relu'.format(block)))

    head_width = config.width(UNET_DECODER[-1])
    for step in range(head_depth(config.upsampling_factor)):
        graph.add(ConvTranspose2D('head{}_up'.format(step), head_width, kernel_size=2, stride=2))
        graph.add(ReLU('head{}_relu'.format(step)))
    graph.add(Conv2D('head_out', 1, kernel_size=1))

    out_h, out_w = config.mask.geometry.shape
    _, grid_h, grid_w = graph.output_shape
    if (grid_h, grid_w) != (out_h, out_w):
        log.debug('UNET output grid %dx%d fitted to predictand grid %dx%d', grid_h, grid_w, out_h, out_w)
    graph.add(Fit2D('fit_output', out_h, out_w))
    graph.add(MaskGather('mask', config.mask.flat_indices))
    return graph.validate()


def build_model(config):
    """ Dispatch on config.architecture """

    return {
        'UNET': build_unet,
        'DeepESD': build_deepesd,
        'PAN': build_pan,
    }[config.architecture](config)
