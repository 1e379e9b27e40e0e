"""
Differentiable layers.

Each layer works on batches laid out as (batch, channel, lat, lon) or
(batch, features). A layer declares its per-sample output shape from its
input shapes, initialises its own parameters, and implements forward and
backward passes against a per-call cache that becomes part of the forward
tape.

Functional wrappers (conv2d, conv_transpose2d, maxpool2, batchnorm, dense)
run a single layer outside of a graph.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from xai_downscale.errors import GraphBuildError, TrainingError

BATCHNORM_EPSILON = 1e-5
BATCHNORM_MOMENTUM = 0.99

TRAIN = 'train'
EVAL = 'eval'
MODES = (TRAIN, EVAL)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / float(fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _pad_hw(x, before, after=None):
    after = before if after is None else after
    if before == 0 and after == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (before, after), (before, after)))


def _correlate(x, kernels):
    """ Valid cross-correlation of (N,C,H,W) with (O,C,k,k) kernels """

    k = kernels.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    return np.einsum('nchwpq,ocpq->nohw', windows, kernels, optimize=True)


class Layer(object):
    """
    Base class of every layer kind.

    :param name: unique node name inside a graph
    """

    kind = None
    n_inputs = 1

    def __init__(self, name):
        self.name = str(name)

    def __repr__(self):
        return '{}({})'.format(type(self).__name__, self.name)

    def spec(self):
        """ The layer kind and its hyperparameters """

        data = {'kind': self.kind, 'name': self.name}
        data.update(self._hyperparameters())
        return data

    def _hyperparameters(self):
        return {}

    def output_shape(self, input_shapes):
        raise NotImplementedError

    def init_params(self, input_shapes, rng, dtype):
        return {}

    def forward(self, inputs, params, mode, cache):
        raise NotImplementedError

    def backward(self, dy, params, cache):
        """ Returns (list of input gradients, dict of parameter gradients) """

        raise NotImplementedError

    def param(self, params, key):
        return params['{}.{}'.format(self.name, key)]

    def _single(self, input_shapes):
        if len(input_shapes) != self.n_inputs:
            raise GraphBuildError('{} expects {} input(s), got {}'.format(
                self, self.n_inputs, len(input_shapes)))
        return input_shapes[0]

    def _spatial(self, input_shapes):
        shape = self._single(input_shapes)
        if len(shape) != 3:
            raise GraphBuildError('{} needs a (channel, lat, lon) input, got {}'.format(self, shape))
        return shape


class Conv2D(Layer):

    kind = 'conv2d'

    def __init__(self, name, filters, kernel_size=3, padding='same', stride=1):
        super(Conv2D, self).__init__(name)
        if int(stride) != 1:
            raise GraphBuildError('{}: only stride 1 convolutions are supported'.format(self))
        if padding not in ('same', 'valid'):
            raise GraphBuildError('{}: unknown padding {!r}'.format(self, padding))
        if padding == 'same' and kernel_size % 2 == 0:
            raise GraphBuildError('{}: same padding needs an odd kernel size'.format(self))
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.padding = padding
        if self.filters < 1 or self.kernel_size < 1:
            raise GraphBuildError('{}: filters and kernel size must be positive'.format(self))

    def _hyperparameters(self):
        return {'filters': self.filters, 'kernel_size': self.kernel_size, 'padding': self.padding}

    @property
    def pad(self):
        return (self.kernel_size - 1) // 2 if self.padding == 'same' else 0

    def output_shape(self, input_shapes):
        c, h, w = self._spatial(input_shapes)
        h_out = h + 2 * self.pad - self.kernel_size + 1
        w_out = w + 2 * self.pad - self.kernel_size + 1
        if h_out < 1 or w_out < 1:
            raise GraphBuildError('{}: input {}x{} smaller than kernel'.format(self, h, w))
        return self.filters, h_out, w_out

    def init_params(self, input_shapes, rng, dtype):
        c = self._spatial(input_shapes)[0]
        k = self.kernel_size
        return {
            'kernel': glorot_uniform(rng, (self.filters, c, k, k), c * k * k, self.filters * k * k, dtype),
            'bias': np.zeros(self.filters, dtype=dtype),
        }

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        xp = _pad_hw(x, self.pad)
        cache['xp'] = xp
        y = _correlate(xp, self.param(params, 'kernel'))
        return y + self.param(params, 'bias')[None, :, None, None]

    def backward(self, dy, params, cache):
        kernels = self.param(params, 'kernel')
        k = self.kernel_size
        windows = sliding_window_view(cache['xp'], (k, k), axis=(2, 3))
        d_kernel = np.einsum('nchwpq,nohw->ocpq', windows, dy, optimize=True)
        d_bias = dy.sum(axis=(0, 2, 3))
        flipped = np.ascontiguousarray(kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = _correlate(_pad_hw(dy, k - 1 - self.pad), flipped)
        return [dx], {'kernel': d_kernel, 'bias': d_bias}


class ConvTranspose2D(Layer):
    """ Transposed convolution, kernel laid out as (in, out, k, k), no padding """

    kind = 'conv_transpose2d'

    def __init__(self, name, filters, kernel_size=2, stride=2):
        super(ConvTranspose2D, self).__init__(name)
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        if self.stride < 1:
            raise GraphBuildError('{}: stride must be >= 1'.format(self))
        if self.filters < 1 or self.kernel_size < 1:
            raise GraphBuildError('{}: filters and kernel size must be positive'.format(self))

    def _hyperparameters(self):
        return {'filters': self.filters, 'kernel_size': self.kernel_size, 'stride': self.stride}

    def output_shape(self, input_shapes):
        c, h, w = self._spatial(input_shapes)
        s, k = self.stride, self.kernel_size
        return self.filters, (h - 1) * s + k, (w - 1) * s + k

    def init_params(self, input_shapes, rng, dtype):
        c = self._spatial(input_shapes)[0]
        k = self.kernel_size
        return {
            'kernel': glorot_uniform(rng, (c, self.filters, k, k), c * k * k, self.filters * k * k, dtype),
            'bias': np.zeros(self.filters, dtype=dtype),
        }

    def _slices(self, h, w):
        s = self.stride
        for p in range(self.kernel_size):
            for q in range(self.kernel_size):
                yield p, q, (slice(None), slice(None), slice(p, p + s * (h - 1) + 1, s), slice(q, q + s * (w - 1) + 1, s))

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        kernels = self.param(params, 'kernel')
        n, _, h, w = x.shape
        _, h_out, w_out = self.output_shape([x.shape[1:]])
        y = np.zeros((n, self.filters, h_out, w_out), dtype=np.result_type(x, kernels))
        for p, q, where in self._slices(h, w):
            y[where] += np.einsum('nchw,co->nohw', x, kernels[:, :, p, q], optimize=True)
        cache['x'] = x
        return y + self.param(params, 'bias')[None, :, None, None]

    def backward(self, dy, params, cache):
        x = cache['x']
        kernels = self.param(params, 'kernel')
        _, _, h, w = x.shape
        dx = np.zeros_like(x, dtype=np.result_type(x, dy))
        d_kernel = np.zeros_like(kernels)
        for p, q, where in self._slices(h, w):
            dy_pq = dy[where]
            dx += np.einsum('nohw,co->nchw', dy_pq, kernels[:, :, p, q], optimize=True)
            d_kernel[:, :, p, q] = np.einsum('nchw,nohw->co', x, dy_pq, optimize=True)
        return [dx], {'kernel': d_kernel, 'bias': dy.sum(axis=(0, 2, 3))}


class MaxPool2(Layer):
    """ 2x2 non-overlapping max pooling; ties go to the first cell in the window """

    kind = 'maxpool2'

    def output_shape(self, input_shapes):
        c, h, w = self._spatial(input_shapes)
        if h % 2 or w % 2:
            raise GraphBuildError('{}: spatial dims {}x{} are not even'.format(self, h, w))
        return c, h // 2, w // 2

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        n, c, h, w = x.shape
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        argmax = windows.argmax(axis=-1)
        cache['argmax'] = argmax
        cache['shape'] = x.shape
        return np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(self, dy, params, cache):
        n, c, h, w = cache['shape']
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(routed, cache['argmax'][..., None], dy[..., None], axis=-1)
        dx = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return [dx], {}


class BatchNorm(Layer):
    """
    Batch normalisation per channel (over batch and space) or per feature.

    Running statistics are not updated in place: the train-mode forward
    records the updated values in the cache and the graph commits them.
    """

    kind = 'batchnorm'

    def __init__(self, name, epsilon=BATCHNORM_EPSILON, momentum=BATCHNORM_MOMENTUM):
        super(BatchNorm, self).__init__(name)
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)

    def _hyperparameters(self):
        return {'epsilon': self.epsilon, 'momentum': self.momentum}

    def output_shape(self, input_shapes):
        shape = self._single(input_shapes)
        if len(shape) not in (1, 3):
            raise GraphBuildError('{}: unsupported input shape {}'.format(self, shape))
        return tuple(shape)

    def init_params(self, input_shapes, rng, dtype):
        c = self._single(input_shapes)[0]
        return {
            'gamma': np.ones(c, dtype=dtype),
            'beta': np.zeros(c, dtype=dtype),
            'running_mean': np.zeros(c, dtype=dtype),
            'running_var': np.ones(c, dtype=dtype),
        }

    @staticmethod
    def _axes(x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    @staticmethod
    def _per_channel(v, x):
        return v[None, :, None, None] if x.ndim == 4 else v[None, :]

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        axes = self._axes(x)
        gamma = self.param(params, 'gamma')
        if mode == TRAIN:
            if x.shape[0] < 2:
                raise TrainingError('{}: batch size {} in train mode, need at least 2'.format(self, x.shape[0]))
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            cache['running'] = {
                'running_mean': (m * self.param(params, 'running_mean') + (1.0 - m) * mean).astype(mean.dtype),
                'running_var': (m * self.param(params, 'running_var') + (1.0 - m) * var).astype(var.dtype),
            }
        else:
            mean = self.param(params, 'running_mean')
            var = self.param(params, 'running_var')
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - self._per_channel(mean, x)) * self._per_channel(inv_std, x)
        cache.update(x_hat=x_hat, inv_std=inv_std, mode=mode)
        return self._per_channel(gamma, x) * x_hat + self._per_channel(self.param(params, 'beta'), x)

    def backward(self, dy, params, cache):
        x_hat = cache['x_hat']
        axes = self._axes(dy)
        gamma = self.param(params, 'gamma')
        grads = {'gamma': (dy * x_hat).sum(axis=axes), 'beta': dy.sum(axis=axes)}
        d_hat = dy * self._per_channel(gamma, dy)
        inv_std = self._per_channel(cache['inv_std'], dy)
        if cache['mode'] == TRAIN:
            count = dy.size // dy.shape[1]
            dx = inv_std / count * (
                count * d_hat -
                d_hat.sum(axis=axes, keepdims=True) -
                x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True))
        else:
            dx = d_hat * inv_std
        return [dx], grads


class Dense(Layer):

    kind = 'dense'

    def __init__(self, name, units, activation='linear'):
        super(Dense, self).__init__(name)
        if activation not in ('linear', 'relu'):
            raise GraphBuildError('{}: unknown activation {!r}'.format(self, activation))
        self.units = int(units)
        self.activation = activation
        if self.units < 1:
            raise GraphBuildError('{}: units must be positive'.format(self))

    def _hyperparameters(self):
        return {'units': self.units, 'activation': self.activation}

    def output_shape(self, input_shapes):
        shape = self._single(input_shapes)
        if len(shape) != 1:
            raise GraphBuildError('{}: needs a flat input, got {}'.format(self, shape))
        return (self.units,)

    def init_params(self, input_shapes, rng, dtype):
        d = self._single(input_shapes)[0]
        return {
            'kernel': glorot_uniform(rng, (d, self.units), d, self.units, dtype),
            'bias': np.zeros(self.units, dtype=dtype),
        }

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        z = x @ self.param(params, 'kernel') + self.param(params, 'bias')
        cache['x'] = x
        if self.activation == 'relu':
            cache['active'] = z > 0
            return np.where(cache['active'], z, 0).astype(z.dtype)
        return z

    def backward(self, dy, params, cache):
        if self.activation == 'relu':
            dy = np.where(cache['active'], dy, 0).astype(dy.dtype)
        x = cache['x']
        grads = {'kernel': x.T @ dy, 'bias': dy.sum(axis=0)}
        return [dy @ self.param(params, 'kernel').T], grads


class ReLU(Layer):

    kind = 'relu'

    def output_shape(self, input_shapes):
        return tuple(self._single(input_shapes))

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        cache['active'] = x > 0
        return np.where(cache['active'], x, 0).astype(x.dtype)

    def backward(self, dy, params, cache):
        return [np.where(cache['active'], dy, 0).astype(dy.dtype)], {}


class Flatten(Layer):

    kind = 'flatten'

    def output_shape(self, input_shapes):
        return (int(np.prod(self._single(input_shapes))),)

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        cache['shape'] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, params, cache):
        return [dy.reshape(cache['shape'])], {}


class ConcatSkip(Layer):
    """ Channel concatenation of the running path with an earlier (skip) node """

    kind = 'concat_skip'
    n_inputs = 2

    def __init__(self, name, source):
        super(ConcatSkip, self).__init__(name)
        self.source = str(source)

    def _hyperparameters(self):
        return {'source': self.source}

    def output_shape(self, input_shapes):
        if len(input_shapes) != 2:
            raise GraphBuildError('{} expects 2 inputs'.format(self))
        a, b = input_shapes
        if len(a) != 3 or len(b) != 3 or tuple(a[1:]) != tuple(b[1:]):
            raise GraphBuildError('{}: cannot concatenate {} with skip {}'.format(self, a, b))
        return a[0] + b[0], a[1], a[2]

    def forward(self, inputs, params, mode, cache):
        cache['split'] = inputs[0].shape[1]
        return np.concatenate(inputs, axis=1)

    def backward(self, dy, params, cache):
        split = cache['split']
        return [dy[:, :split], dy[:, split:]], {}


class Fit2D(Layer):
    """ Centre-crop or zero-pad the spatial axes to a fixed size """

    kind = 'fit2d'

    def __init__(self, name, height, width):
        super(Fit2D, self).__init__(name)
        self.height = int(height)
        self.width = int(width)

    def _hyperparameters(self):
        return {'height': self.height, 'width': self.width}

    def output_shape(self, input_shapes):
        c, _, _ = self._spatial(input_shapes)
        return c, self.height, self.width

    @staticmethod
    def _plan(size, target):
        """ (source slice, destination slice) along one axis """

        if size >= target:
            start = (size - target) // 2
            return slice(start, start + target), slice(0, target)
        start = (target - size) // 2
        return slice(0, size), slice(start, start + size)

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        n, c, h, w = x.shape
        rows_src, rows_dst = self._plan(h, self.height)
        cols_src, cols_dst = self._plan(w, self.width)
        y = np.zeros((n, c, self.height, self.width), dtype=x.dtype)
        y[:, :, rows_dst, cols_dst] = x[:, :, rows_src, cols_src]
        cache['shape'] = x.shape
        return y

    def backward(self, dy, params, cache):
        n, c, h, w = cache['shape']
        rows_src, rows_dst = self._plan(h, self.height)
        cols_src, cols_dst = self._plan(w, self.width)
        dx = np.zeros((n, c, h, w), dtype=dy.dtype)
        dx[:, :, rows_src, cols_src] = dy[:, :, rows_dst, cols_dst]
        return [dx], {}


class MaskGather(Layer):
    """ Pick the land-mask cells of a single-channel grid, in mask order """

    kind = 'mask_gather'

    def __init__(self, name, flat_indices):
        super(MaskGather, self).__init__(name)
        self.flat_indices = np.asarray(flat_indices, dtype=np.int64)

    def _hyperparameters(self):
        return {'flat_indices': [int(i) for i in self.flat_indices]}

    def output_shape(self, input_shapes):
        c, h, w = self._spatial(input_shapes)
        if c != 1:
            raise GraphBuildError('{}: expects one channel, got {}'.format(self, c))
        if self.flat_indices.size and (self.flat_indices.min() < 0 or self.flat_indices.max() >= h * w):
            raise GraphBuildError('{}: mask indices exceed the {}x{} grid'.format(self, h, w))
        return (int(self.flat_indices.size),)

    def forward(self, inputs, params, mode, cache):
        x = inputs[0]
        cache['shape'] = x.shape
        return x.reshape(x.shape[0], -1)[:, self.flat_indices]

    def backward(self, dy, params, cache):
        n = dy.shape[0]
        dx = np.zeros((n, int(np.prod(cache['shape'][1:]))), dtype=dy.dtype)
        dx[:, self.flat_indices] = dy
        return [dx.reshape(cache['shape'])], {}


LAYER_KINDS = {
    cls.kind: cls for cls in (
        Conv2D, ConvTranspose2D, MaxPool2, BatchNorm, Dense,
        ReLU, Flatten, ConcatSkip, Fit2D, MaskGather)
}


def layer_from_spec(spec):
    spec = dict(spec)
    kind = spec.pop('kind')
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise GraphBuildError('unknown layer kind {!r}'.format(kind))
    return cls(**spec)


def _batched(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 3 else (x, False)


def _apply(layer, x, params, mode=EVAL):
    x, single = _batched(x)
    named = {'{}.{}'.format(layer.name, k): np.asarray(v) for k, v in params.items()}
    layer.output_shape([x.shape[1:]])
    y = layer.forward([x], named, mode, {})
    return y[0] if single else y


def conv2d(x, kernels, bias, padding='same', stride=1):
    """
    Cross-correlation of a (channel, lat, lon) array, or a batch of them,
    with (out, in, k, k) kernels.
    """
    kernels = np.asarray(kernels)
    x_channels = np.asarray(x).shape[-3]
    if kernels.ndim != 4 or kernels.shape[1] != x_channels:
        raise GraphBuildError('kernel channels {} do not match input channels {}'.format(
            kernels.shape[1:2], x_channels))
    layer = Conv2D('conv2d', kernels.shape[0], kernels.shape[-1], padding=padding, stride=stride)
    return _apply(layer, x, {'kernel': kernels, 'bias': bias})


def conv_transpose2d(x, kernels, bias, stride=2):
    """ Transposed convolution with (in, out, k, k) kernels """

    kernels = np.asarray(kernels)
    if kernels.ndim != 4 or kernels.shape[0] != np.asarray(x).shape[-3]:
        raise GraphBuildError('kernel shape {} does not match input channels'.format(kernels.shape))
    layer = ConvTranspose2D('conv_transpose2d', kernels.shape[1], kernels.shape[-1], stride=stride)
    return _apply(layer, x, {'kernel': kernels, 'bias': bias})


def maxpool2(x):
    return _apply(MaxPool2('maxpool2'), x, {})


def batchnorm(x, gamma, beta, mode=EVAL, running_mean=None, running_var=None):
    """
    Batch normalisation of a batch; in eval mode running_mean/running_var
    are required.
    """
    gamma = np.asarray(gamma)
    params = {
        'gamma': gamma,
        'beta': beta,
        'running_mean': np.zeros_like(gamma) if running_mean is None else running_mean,
        'running_var': np.ones_like(gamma) if running_var is None else running_var,
    }
    x = np.asarray(x)
    layer = BatchNorm('batchnorm')
    named = {'batchnorm.{}'.format(k): np.asarray(v) for k, v in params.items()}
    layer.output_shape([x.shape[1:]])
    return layer.forward([x], named, mode, {})


def dense(x, weights, bias, activation='linear'):
    weights = np.asarray(weights)
    x = np.asarray(x)
    if weights.ndim == 1:
        weights = weights[:, None]
    if weights.shape[0] != x.shape[-1]:
        raise GraphBuildError('weights {} do not match input length {}'.format(weights.shape, x.shape[-1]))
    layer = Dense('dense', weights.shape[1], activation)
    single = x.ndim == 1
    named = {'dense.kernel': weights, 'dense.bias': np.broadcast_to(np.asarray(bias), (weights.shape[1],))}
    y = layer.forward([x[None] if single else x], named, EVAL, {})
    return y[0] if single else y
