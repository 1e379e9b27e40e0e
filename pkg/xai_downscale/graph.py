"""
Model graphs: a DAG of layers, its parameter store, and reverse-mode
differentiation with respect to parameters and inputs.
"""

from collections import OrderedDict
import copy
import hashlib
import logging

import numpy as np

from xai_downscale.errors import GraphBuildError, InputError, InternalError
from xai_downscale.layers import EVAL, MODES, TRAIN, ConcatSkip, layer_from_spec

log = logging.getLogger(__name__)

INPUT = 'input'
NON_TRAINABLE = ('running_mean', 'running_var')


class ParameterStore(object):
    """
    Named parameter arrays with a deterministic flat ordering (insertion
    order).

    Running statistics are stored alongside kernels and biases but are not
    trainable.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._arrays = OrderedDict()

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=self.dtype)
        if name in self._arrays and value.shape != self._arrays[name].shape:
            raise InputError('parameter {} has shape {}, got {}'.format(
                name, self._arrays[name].shape, value.shape))
        self._arrays[name] = value

    def __len__(self):
        return len(self._arrays)

    def __iter__(self):
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def trainable_names(self):
        return [n for n in self._arrays if not n.endswith(NON_TRAINABLE)]

    def shapes(self):
        return OrderedDict((n, a.shape) for n, a in self._arrays.items())

    def count(self, trainable_only=True):
        names = self.trainable_names() if trainable_only else self.names()
        return int(sum(self._arrays[n].size for n in names))

    def copy(self):
        other = ParameterStore(self.dtype)
        for name, value in self._arrays.items():
            other._arrays[name] = value.copy()
        return other

    def astype(self, dtype):
        other = ParameterStore(dtype)
        for name, value in self._arrays.items():
            other._arrays[name] = value.astype(dtype)
        return other

    def to_flat(self):
        if not self._arrays:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def from_flat(self, flat):
        flat = np.asarray(flat, dtype=self.dtype)
        expected = sum(a.size for a in self._arrays.values())
        if flat.size != expected:
            raise InputError('flat parameter vector has {} values, expected {}'.format(flat.size, expected))
        offset = 0
        for name, value in self._arrays.items():
            self._arrays[name] = flat[offset:offset + value.size].reshape(value.shape).copy()
            offset += value.size
        return self


class Node(object):

    def __init__(self, layer, inputs, shape):
        self.layer = layer
        self.inputs = list(inputs)
        self.shape = tuple(int(s) for s in shape)

    @property
    def name(self):
        return self.layer.name

    def __repr__(self):
        return 'Node({}, inputs={}, shape={})'.format(self.name, self.inputs, self.shape)


class ForwardTape(object):
    """
    Everything one forward pass leaves behind for its backward pass: the
    per-node caches (activations, pooling argmax, normalisation terms) and
    the parameter version it was computed against.
    """

    def __init__(self, graph, mode, batch):
        self.graph_id = id(graph)
        self.version = graph.version
        self.mode = mode
        self.batch = batch
        self.caches = OrderedDict()
        self.running = OrderedDict()


class ModelGraph(object):
    """
    A layer DAG (a linear chain plus skip edges) with its parameters.

    Nodes are added in execution order; each node reads the previous node
    unless told otherwise, and concat-skip nodes additionally read an
    earlier node.

    :param input_shape: (channel, lat, lon)
    :param seed: seed of the parameter initialiser
    :param dtype: numpy.float32 in production, numpy.float64 for checks
    :param name: free-form model name
    """

    def __init__(self, input_shape, seed, dtype=np.float32, name='model'):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.name = name
        self.seed = int(seed)
        self.params = ParameterStore(dtype)
        self.nodes = []
        self._index = {}
        self._rng = np.random.default_rng(self.seed)
        self.version = 0
        self.architecture = None

    def __repr__(self):
        return 'ModelGraph({}, layers={}, params={})'.format(
            self.name, len(self.nodes), self.params.count())

    @property
    def dtype(self):
        return self.params.dtype

    @property
    def output_shape(self):
        if not self.nodes:
            return self.input_shape
        return self.nodes[-1].shape

    @property
    def output_size(self):
        return int(np.prod(self.output_shape))

    def node(self, name):
        return self.nodes[self._index[name]]

    def shape_of(self, name):
        if name == INPUT:
            return self.input_shape
        if name not in self._index:
            raise GraphBuildError('unknown node {!r}'.format(name))
        return self.node(name).shape

    def add(self, layer, inputs=None):
        """
        Append a layer and initialise its parameters.

        :param layer: a Layer instance with a unique name
        :param inputs: list of node names; defaults to the previous node
        :return: the layer's output shape
        """
        if layer.name in self._index or layer.name == INPUT:
            raise GraphBuildError('duplicate layer name {!r}'.format(layer.name))
        if inputs is None:
            previous = self.nodes[-1].name if self.nodes else INPUT
            inputs = [previous]
            if isinstance(layer, ConcatSkip):
                inputs.append(layer.source)
        shapes = [self.shape_of(name) for name in inputs]
        shape = layer.output_shape(shapes)
        for key, value in layer.init_params(shapes, self._rng, self.dtype).items():
            self.params['{}.{}'.format(layer.name, key)] = value
        self._index[layer.name] = len(self.nodes)
        self.nodes.append(Node(layer, inputs, shape))
        return shape

    def validate(self):
        """ Re-derive every node shape from its inputs; raise on any mismatch """

        for position, node in enumerate(self.nodes):
            for name in node.inputs:
                if name != INPUT and self._index.get(name, position) >= position:
                    raise GraphBuildError('{} reads {!r}, which is not an earlier node'.format(node, name))
            shape = node.layer.output_shape([self.shape_of(name) for name in node.inputs])
            if tuple(shape) != node.shape:
                raise GraphBuildError('{} declares {} but computes {}'.format(node, node.shape, shape))
        return self

    def layer_kinds(self):
        return [node.layer.kind for node in self.nodes]

    def spec(self):
        return [dict(node.layer.spec(), inputs=list(node.inputs)) for node in self.nodes]

    @classmethod
    def from_spec(cls, input_shape, layer_specs, dtype=np.float32, name='model', seed=0):
        graph = cls(input_shape, seed, dtype=dtype, name=name)
        for spec in layer_specs:
            spec = dict(spec)
            inputs = spec.pop('inputs', None)
            graph.add(layer_from_spec(spec), inputs=inputs)
        return graph

    def _touch(self):
        self.version += 1

    def copy(self):
        """ Snapshot with independent parameter arrays """

        other = copy.copy(self)
        other.params = self.params.copy()
        other._rng = None
        return other

    def astype(self, dtype):
        other = self.copy()
        other.params = self.params.astype(dtype)
        return other

    def set_parameters(self, params):
        for name, value in params.items():
            if name not in self.params:
                raise InputError('unknown parameter {!r}'.format(name))
            self.params[name] = value
        self._touch()

    def fingerprint(self):
        digest = hashlib.sha1()
        digest.update(repr(self.spec()).encode('utf-8'))
        digest.update(self.params.to_flat().astype('<f4').tobytes())
        return digest.hexdigest()[:16]

    def parameter_count(self):
        return self.params.count()

    def _batch(self, x):
        x = np.asarray(getattr(x, 'data', x))
        if x.shape == self.input_shape:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise InputError('input shape {} does not match model input {}'.format(x.shape[1:], self.input_shape))
        return x.astype(self.dtype, copy=False)

    def forward(self, x, mode=EVAL):
        """
        Run the graph on a batch (or a single sample).

        :param x: (batch, channel, lat, lon) or (channel, lat, lon)
        :param mode: 'train' or 'eval'
        :return: (output batch, ForwardTape)
        """
        if mode not in MODES:
            raise InputError('unknown mode {!r}'.format(mode))
        x = self._batch(x)
        tape = ForwardTape(self, mode, x.shape[0])
        values = {INPUT: x}
        params = self.params
        for node in self.nodes:
            cache = {}
            values[node.name] = node.layer.forward([values[n] for n in node.inputs], params, mode, cache)
            tape.caches[node.name] = cache
            for key, value in cache.pop('running', {}).items():
                tape.running['{}.{}'.format(node.name, key)] = value
        out = values[self.nodes[-1].name] if self.nodes else x
        return out, tape

    def commit(self, tape):
        """ Store the running statistics gathered by a train-mode forward """

        for name, value in tape.running.items():
            self.params[name] = value
        if tape.running:
            self._touch()

    def _backward(self, tape, dy, need_params=True):
        if tape.graph_id != id(self) or tape.version != self.version:
            raise InternalError('stale forward tape: parameters changed since the forward pass')
        if not self.nodes:
            return dy, OrderedDict()
        grads_in = {self.nodes[-1].name: np.asarray(dy, dtype=self.dtype)}
        param_grads = {}
        for node in reversed(self.nodes):
            g = grads_in.pop(node.name, None)
            if g is None:
                continue
            dxs, dparams = node.layer.backward(g, self.params, tape.caches[node.name])
            if need_params:
                for key, value in dparams.items():
                    param_grads['{}.{}'.format(node.name, key)] = value
            for name, dx in zip(node.inputs, dxs):
                if name in grads_in:
                    grads_in[name] = grads_in[name] + dx
                else:
                    grads_in[name] = dx
        dx = grads_in.get(INPUT)
        if dx is None:
            dx = np.zeros((tape.batch,) + self.input_shape, dtype=self.dtype)
        ordered = OrderedDict()
        if need_params:
            for name in self.params.trainable_names():
                ordered[name] = param_grads.get(name, np.zeros_like(self.params[name]))
        return dx, ordered

    def backward_params(self, tape, dy):
        """
        Gradients of sum(dy * output) with respect to every trainable
        parameter, in flat order.
        """
        dy = np.asarray(dy)
        if dy.shape != (tape.batch,) + self.output_shape:
            raise InputError('output gradient shape {} does not match {}'.format(
                dy.shape, (tape.batch,) + self.output_shape))
        return self._backward(tape, dy)[1]

    def backward_input(self, tape, dy):
        return self._backward(tape, np.asarray(dy), need_params=False)[0]

    def input_gradient(self, x, index, tape=None):
        """
        d output[index] / d input for every sample of an eval-mode batch.

        :param x: sample or batch
        :param index: output neuron index
        :param tape: an eval-mode tape for x to reuse, optional
        :return: gradient with the shape of x
        """
        single = np.asarray(getattr(x, 'data', x)).shape == self.input_shape
        if tape is None:
            _, tape = self.forward(x, EVAL)
        elif tape.mode != EVAL:
            raise InputError('input gradients need an eval-mode tape')
        if not 0 <= int(index) < self.output_size:
            raise InputError('output index {} out of range [0, {})'.format(index, self.output_size))
        dy = np.zeros((tape.batch, self.output_size), dtype=self.dtype)
        dy[:, int(index)] = 1
        dx = self.backward_input(tape, dy.reshape((tape.batch,) + self.output_shape))
        return dx[0] if single else dx

    def predict(self, x, batch_size=256):
        """ Eval-mode outputs of a (possibly large) batch, chunked """

        x = self._batch(x)
        out = [self.forward(x[i:i + batch_size], EVAL)[0] for i in range(0, x.shape[0], batch_size)]
        if not out:
            return np.zeros((0,) + self.output_shape, dtype=self.dtype)
        return np.concatenate(out, axis=0)

    def predict_field(self, field, mask, batch_size=256):
        """ Downscale a GriddedField into a TargetField over mask """

        from xai_downscale.grid import TargetField
        if self.output_shape != (len(mask),):
            raise InputError('model has {} outputs but the mask has {} locations'.format(
                self.output_size, len(mask)))
        return TargetField(self.predict(field.data, batch_size).astype(np.float64), mask, field.times)


def forward(model, x, mode=EVAL):
    return model.forward(x, mode)


def backward_params(model, tape, dy):
    return model.backward_params(tape, dy)


def input_gradient(model, x, index):
    return model.input_gradient(x, index)


__all__ = ['ModelGraph', 'ParameterStore', 'ForwardTape', 'forward', 'backward_params',
           'input_gradient', 'TRAIN', 'EVAL']
