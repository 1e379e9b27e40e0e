"""
MSE loss, the ADAM optimiser and the training protocol: mini-batches of
whole days, a seeded random validation split, and early stopping that
returns the best-validation snapshot.
"""

from collections import OrderedDict
import logging

import numpy as np

from xai_downscale.errors import InputError, TrainingError
from xai_downscale.layers import TRAIN

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def mse_loss(pred, obs):
    """
    Mean squared error over batch and locations.

    :param pred: (batch, location) predictions
    :param obs: (batch, location) observations
    :return: (loss as float, d loss / d pred with the shape of pred)
    """
    pred = np.asarray(pred)
    obs = np.asarray(obs)
    if pred.shape != obs.shape:
        raise InputError('prediction shape {} does not match observations {}'.format(pred.shape, obs.shape))
    if not np.all(np.isfinite(obs)):
        raise InputError('observations contain non-finite values')
    if pred.size == 0:
        raise InputError('mse_loss of an empty batch')
    diff = pred.astype(np.float64) - obs.astype(np.float64)
    loss = float(np.mean(diff ** 2))
    grad = (2.0 * diff / diff.size).astype(pred.dtype)
    return loss, grad


class AdamState(object):
    """ First and second moments per parameter plus the step counter """

    def __init__(self, beta1=ADAM_BETA1, beta2=ADAM_BETA2, epsilon=ADAM_EPSILON):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = OrderedDict()
        self.v = OrderedDict()
        self.t = 0

    def __repr__(self):
        return 'AdamState(t={}, params={})'.format(self.t, len(self.m))


def adam_step(params, grads, state, lr):
    """
    One bias-corrected ADAM update.

    :param params: mapping name -> array
    :param grads: mapping name -> gradient array, same names and shapes
    :param state: type AdamState, updated in place
    :param lr: learning rate
    :return: (OrderedDict of updated parameters, state)
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError('non-finite gradient for parameter {} at step {}'.format(name, state.t + 1))
        if name not in params or np.shape(params[name]) != np.shape(grad):
            raise InputError('gradient {} does not match any parameter shape'.format(name))
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    updated = OrderedDict()
    for name, grad in grads.items():
        theta = np.asarray(params[name])
        g = np.asarray(grad, dtype=np.float64)
        m = state.m.get(name, np.zeros(theta.shape))
        v = state.v.get(name, np.zeros(theta.shape))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        updated[name] = (theta - step).astype(theta.dtype)
    return updated, state


class TrainConfig(object):
    """
    :param learning_rate: ADAM learning rate
    :param batch_size: days per mini-batch
    :param max_epochs: hard epoch limit
    :param patience: epochs without validation improvement before stopping
    :param min_delta: improvement smaller than this does not count
    :param validation_fraction: share of days held out, drawn at random
    :param seed: seeds the split and the per-epoch shuffles
    """

    def __init__(self, learning_rate=1e-4, batch_size=100, max_epochs=1000, patience=30,
                 min_delta=0.0, validation_fraction=0.10, seed=0):
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.max_epochs = int(max_epochs)
        self.patience = int(patience)
        self.min_delta = float(min_delta)
        self.validation_fraction = float(validation_fraction)
        self.seed = int(seed)
        if not 0.0 < self.validation_fraction < 1.0:
            raise InputError('validation fraction must lie in (0, 1)')
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InputError('batch size, max epochs and patience must be positive')
        if self.learning_rate <= 0.0:
            raise InputError('learning rate must be positive')

    def to_dict(self):
        return {
            'learning_rate': self.learning_rate,
            'batch_size': self.batch_size,
            'max_epochs': self.max_epochs,
            'patience': self.patience,
            'min_delta': self.min_delta,
            'validation_fraction': self.validation_fraction,
            'seed': self.seed,
        }


class TrainResult(object):
    """
    The best-validation model plus the per-epoch history.

    history rows are (epoch, train_loss, val_loss, is_best).
    """

    def __init__(self, model, history, best_epoch, stopped_early, split):
        self.model = model
        self.history = history
        self.best_epoch = best_epoch
        self.stopped_early = stopped_early
        self.split = split
        self._logs = list()

    @property
    def logs(self):
        return self._logs

    @property
    def best_val_loss(self):
        return min(row[2] for row in self.history)

    def log_text(self):
        lines = ['epoch\ttrain_loss\tval_loss\tbest']
        for epoch, train_loss, val_loss, best in self.history:
            lines.append('{}\t{!r}\t{!r}\t{}'.format(epoch, train_loss, val_loss, int(best)))
        return '\n'.join(lines) + '\n'


def split_days(n_days, fraction, rng):
    """ Seeded random (train, validation) split of day indices """

    n_val = int(round(n_days * fraction))
    n_val = min(max(n_val, 1), n_days - 1)
    perm = rng.permutation(n_days)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _batches(order, batch_size, merge_singleton):
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if merge_singleton and len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def _has_batchnorm(model):
    return 'batchnorm' in model.layer_kinds()


def train(model, predictors, predictand, config):
    """
    Fit model on standardized predictors against the predictand.

    The input model is not modified; the returned TrainResult holds a copy
    carrying the parameters of the epoch with the lowest validation loss.

    :param model: type ModelGraph
    :param predictors: standardized GriddedField
    :param predictand: TargetField on the same days
    :param config: type TrainConfig
    :return: TrainResult
    """
    if len(predictors) == 0:
        raise InputError('cannot train on an empty dataset')
    if predictors.times != predictand.times:
        raise InputError('predictor and predictand time axes are not aligned')
    if len(predictors) < 2:
        raise InputError('need at least two days to draw a validation split')
    if model.output_shape != (len(predictand.mask),):
        raise InputError('model has {} outputs, predictand has {} locations'.format(
            model.output_size, len(predictand.mask)))
    batchnorm = _has_batchnorm(model)
    if batchnorm and config.batch_size < 2:
        raise InputError('batch size must be at least 2 for models with batch normalisation')

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_days(len(predictors), config.validation_fraction, rng)
    if batchnorm and len(train_idx) < 2:
        raise InputError('batch normalisation needs at least two training days')
    x = predictors.data.astype(model.dtype)
    y = predictand.values.astype(model.dtype)

    model = model.copy()
    state = AdamState()
    history = []
    best_loss = np.inf
    best_params = model.params.copy()
    best_epoch = 0
    wait = 0
    stopped_early = False
    log.info('training %s on %d days (%d validation), %d parameters',
             model.name, len(train_idx), len(val_idx), model.parameter_count())

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for number, batch in enumerate(_batches(order, config.batch_size, batchnorm), start=1):
            pred, tape = model.forward(x[batch], TRAIN)
            loss, dy = mse_loss(pred, y[batch])
            if not np.isfinite(loss):
                raise TrainingError('non-finite training loss at epoch {} batch {}'.format(epoch, number))
            grads = model.backward_params(tape, dy)
            updated, state = adam_step(model.params, grads, state, config.learning_rate)
            model.set_parameters(updated)
            model.commit(tape)
            total += loss * len(batch)
        train_loss = total / len(train_idx)

        val_loss, _ = mse_loss(model.predict(x[val_idx]), y[val_idx])
        if not np.isfinite(val_loss):
            raise TrainingError('non-finite validation loss at epoch {}'.format(epoch))
        improved = val_loss < best_loss - config.min_delta
        if improved:
            best_loss = val_loss
            best_params = model.params.copy()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
        history.append((epoch, train_loss, val_loss, improved))
        log.debug('epoch %d train %.6g val %.6g%s', epoch, train_loss, val_loss, ' *' if improved else '')
        if wait >= config.patience:
            stopped_early = True
            break

    model.set_parameters(best_params)
    result = TrainResult(model, history, best_epoch, stopped_early,
                         {'train': train_idx, 'validation': val_idx})
    if stopped_early:
        result.logs.append('early stop at epoch {}, best epoch {} (val {:.6g})'.format(
            history[-1][0], best_epoch, best_loss))
    else:
        result.logs.append('reached max epochs {}, best epoch {} (val {:.6g})'.format(
            config.max_epochs, best_epoch, best_loss))
    log.info(result.logs[-1])
    return result
