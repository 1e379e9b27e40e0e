"""
Integrated Gradients attribution and the two saliency aggregates:

- Accumulated Saliency Maps (ASM): per predictor gridbox and channel, the
  normalised saliency summed over all target locations, aggregated over a
  period. Lives on the predictor grid.
- Saliency Dispersion Maps (SDM): per target location, the salience of a
  channel weighted by the great-circle distance to the target and summed,
  aggregated over a period. Lives on the predictand mask.
"""

import logging

import numpy as np

from xai_downscale.errors import AttributionError, InputError
from xai_downscale.grid import distance_field, haversine
from xai_downscale.layers import EVAL
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

DEFAULT_STEPS = 50
THRESHOLD = 0.1
AGGREGATIONS = ('mean', 'sum')


def trapezoid_weights(steps):
    """ Weights of the m+1 path points of a trapezoidal rule on [0, 1] """

    weights = np.ones(steps + 1, dtype=np.float64)
    weights[0] = weights[-1] = 0.5
    return weights / steps


def _as_sample(model, x, what):
    x = np.asarray(getattr(x, 'data', x), dtype=np.float64)
    if x.shape != model.input_shape:
        raise InputError('{} shape {} does not match model input {}'.format(what, x.shape, model.input_shape))
    return x


def _resolve_baseline(model, x, baseline):
    if baseline is None or (isinstance(baseline, str) and baseline == 'zeros'):
        return np.zeros_like(x)
    return _as_sample(model, baseline, 'baseline')


class IntegratedGradients(object):
    """
    Integrated Gradients of one input against one baseline.

    The m+1 straight-line path points share a single eval-mode forward
    pass; each output neuron then costs one backward pass.

    :param model: type ModelGraph
    :param x: standardized sample (channel, lat, lon)
    :param baseline: sample of the same shape, 'zeros' or None
    :param steps: m >= 1 trapezoid intervals
    """

    def __init__(self, model, x, baseline=None, steps=DEFAULT_STEPS):
        if int(steps) < 1:
            raise InputError('integrated gradients need at least one step')
        self.model = model
        self.steps = int(steps)
        self.x = _as_sample(model, x, 'input')
        self.baseline = _resolve_baseline(model, self.x, baseline)
        self.diff = self.x - self.baseline
        alphas = np.linspace(0.0, 1.0, self.steps + 1)
        self.path = self.baseline[None] + alphas[:, None, None, None] * self.diff[None]
        self.outputs, self.tape = model.forward(self.path, EVAL)
        self.outputs = self.outputs.reshape(self.steps + 1, -1).astype(np.float64)
        self.weights = trapezoid_weights(self.steps)

    def __call__(self, index):
        """ Signed attribution (channel, lat, lon) of output neuron index """

        grads = self.model.input_gradient(self.path, index, tape=self.tape)
        avg = np.tensordot(self.weights, grads.astype(np.float64), axes=1)
        attribution = self.diff * avg
        if not np.all(np.isfinite(attribution)):
            raise AttributionError('non-finite gradient for output {}'.format(index))
        return attribution

    def output_change(self, index):
        """ F(x) - F(baseline) for output neuron index """

        return float(self.outputs[-1, index] - self.outputs[0, index])

    def completeness_gap(self, index, attribution):
        return abs(float(attribution.sum()) - self.output_change(index))


def integrated_gradients(model, x, baseline, index, steps=DEFAULT_STEPS):
    """
    Signed Integrated Gradients attribution of one output neuron.

    IG_i = (x_i - x'_i) * trapezoid mean over alpha in [0, 1] of
    dF(x' + alpha (x - x'))/dx_i, with m+1 equally spaced alphas.

    :param model: type ModelGraph (evaluated in eval mode)
    :param x: standardized day sample (channel, lat, lon)
    :param baseline: same-shape sample, 'zeros' or None
    :param index: target location (output neuron)
    :param steps: m >= 1
    :return: numpy array (channel, lat, lon)
    """
    return IntegratedGradients(model, x, baseline, steps)(index)


def completeness_error(model, x, baseline, index, attribution):
    """ |sum(IG) - (F(x) - F(baseline))| """

    x = _as_sample(model, x, 'input')
    baseline = _resolve_baseline(model, x, baseline)
    out = model.predict(np.stack([x, baseline])).reshape(2, -1).astype(np.float64)
    return abs(float(np.sum(attribution)) - float(out[0, index] - out[1, index]))


class SaliencyCube(object):
    """
    Normalised, thresholded saliency of one day: (location, channel, lat,
    lon) values in [0, 1] with a maximum of exactly 1 per non-empty
    location.

    :param values: numpy array
    :param day: datetime.date or None
    :param provenance: dict (model id, baseline, steps, empty locations, ...)
    :param geometry: predictor GridGeometry, optional
    :param channels: predictor channels, optional
    """

    def __init__(self, values, day=None, provenance=None, geometry=None, channels=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 4:
            raise InputError('saliency cube needs (location, channel, lat, lon) values')
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise InputError('saliency values must lie in [0, 1]')
        self.values = values
        self.day = None if day is None else H.to_date(day)
        self.provenance = dict(provenance or {})
        self.geometry = geometry
        self.channels = channels

    @property
    def n_locations(self):
        return self.values.shape[0]

    @property
    def empty_locations(self):
        return list(self.provenance.get('empty_locations', []))

    def __repr__(self):
        return 'SaliencyCube(day={}, locations={}, channels={})'.format(
            self.day, self.values.shape[0], self.values.shape[1])


def normalize_threshold(raw, day=None, provenance=None, threshold=THRESHOLD, geometry=None, channels=None):
    """
    Absolute value, per-location division by the maximum over every channel
    and gridbox, and removal of values below threshold.

    Locations whose raw map is entirely zero stay zero and are listed in
    provenance['empty_locations'].

    :param raw: signed attributions (location, channel, lat, lon) of one day
    :return: SaliencyCube
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4:
        raise InputError('raw attributions need (location, channel, lat, lon) axes')
    if not np.all(np.isfinite(raw)):
        raise AttributionError('raw attributions contain non-finite values')
    values = np.abs(raw)
    peak = values.reshape(values.shape[0], -1).max(axis=1) if values.size else np.zeros(raw.shape[0])
    empty = peak == 0.0
    scale = np.where(empty, 1.0, peak)
    values = values / scale[:, None, None, None]
    values[values < threshold] = 0.0
    provenance = dict(provenance or {})
    provenance['empty_locations'] = [int(i) for i in np.flatnonzero(empty)]
    provenance['threshold'] = float(threshold)
    if empty.any():
        log.info('%d location(s) with an all-zero saliency map on %s', int(empty.sum()), day)
    return SaliencyCube(values, day, provenance, geometry, channels)


def saliency_cubes(model, field, baseline=None, steps=DEFAULT_STEPS, locations=None, threshold=THRESHOLD):
    """
    One SaliencyCube per day of a standardized predictor field.

    :param model: type ModelGraph
    :param field: standardized GriddedField
    :param baseline: sample, 'zeros' or None
    :param steps: IG steps
    :param locations: output indices to explain, default all
    :return: list of SaliencyCube
    """
    if locations is None:
        locations = range(model.output_size)
    locations = [int(i) for i in locations]
    model_id = model.fingerprint()
    baseline_id = 'zeros' if baseline is None or isinstance(baseline, str) else 'custom'
    cubes = []
    for t, day in enumerate(field.times):
        ig = IntegratedGradients(model, field.data[t], baseline, steps)
        raw = np.stack([ig(i) for i in locations]) if locations else np.zeros((0,) + model.input_shape)
        gap = max([ig.completeness_gap(i, a) for i, a in zip(locations, raw)] or [0.0])
        provenance = {
            'model_id': model_id,
            'baseline': baseline_id,
            'steps': ig.steps,
            'locations': locations,
            'completeness_gap': gap,
        }
        cubes.append(normalize_threshold(raw, day, provenance, threshold, field.geometry, field.channels))
        log.debug('saliency for %s: %d locations, completeness gap %.3g', day, len(locations), gap)
    return cubes


def location_map(cube, location, channel=None):
    """ The normalised saliency map of one target location (for inspection) """

    if not 0 <= int(location) < cube.n_locations:
        raise InputError('location {} out of range'.format(location))
    values = cube.values[int(location)]
    return values if channel is None else values[int(channel)]


def _check_cubes(cubes):
    cubes = list(cubes)
    if not cubes:
        raise InputError('no saliency cubes in the period')
    shape = cubes[0].values.shape
    for cube in cubes:
        if cube.values.shape != shape:
            raise InputError('saliency cubes disagree in shape: {} vs {}'.format(cube.values.shape, shape))
    return cubes


def _period_of(cubes):
    days = sorted(c.day for c in cubes if c.day is not None)
    return (days[0], days[-1]) if days else None


def _aggregate(stack, aggregation):
    if aggregation not in AGGREGATIONS:
        raise InputError('aggregation must be one of {}'.format(AGGREGATIONS))
    return stack.mean(axis=0) if aggregation == 'mean' else stack.sum(axis=0)


class ASMField(object):
    """ (channel, lat, lon) accumulated saliency on the predictor grid """

    def __init__(self, values, period=None, aggregation='mean', n_days=0, geometry=None, channels=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.period = period
        self.aggregation = aggregation
        self.n_days = int(n_days)
        self.geometry = geometry
        self.channels = channels

    def __repr__(self):
        return 'ASMField(period={}, aggregation={}, days={})'.format(self.period, self.aggregation, self.n_days)


def accumulate_asm(cubes, aggregation='mean'):
    """
    Sum each day's cube over target locations, then aggregate over days.

    :param cubes: SaliencyCube sequence sharing one layout
    :param aggregation: 'mean' (default) or 'sum' over days
    :return: ASMField
    """
    cubes = _check_cubes(cubes)
    daily = np.stack([cube.values.sum(axis=0) for cube in cubes])
    return ASMField(_aggregate(daily, aggregation), _period_of(cubes), aggregation, len(cubes),
                    cubes[0].geometry, cubes[0].channels)


class SDMField(object):
    """
    (channel, location) distance-weighted salience on the predictand mask.

    labels names each row: a channel index, or 'all' for the combined
    variant.
    """

    def __init__(self, values, labels, period=None, aggregation='mean', normalized=False, n_days=0):
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = list(labels)
        self.period = period
        self.aggregation = aggregation
        self.normalized = bool(normalized)
        self.n_days = int(n_days)

    def __repr__(self):
        return 'SDMField(rows={}, locations={}, normalized={})'.format(
            self.values.shape[0], self.values.shape[1], self.normalized)

    def row(self, label):
        return self.values[self.labels.index(label)]


def target_distances(predictor_geometry, mask):
    """ (location, lat, lon) km from each predictor gridbox to each target """

    lats, lons = mask.coordinates()
    return np.stack([distance_field(predictor_geometry, (lat, lon)) for lat, lon in zip(lats, lons)])


def compute_sdm(cubes, predictor_geometry, mask, channel=None, combine_channels=False,
                normalized=False, aggregation='mean'):
    """
    Saliency dispersion per target location.

    Per day and location: sum over predictor gridboxes of salience times
    the great-circle distance to the target, then aggregation over days.

    :param cubes: SaliencyCube sequence
    :param predictor_geometry: grid of the cubes
    :param mask: LandMask of the predictand (location order of the cubes)
    :param channel: channel index; None keeps every channel as its own row
    :param combine_channels: sum the selected channels before weighting
    :param normalized: divide by total salience (mean distance instead of sum)
    :param aggregation: 'mean' or 'sum' over days
    :return: SDMField
    """
    cubes = _check_cubes(cubes)
    n_loc, n_chan = cubes[0].values.shape[:2]
    if cubes[0].values.shape[2:] != predictor_geometry.shape:
        raise InputError('saliency cubes are not on the predictor grid')
    if n_loc != len(mask):
        raise InputError('cubes hold {} locations, mask has {}'.format(n_loc, len(mask)))
    if channel is None:
        channels = list(range(n_chan))
    else:
        if not 0 <= int(channel) < n_chan:
            raise InputError('channel {} not present in the cubes'.format(channel))
        channels = [int(channel)]
    labels = ['all'] if combine_channels else channels
    distances = target_distances(predictor_geometry, mask)

    daily = []
    for cube in cubes:
        salience = cube.values[:, channels]
        if combine_channels:
            salience = salience.sum(axis=1, keepdims=True)
        weighted = np.einsum('lkhw,lhw->kl', salience, distances)
        if normalized:
            total = salience.sum(axis=(2, 3)).T
            weighted = np.divide(weighted, total, out=np.zeros_like(weighted), where=total > 0)
        daily.append(weighted)
    return SDMField(_aggregate(np.stack(daily), aggregation), labels, _period_of(cubes),
                    aggregation, normalized, len(cubes))


def gridbox_diagonal_km(geometry):
    """ Largest great-circle length of one gridbox diagonal on the grid """

    lats, lons = geometry.lats, geometry.lons
    dlat = abs(lats[1] - lats[0]) if lats.size > 1 else (geometry.resolution or 0.0)
    dlon = abs(lons[1] - lons[0]) if lons.size > 1 else (geometry.resolution or 0.0)
    return float(np.max(haversine(lats - dlat / 2.0, 0.0, lats + dlat / 2.0, dlon)))


def support_neighbourhood(geometry, supports, radius_km):
    """
    Gridboxes whose centre lies within radius_km of any support gridbox.

    :param geometry: predictor grid
    :param supports: boolean (..., lat, lon) array of true support cells
    :param radius_km: float
    :return: boolean (lat, lon) array
    """
    supports = np.asarray(supports, dtype=bool).reshape((-1,) + geometry.shape).any(axis=0)
    grid_lat, grid_lon = geometry.mesh()
    near = np.zeros(geometry.shape, dtype=bool)
    for row, col in np.argwhere(supports):
        lat, lon = geometry.center(row, col)
        near |= haversine(grid_lat, grid_lon, lat, lon) <= radius_km
    return near


def asm_mass_fraction(asm, channel, region):
    """ Share of one channel's ASM mass inside a boolean (lat, lon) region """

    values = asm.values[int(channel)]
    total = float(values.sum())
    if total == 0.0:
        return 0.0
    return float(values[np.asarray(region, dtype=bool)].sum()) / total


def sdm_within(sdm, label, limit_km):
    """ Share of locations whose SDM row value is at most limit_km """

    row = sdm.row(label)
    return float(np.mean(row <= limit_km)) if row.size else 0.0
