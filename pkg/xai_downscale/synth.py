"""
Synthetic predictor/predictand pairs with a known locality structure.

Every target location depends linearly on the causal predictor channel
inside a disc of radius rho around it:

    y(t, s) = sum_i w[s, i] * x(t, causal, i) + noise

with positive weights summing to 1 per location. Every channel carries a
seasonal cycle plus independent daily noise, so monthly moments differ
between months.
"""

import logging

import numpy as np

from xai_downscale.errors import InputError, SpecError
from xai_downscale.grid import GriddedField, TargetField, distance_field
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

SEASONAL_AMPLITUDE = 1.0
WEIGHT_RANGE = (0.5, 1.5)


class SyntheticSpec(object):
    """
    :param seed: seeds every random draw
    :param predictor_geometry: GridGeometry of the predictors
    :param channels: predictor channels
    :param mask: LandMask on the predictand grid
    :param radius_km: locality radius rho
    :param causal_channel: index of the channel the predictand depends on
    :param noise_std: standard deviation of the additive predictand noise
    :param start: first day
    :param days: number of days
    :param weights: optional (location, lat, lon) stencils replacing the random ones
    """

    def __init__(self, seed, predictor_geometry, channels, mask, radius_km, causal_channel=0,
                 noise_std=0.0, start='2001-01-01', days=500, weights=None):
        self.seed = int(seed)
        self.predictor_geometry = predictor_geometry
        self.channels = list(channels)
        self.mask = mask
        self.radius_km = float(radius_km)
        self.causal_channel = int(causal_channel)
        self.noise_std = float(noise_std)
        self.start = H.to_date(start)
        self.days = int(days)
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        if not self.channels:
            raise SpecError('a synthetic dataset needs at least one channel')
        if not 0 <= self.causal_channel < len(self.channels):
            raise SpecError('causal channel {} out of range'.format(causal_channel))
        if self.radius_km < 0.0 or self.noise_std < 0.0 or self.days < 1:
            raise SpecError('radius and noise must be non-negative and days positive')
        if len(mask) == 0:
            raise SpecError('the predictand mask has no locations')

    def __repr__(self):
        return 'SyntheticSpec(seed={}, days={}, locations={}, radius={:g} km)'.format(
            self.seed, self.days, len(self.mask), self.radius_km)

    @property
    def dates(self):
        return H.daily_dates(self.start, self.days)


def _distances(spec):
    lats, lons = spec.mask.coordinates()
    return np.stack([distance_field(spec.predictor_geometry, (lat, lon)) for lat, lon in zip(lats, lons)])


def true_weights(spec, rng=None):
    """
    (location, lat, lon) weight stencils; every non-zero weight lies
    within spec.radius_km of its target.
    """
    distances = _distances(spec)
    if spec.weights is not None:
        if spec.weights.shape != distances.shape:
            raise SpecError('weights must have shape {}'.format(distances.shape))
        outside = (spec.weights != 0.0) & (distances > spec.radius_km)
        if outside.any():
            location = int(np.argwhere(outside)[0][0])
            raise SpecError('support of location {} reaches beyond {:g} km'.format(location, spec.radius_km))
        return spec.weights.copy()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    inside = distances <= spec.radius_km
    empty = np.flatnonzero(~inside.reshape(len(spec.mask), -1).any(axis=1))
    if empty.size:
        raise SpecError('location {} has no predictor gridbox within {:g} km'.format(int(empty[0]), spec.radius_km))
    weights = np.where(inside, rng.uniform(WEIGHT_RANGE[0], WEIGHT_RANGE[1], size=distances.shape), 0.0)
    return weights / weights.sum(axis=(1, 2), keepdims=True)


def _predictors(spec, dates, rng):
    n_chan = len(spec.channels)
    shape = (len(dates), n_chan) + spec.predictor_geometry.shape
    doy = np.asarray([d.timetuple().tm_yday for d in dates], dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_chan)
    cycle = SEASONAL_AMPLITUDE * np.sin(2.0 * np.pi * doy[:, None] / 365.25 + phase[None, :])
    return cycle[:, :, None, None] + rng.standard_normal(shape)


def _predictand(spec, weights, causal, rng):
    signal = np.einsum('thw,lhw->tl', causal, weights)
    if spec.noise_std > 0.0:
        signal = signal + spec.noise_std * rng.standard_normal(signal.shape)
    return signal


def synth_generate(spec):
    """
    :param spec: type SyntheticSpec
    :return: (predictors GriddedField, predictand TargetField, truth dict with
        'weights' (location, lat, lon), 'supports' (boolean), 'causal_channel'
        and 'radius_km')
    """
    rng = np.random.default_rng(spec.seed)
    weights = true_weights(spec, rng)
    dates = spec.dates
    data = _predictors(spec, dates, rng)
    values = _predictand(spec, weights, data[:, spec.causal_channel], rng)
    predictors = GriddedField(data, spec.predictor_geometry, spec.channels, dates)
    predictand = TargetField(values, spec.mask, dates)
    truth = {
        'weights': weights,
        'supports': weights > 0.0,
        'causal_channel': spec.causal_channel,
        'radius_km': spec.radius_km,
    }
    log.info('synthetic task: %d days, %d locations, mean support %.1f gridboxes',
             len(dates), len(spec.mask), truth['supports'].sum() / float(len(spec.mask)))
    return predictors, predictand, truth


def monthly_shift(dates, shift, shift_start=None):
    """
    Per-day additive shift: shift[month] (degC) on days from shift_start on.

    :param shift: mapping calendar month (1..12) -> shift
    """
    shift = {int(k): float(v) for k, v in (shift or {}).items()}
    for month in shift:
        if not 1 <= month <= 12:
            raise InputError('shift month {} out of range'.format(month))
    start = None if shift_start is None else H.to_date(shift_start)
    return np.asarray([shift.get(d.month, 0.0) if start is None or d >= start else 0.0 for d in dates])


def synth_pseudo_gcm(spec, start, days, shift=None, shift_start=None, offset=0.0, scale=1.0):
    """
    Pseudo-GCM predictors and the matching pseudo-reality predictand.

    The causal channel carries the per-month additive shift from
    shift_start on, so the pseudo-reality predictand (same stencils as
    synth_generate) moves by exactly the shift. The returned predictors
    are then distorted GCM-style: offset + scale * x on every channel.

    :return: (gcm predictors GriddedField, pseudo-reality TargetField, per-day shift array)
    """
    if float(scale) <= 0.0:
        raise SpecError('GCM scale must be positive')
    weights = true_weights(spec, np.random.default_rng(spec.seed))
    rng = np.random.default_rng([spec.seed, 1])
    dates = H.daily_dates(start, days)
    data = _predictors(spec, dates, rng)
    trend = monthly_shift(dates, shift, shift_start)
    data[:, spec.causal_channel] += trend[:, None, None]
    values = _predictand(spec, weights, data[:, spec.causal_channel], rng)
    distorted = float(offset) + float(scale) * data
    return (GriddedField(distorted, spec.predictor_geometry, spec.channels, dates),
            TargetField(values, spec.mask, dates), trend)
