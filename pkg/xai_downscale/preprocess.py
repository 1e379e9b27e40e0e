"""
Predictor preprocessing: grid-box standardization and the signal-preserving
monthly mean/variance adjustment of GCM predictors.

Population (ddof=0) standard deviations throughout.
"""

import logging

import numpy as np

from xai_downscale.errors import InputError, PreprocessingError
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

# relative to max(1, |mean|); absorbs the rounding of a constant series' mean
DEGENERATE_STD = 1e-12


def _degenerate_cells(mean, std):
    return ~(std > DEGENERATE_STD * np.maximum(1.0, np.abs(mean)))


def _describe_cell(field, index):
    index = tuple(int(i) for i in index)
    channel, row, col = index[-3:]
    lat, lon = field.geometry.center(row, col)
    prefix = 'month {} '.format(index[0] + 1) if len(index) == 4 else ''
    return '{}channel {} at row {} col {} (lat {:g}, lon {:g})'.format(
        prefix, field.channels[channel], row, col, lat, lon)


def _check_layout(field, geometry, channels, what):
    if field.geometry != geometry or field.channels != channels:
        raise InputError('{} was fitted on a different grid or channel list'.format(what))


class Standardizer(object):
    """
    Per (channel, lat, lon) mean and standard deviation from a reference
    period.
    """

    def __init__(self, mean, std, geometry, channels, period=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        expected = (len(channels),) + geometry.shape
        if self.mean.shape != expected or self.std.shape != expected:
            raise InputError('standardizer arrays must have shape {}'.format(expected))
        if np.any(_degenerate_cells(self.mean, self.std)):
            raise PreprocessingError('standardizer has non-positive standard deviations')
        self.geometry = geometry
        self.channels = list(channels)
        self.period = H.parse_period(period)

    def __repr__(self):
        return 'Standardizer(channels={}, grid={}x{}, period={})'.format(
            len(self.channels), self.geometry.shape[0], self.geometry.shape[1], self.period)

    def rounded(self):
        """
        The same standardizer with mean and std rounded to the float32
        precision containers store, so a saved and reloaded copy standardizes
        bit-identically.
        """
        return Standardizer(self.mean.astype(np.float32), self.std.astype(np.float32), self.geometry,
                            self.channels, self.period)


def fit_standardizer(predictors, period=None):
    """
    Fit grid-box mean/std over period.

    :param predictors: type GriddedField
    :param period: (start, end), 'start..end' or None for the whole axis
    :return: Standardizer
    """
    subset = predictors.select_times(period)
    if len(subset) == 0:
        raise InputError('standardization period {} selects no days'.format(period))
    data = subset.data.astype(np.float64)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    bad = np.argwhere(_degenerate_cells(mean, std))
    if bad.size:
        raise PreprocessingError('zero variance in {} ({} degenerate cell(s))'.format(
            _describe_cell(predictors, bad[0]), len(bad)))
    if period is None and subset.times:
        period = (subset.times[0], subset.times[-1])
    log.debug('standardizer fitted on %d days', len(subset))
    return Standardizer(mean, std, predictors.geometry, predictors.channels, period)


def apply_standardizer(predictors, standardizer):
    """ (x - mean) / std per cell; same shape and axes """

    _check_layout(predictors, standardizer.geometry, standardizer.channels, 'standardizer')
    data = (predictors.data.astype(np.float64) - standardizer.mean) / standardizer.std
    return predictors.with_data(data)


class MonthlyMoments(object):
    """
    Per (calendar month, channel, lat, lon) mean and standard deviation of
    one dataset over one period.
    """

    def __init__(self, mean, std, geometry, channels, label=''):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        expected = (12, len(channels)) + geometry.shape
        if self.mean.shape != expected or self.std.shape != expected:
            raise InputError('monthly moments must have shape {} (all 12 months)'.format(expected))
        if np.any(_degenerate_cells(self.mean, self.std)):
            raise PreprocessingError('monthly moments have non-positive standard deviations')
        self.geometry = geometry
        self.channels = list(channels)
        self.label = str(label)

    def __repr__(self):
        return 'MonthlyMoments({!r}, channels={})'.format(self.label, len(self.channels))


def monthly_moments(field, period=None, label=''):
    """
    Calendar-month mean/std of a field over period.

    :param field: type GriddedField
    :param period: (start, end) or None
    :param label: free text recorded with the moments
    :return: MonthlyMoments
    """
    subset = field.select_times(period)
    months = np.asarray([t.month for t in subset.times])
    missing = sorted(set(range(1, 13)) - set(months.tolist()))
    if missing:
        raise InputError('period {} lacks calendar month(s) {}'.format(period, missing))
    data = subset.data.astype(np.float64)
    mean = np.stack([data[months == m].mean(axis=0) for m in range(1, 13)])
    std = np.stack([data[months == m].std(axis=0) for m in range(1, 13)])
    bad = np.argwhere(_degenerate_cells(mean, std))
    if bad.size:
        raise PreprocessingError('zero monthly variance in {}'.format(_describe_cell(field, bad[0])))
    return MonthlyMoments(mean, std, field.geometry, field.channels, label)


def adjust_gcm_monthly(gcm, gcm_hist_moments, obs_moments):
    """
    Map GCM predictors onto the observational monthly mean and variance.

    For a day in calendar month m:
    x' = mean_obs[m] + (std_obs[m] / std_gcm[m]) * (x - mean_gcm[m]),
    with the historical GCM moments used for every period, so the
    standardized change signal is preserved.

    :param gcm: GriddedField of any period
    :param gcm_hist_moments: MonthlyMoments of the GCM historical period
    :param obs_moments: MonthlyMoments of the reanalysis training period
    :return: adjusted GriddedField
    """
    for moments, what in ((gcm_hist_moments, 'GCM historical moments'), (obs_moments, 'observational moments')):
        if not isinstance(moments, MonthlyMoments):
            raise InputError('{} are missing'.format(what))
        _check_layout(gcm, moments.geometry, moments.channels, what)
    idx = np.asarray([t.month - 1 for t in gcm.times], dtype=np.int64)
    scale = obs_moments.std / gcm_hist_moments.std
    data = obs_moments.mean[idx] + scale[idx] * (gcm.data.astype(np.float64) - gcm_hist_moments.mean[idx])
    return gcm.with_data(data)
