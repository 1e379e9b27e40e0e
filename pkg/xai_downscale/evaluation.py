"""
Validation indices, spatial summaries, regional aggregation and the
delta-change pseudo-reality protocol.

Percentiles use linear interpolation between order statistics:
h = (n - 1) * p / 100 on the sorted samples.
"""

from collections import OrderedDict
import enum
import logging

import numpy as np

from xai_downscale.errors import InputError, FormatError
from xai_downscale.period_match import PeriodMatch
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

DELTA_THRESHOLD_DEGC = 2.0
MISSING = 'NA'


class ValidationIndex(enum.Enum):

    P02 = 'P02'
    MEAN = 'MEAN'
    P98 = 'P98'
    RMSE = 'RMSE'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise InputError('unknown validation index {!r}'.format(value))


def percentile(samples, p, axis=None):
    """
    :param samples: non-empty real sequence (or array reduced along axis)
    :param p: percent in [0, 100]
    :return: float, or an array when axis is given
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0 or (axis is not None and samples.shape[axis] == 0):
        raise InputError('percentile of an empty sample')
    if not 0.0 <= float(p) <= 100.0:
        raise InputError('percentile {} outside [0, 100]'.format(p))
    H.require_finite(samples, 'percentile sample')
    value = np.percentile(samples, float(p), axis=axis)
    return float(value) if axis is None else value


def index_map(series, index):
    """
    Per-location statistic of a (time, location) array or a TargetField.

    :param index: ValidationIndex other than RMSE
    """
    index = ValidationIndex.parse(index)
    values = np.asarray(getattr(series, 'values', series), dtype=np.float64)
    if values.shape[0] == 0:
        raise InputError('{} of an empty time series'.format(index.value))
    if index is ValidationIndex.MEAN:
        return values.mean(axis=0)
    if index is ValidationIndex.P02:
        return percentile(values, 2.0, axis=0)
    if index is ValidationIndex.P98:
        return percentile(values, 98.0, axis=0)
    raise InputError('RMSE is not a single-series statistic')


def _check_aligned(pred, obs):
    if pred.times != obs.times:
        raise InputError('prediction and observation time axes are not aligned')
    if pred.mask != obs.mask:
        raise InputError('prediction and observation masks differ')
    if len(pred) == 0:
        raise InputError('cannot evaluate an empty time axis')


def bias_map(pred, obs, index):
    """ index(pred) - index(obs) per location """

    _check_aligned(pred, obs)
    return index_map(pred, index) - index_map(obs, index)


def rmse_map(pred, obs):
    """ Root of the mean squared daily error per location """

    _check_aligned(pred, obs)
    diff = pred.values.astype(np.float64) - obs.values.astype(np.float64)
    return np.sqrt(np.mean(diff ** 2, axis=0))


def spatial_mean_abs(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError('spatial mean of an empty map')
    return float(np.mean(np.abs(values)))


def climatology(target):
    """ Per-location mean, standard deviation, P02 and P98 of a TargetField """

    values = target.values.astype(np.float64)
    if values.shape[0] == 0:
        raise InputError('climatology of an empty time series')
    return OrderedDict([
        ('mean', values.mean(axis=0)),
        ('std', values.std(axis=0)),
        ('p02', percentile(values, 2.0, axis=0)),
        ('p98', percentile(values, 98.0, axis=0)),
    ])


def delta_change(series, hist, future, index, month_filter='annual'):
    """
    index over the filtered future days minus index over the filtered
    historical days, per location.

    :param series: TargetField spanning both periods
    :param hist: historical period
    :param future: future period
    :param index: ValidationIndex other than RMSE
    :param month_filter: PeriodMatch filter name, e.g. 'annual' or 'august'
    """
    months = PeriodMatch.months_of(month_filter)
    parts = []
    for period, what in ((hist, 'historical'), (future, 'future')):
        subset = series.select_times(period, months)
        if len(subset) == 0:
            raise InputError('{} period {} has no {} days'.format(what, H.parse_period(period), month_filter))
        parts.append(index_map(subset, index))
    return parts[1] - parts[0]


def region_aggregate(values, regions, mask, latitude_weighted=False):
    """
    Mean of a per-location map over each region's member locations.

    :param values: per-location values in mask order
    :param regions: type RegionSet
    :param mask: type LandMask
    :param latitude_weighted: weight by cos(latitude) instead of equally
    :return: OrderedDict name -> float, None for regions without members
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(mask),):
        raise InputError('expected {} location values, got {}'.format(len(mask), values.shape))
    members = regions.assign(mask)
    weights = np.ones(len(mask))
    if latitude_weighted:
        weights = np.cos(np.radians(mask.coordinates()[0]))
    out = OrderedDict()
    for index, name in enumerate(regions.names):
        inside = members == index
        if not inside.any():
            log.info('region %s has no member locations', name)
            out[name] = None
            continue
        out[name] = float(np.sum(values[inside] * weights[inside]) / np.sum(weights[inside]))
    return out


def period_label(period):
    start, end = H.parse_period(period)
    return '{}..{}'.format(start.isoformat(), end.isoformat())


def regional_deltas(series, regions, hist, futures, indices=('MEAN',), month_filters=('annual',),
                    latitude_weighted=False):
    """
    Regional delta changes keyed by (region, index, period, month filter).

    :param series: TargetField spanning hist and every future period
    :return: OrderedDict of float or None
    """
    out = OrderedDict()
    for future in futures:
        label = period_label(future)
        for index in indices:
            index = ValidationIndex.parse(index)
            for month_filter in month_filters:
                delta = delta_change(series, hist, future, index, month_filter)
                aggregated = region_aggregate(delta, regions, series.mask, latitude_weighted)
                for region, value in aggregated.items():
                    out[(region, index.value, label, month_filter)] = value
    return out


class DeltaRow(object):

    def __init__(self, region, index, period, month_filter, gcm, model, threshold):
        self.region = region
        self.index = ValidationIndex.parse(index).value
        self.period = period
        self.month_filter = month_filter
        self.gcm = None if gcm is None else float(gcm)
        self.model = None if model is None else float(model)
        if self.gcm is None or self.model is None:
            self.diff = None
            self.flag = False
        else:
            self.diff = self.model - self.gcm
            self.flag = abs(self.diff) > threshold

    @property
    def key(self):
        return (self.region, self.index, self.period, self.month_filter)

    def __repr__(self):
        return 'DeltaRow({}, gcm={}, model={}, flag={})'.format(self.key, self.gcm, self.model, self.flag)


def _fmt(value):
    return MISSING if value is None else repr(value)


def _parse_float(text, line):
    if text == MISSING:
        return None
    try:
        return float(text)
    except ValueError:
        raise FormatError('line {}: not a number: {!r}'.format(line, text))


class DeltaReport(object):
    """
    Side-by-side GCM and model deltas per (region, index, period, month
    filter), flagging |model - GCM| above threshold_degc.
    """

    HEADER = ['region', 'index', 'period', 'months', 'gcm', 'model', 'diff', 'flag']

    def __init__(self, rows=None, threshold_degc=DELTA_THRESHOLD_DEGC):
        self.threshold_degc = float(threshold_degc)
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def __repr__(self):
        return 'DeltaReport(rows={}, flagged={})'.format(len(self.rows), len(self.flagged))

    def __eq__(self, other):
        return (isinstance(other, DeltaReport) and self.threshold_degc == other.threshold_degc and
                [(r.key, r.gcm, r.model) for r in self.rows] == [(r.key, r.gcm, r.model) for r in other.rows])

    def __ne__(self, other):
        return not self.__eq__(other)

    def add(self, region, index, period, month_filter, gcm, model):
        row = DeltaRow(region, index, period, month_filter, gcm, model, self.threshold_degc)
        self.rows.append(row)
        return row

    @property
    def flagged(self):
        return [row for row in self.rows if row.flag]

    def to_text(self):
        lines = ['# threshold_degc={!r}'.format(self.threshold_degc), '\t'.join(self.HEADER)]
        for row in self.rows:
            lines.append('\t'.join([row.region, row.index, row.period, row.month_filter,
                                    _fmt(row.gcm), _fmt(row.model), _fmt(row.diff), str(int(row.flag))]))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if len(lines) < 2 or not lines[0].startswith('# threshold_degc='):
            raise FormatError('delta report lacks its threshold line')
        threshold = _parse_float(lines[0].partition('=')[2], 1)
        if threshold is None:
            raise FormatError('delta report threshold is missing')
        if lines[1].split('\t') != cls.HEADER:
            raise FormatError('unexpected delta report header {!r}'.format(lines[1]))
        report = cls(threshold_degc=threshold)
        for number, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            fields = line.split('\t')
            if len(fields) != len(cls.HEADER):
                raise FormatError('line {}: expected {} fields, got {}'.format(number, len(cls.HEADER), len(fields)))
            report.add(fields[0], fields[1], fields[2], fields[3],
                       _parse_float(fields[4], number), _parse_float(fields[5], number))
        return report


def pseudo_reality_report(model_deltas, gcm_deltas, regions=None, periods=None,
                          threshold_degc=DELTA_THRESHOLD_DEGC):
    """
    Pair model and GCM deltas cell by cell.

    Cells present on one side only, or restricted in by regions/periods
    without a value, are reported as missing and never flagged.

    :param model_deltas: mapping (region, index, period, month filter) -> float or None
    :param gcm_deltas: the same for the GCM pseudo-reality
    :param regions: RegionSet or list of names restricting the rows
    :param periods: list of periods restricting the rows
    :return: DeltaReport
    """
    keys = list(gcm_deltas)
    keys += [k for k in model_deltas if k not in gcm_deltas]
    if regions is not None:
        names = regions.names if hasattr(regions, 'names') else list(regions)
        keys = [k for k in keys if k[0] in names]
        present = set(k[0] for k in keys)
        for name in names:
            if name not in present:
                log.info('region %s has no delta cells', name)
    if periods is not None:
        labels = [period_label(p) for p in periods]
        keys = [k for k in keys if k[2] in labels]
    report = DeltaReport(threshold_degc=threshold_degc)
    for key in keys:
        report.add(key[0], key[1], key[2], key[3], gcm_deltas.get(key), model_deltas.get(key))
    if report.flagged:
        log.info('%d delta cell(s) differ by more than %g degC', len(report.flagged), threshold_degc)
    return report
