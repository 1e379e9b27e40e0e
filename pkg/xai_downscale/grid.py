"""
Grid geometry, gridded fields, land masks and great-circle distances.

Every other module builds on the types defined here. Instances are treated
as immutable once constructed: the arrays they hold are exposed read-only.
"""

import logging

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from xai_downscale.errors import InputError
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

LON_CONVENTIONS = ('-180..180', '0..360')

KNOWN_VARIABLES = (
    'geopotential',
    'specific-humidity',
    'air-temperature',
    'zonal-wind',
    'meridional-wind',
)


def _frozen(array, dtype=None):
    array = np.array(array, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


def _strictly_monotonic(values):
    if values.size < 2:
        return True
    steps = np.diff(values)
    return bool(np.all(steps > 0) or np.all(steps < 0))


def wrap_longitude(lon, convention='-180..180'):
    lon = np.asarray(lon, dtype=np.float64)
    if convention == '0..360':
        return np.mod(lon, 360.0)
    return np.mod(lon + 180.0, 360.0) - 180.0


class GridGeometry(object):
    """
    Regular lat/lon grid described by its gridbox centres.

    Row ``i`` is latitude ``lats[i]`` and column ``j`` is longitude
    ``lons[j]``; the orientation of either axis is free as long as it is
    strictly monotonic.

    :param lats: gridbox-centre latitudes in degrees
    :param lons: gridbox-centre longitudes in degrees
    :param resolution: degrees per gridbox (informational)
    :param lon_convention: '-180..180' or '0..360'
    """

    def __init__(self, lats, lons, resolution=None, lon_convention='-180..180'):
        lats = np.asarray(lats, dtype=np.float64).ravel()
        lons = np.asarray(lons, dtype=np.float64).ravel()
        if lats.size == 0 or lons.size == 0:
            raise InputError('grid geometry needs at least one latitude and one longitude')
        if not (np.all(np.isfinite(lats)) and np.all(np.isfinite(lons))):
            raise InputError('grid coordinates must be finite')
        if np.any(np.abs(lats) > 90.0):
            raise InputError('latitudes must lie in [-90, 90]')
        if not _strictly_monotonic(lats):
            raise InputError('latitudes must be strictly monotonic')
        if not _strictly_monotonic(lons):
            raise InputError('longitudes must be strictly monotonic')
        if lon_convention not in LON_CONVENTIONS:
            raise InputError('unknown longitude convention {!r}'.format(lon_convention))
        self._lats = _frozen(lats)
        self._lons = _frozen(lons)
        self.resolution = None if resolution is None else float(resolution)
        self.lon_convention = lon_convention

    @property
    def lats(self):
        return self._lats

    @property
    def lons(self):
        return self._lons

    @property
    def shape(self):
        return self._lats.size, self._lons.size

    def __repr__(self):
        return 'GridGeometry({}x{}, lat {:g}..{:g}, lon {:g}..{:g})'.format(
            self.shape[0], self.shape[1],
            self._lats[0], self._lats[-1], self._lons[0], self._lons[-1])

    def __eq__(self, other):
        if not isinstance(other, GridGeometry):
            return False
        return (self.lon_convention == other.lon_convention and
                np.array_equal(self._lats, other.lats) and
                np.array_equal(self._lons, other.lons))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self._lats.tobytes(), self._lons.tobytes(), self.lon_convention))

    def center(self, row, col):
        """ (lat, lon) of the gridbox at (row, col) """

        return float(self._lats[row]), float(self._lons[col])

    def index_of(self, lat, lon):
        """
        (row, col) of the gridbox whose centre is nearest to (lat, lon)

        Exact for gridbox centres, so center() and index_of() round-trip.
        """
        lon = float(wrap_longitude(lon, self.lon_convention))
        row = int(np.argmin(np.abs(self._lats - lat)))
        dlon = np.abs(wrap_longitude(self._lons - lon))
        col = int(np.argmin(dlon))
        return row, col

    def contains_cell(self, lat, lon):
        """
        (row, col) of the gridbox containing (lat, lon), or None when the
        point lies outside every gridbox.
        """
        row, col = self.index_of(lat, lon)
        half_lat = self._half_spacing(self._lats, row)
        half_lon = self._half_spacing(self._lons, col)
        dlat = abs(self._lats[row] - lat)
        dlon = abs(float(wrap_longitude(self._lons[col] - lon)))
        if dlat <= half_lat and dlon <= half_lon:
            return row, col
        return None

    def _half_spacing(self, axis, index):
        if axis.size < 2:
            if self.resolution is None:
                return np.inf
            return self.resolution / 2.0
        neighbour = index + 1 if index + 1 < axis.size else index - 1
        return abs(axis[neighbour] - axis[index]) / 2.0

    def mesh(self):
        """ (lat, lon) arrays of shape (nlat, nlon) """

        return np.meshgrid(self._lats, self._lons, indexing='ij')

    def to_dict(self):
        return {
            'lats': [float(v) for v in self._lats],
            'lons': [float(v) for v in self._lons],
            'resolution': self.resolution,
            'lon_convention': self.lon_convention,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['lats'], data['lons'],
                   resolution=data.get('resolution'),
                   lon_convention=data.get('lon_convention', '-180..180'))

    @classmethod
    def regular(cls, lat_start, lon_start, nlat, nlon, resolution, lon_convention='-180..180'):
        """ Build a regular grid from its first centre and a spacing """

        lats = lat_start + resolution * np.arange(nlat)
        lons = lon_start + resolution * np.arange(nlon)
        return cls(lats, lons, resolution=abs(resolution), lon_convention=lon_convention)


class ChannelSpec(object):
    """
    One predictor channel: a variable at a pressure level.

    Written as 'variable@level', e.g. 'air-temperature@1000'.
    """

    def __init__(self, variable, level):
        self.variable = str(variable).strip()
        if not self.variable:
            raise InputError('channel variable must not be empty')
        self.level = int(level)

    @property
    def is_other(self):
        return self.variable not in KNOWN_VARIABLES

    def __repr__(self):
        return 'ChannelSpec({}@{})'.format(self.variable, self.level)

    def __str__(self):
        return '{}@{}'.format(self.variable, self.level)

    def __eq__(self, other):
        return isinstance(other, ChannelSpec) and (self.variable, self.level) == (other.variable, other.level)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.variable, self.level))

    @classmethod
    def parse(cls, text):
        if isinstance(text, ChannelSpec):
            return text
        variable, sep, level = str(text).rpartition('@')
        if not sep:
            raise InputError('channel must look like variable@level: {!r}'.format(text))
        try:
            return cls(variable, int(level))
        except ValueError:
            raise InputError('channel level is not an integer: {!r}'.format(text))


def _check_channels(channels):
    channels = [ChannelSpec.parse(c) for c in channels]
    if len(set(channels)) != len(channels):
        raise InputError('duplicate (variable, level) channels: {}'.format(
            ', '.join(str(c) for c in channels)))
    return channels


class GriddedField(object):
    """
    A [time, channel, lat, lon] array bound to its grid.

    Houses predictor fields and, with pseudo-channels, saliency fields.

    :param data: 4-axis real array
    :param geometry: type GridGeometry
    :param channels: list of ChannelSpec (or 'variable@level' strings)
    :param times: list of daily dates
    """

    def __init__(self, data, geometry, channels, times):
        data = np.asarray(data)
        if data.ndim != 4:
            raise InputError('gridded field data must have 4 axes, got {}'.format(data.ndim))
        self.geometry = geometry
        self.channels = _check_channels(channels)
        self.times = [H.to_date(t) for t in times]
        expected = (len(self.times), len(self.channels)) + geometry.shape
        if data.shape != expected:
            raise InputError('field shape {} does not match axes {}'.format(data.shape, expected))
        H.require_finite(data, 'gridded field')
        self._data = _frozen(data)

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def sample_shape(self):
        return self._data.shape[1:]

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        return 'GriddedField(times={}, channels={}, grid={}x{})'.format(
            len(self.times), len(self.channels), *self.geometry.shape)

    def channel_index(self, channel):
        if isinstance(channel, (int, np.integer)):
            if not 0 <= channel < len(self.channels):
                raise InputError('channel index {} out of range'.format(channel))
            return int(channel)
        channel = ChannelSpec.parse(channel)
        try:
            return self.channels.index(channel)
        except ValueError:
            raise InputError('channel {} not in field'.format(channel))

    def with_data(self, data, times=None):
        """ A field sharing this field's metadata with new values """

        return GriddedField(data, self.geometry, self.channels,
                            self.times if times is None else times)

    def select_times(self, period=None, months=None):
        idx = H.period_indices(self.times, period, months)
        return GriddedField(self._data[idx], self.geometry, self.channels,
                            [self.times[i] for i in idx])

    def same_layout(self, other):
        return self.geometry == other.geometry and self.channels == other.channels


class LandMask(object):
    """
    Boolean mask over a predictand grid plus the fixed enumeration of its
    true cells.

    Locations are enumerated row-major starting from the north-west corner,
    whatever the orientation of the geometry axes.
    """

    def __init__(self, geometry, cells):
        cells = np.asarray(cells, dtype=bool)
        if cells.shape != geometry.shape:
            raise InputError('mask shape {} does not match grid {}'.format(cells.shape, geometry.shape))
        self.geometry = geometry
        self._cells = _frozen(cells)
        rows = np.argsort(-geometry.lats, kind='stable')
        cols = np.argsort(geometry.lons, kind='stable')
        order = [(r, c) for r in rows for c in cols if cells[r, c]]
        self._rows = _frozen([r for r, _ in order], dtype=np.int64)
        self._cols = _frozen([c for _, c in order], dtype=np.int64)

    @property
    def cells(self):
        return self._cells

    @property
    def rows(self):
        return self._rows

    @property
    def cols(self):
        return self._cols

    @property
    def flat_indices(self):
        """ Indices into the raveled (lat, lon) grid in enumeration order """

        return self._rows * self.geometry.shape[1] + self._cols

    def __len__(self):
        return int(self._rows.size)

    def __eq__(self, other):
        return (isinstance(other, LandMask) and self.geometry == other.geometry and
                np.array_equal(self._cells, other.cells))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return 'LandMask(locations={}, grid={}x{})'.format(len(self), *self.geometry.shape)

    def coordinates(self):
        """ (lats, lons) of the locations in enumeration order """

        return self.geometry.lats[self._rows], self.geometry.lons[self._cols]

    def scatter(self, values, fill=np.nan):
        """ Place per-location values back on the grid """

        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self),):
            raise InputError('expected {} location values, got {}'.format(len(self), values.shape))
        grid = np.full(self.geometry.shape, fill, dtype=np.float64)
        grid[self._rows, self._cols] = values
        return grid

    def gather(self, grid):
        """ Per-location values of a (..., lat, lon) array """

        grid = np.asarray(grid)
        return grid[..., self._rows, self._cols]

    @classmethod
    def full(cls, geometry):
        return cls(geometry, np.ones(geometry.shape, dtype=bool))


class TargetField(object):
    """
    A [time, location] array over the true cells of a land mask.

    Houses observed predictands and model predictions.
    """

    def __init__(self, values, mask, times):
        values = np.asarray(values)
        self.mask = mask
        self.times = [H.to_date(t) for t in times]
        if values.shape != (len(self.times), len(mask)):
            raise InputError('target values {} do not match ({}, {})'.format(
                values.shape, len(self.times), len(mask)))
        H.require_finite(values, 'target field')
        self._values = _frozen(values)

    @property
    def values(self):
        return self._values

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        return 'TargetField(times={}, locations={})'.format(len(self.times), len(self.mask))

    def select_times(self, period=None, months=None):
        idx = H.period_indices(self.times, period, months)
        return TargetField(self._values[idx], self.mask, [self.times[i] for i in idx])

    def with_values(self, values, times=None):
        return TargetField(values, self.mask, self.times if times is None else times)


def haversine(lat1, lon1, lat2, lon2):
    """
    Vectorised great-circle distance in km on a sphere of radius
    EARTH_RADIUS_KM. Arguments in degrees, broadcast against each other.
    """
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2.0) ** 2 +
         np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def haversine_distance(a, b):
    """
    Great-circle distance in km between two (lat, lon) points in degrees.

    :param a: (lat, lon)
    :param b: (lat, lon)
    :return: float
    """
    coords = np.asarray([a[0], a[1], b[0], b[1]], dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise InputError('haversine_distance needs finite coordinates')
    if abs(coords[0]) > 90.0 or abs(coords[2]) > 90.0:
        raise InputError('latitudes must lie in [-90, 90]')
    return float(haversine(coords[0], coords[1], coords[2], coords[3]))


def distance_field(geometry, target):
    """
    Distance in km from every gridbox centre to target; the gridbox that
    contains target is set to 0.

    :param geometry: type GridGeometry
    :param target: (lat, lon)
    :return: numpy array of shape geometry.shape
    """
    if geometry is None or 0 in geometry.shape:
        raise InputError('distance_field needs a non-empty geometry')
    lat, lon = float(target[0]), float(target[1])
    if not (np.isfinite(lat) and np.isfinite(lon)) or abs(lat) > 90.0:
        raise InputError('invalid target point ({}, {})'.format(lat, lon))
    grid_lat, grid_lon = geometry.mesh()
    dist = haversine(grid_lat, grid_lon, lat, lon)
    cell = geometry.contains_cell(lat, lon)
    if cell is not None:
        dist[cell] = 0.0
    return dist


def _ascending(axis):
    order = np.argsort(axis, kind='stable')
    return axis[order], order


def bilinear_regrid(src, dst_geometry):
    """
    Bilinear interpolation of every (time, channel) slice of src onto
    dst_geometry.

    Destination centres outside the source hull are clamped to the nearest
    source row/column; no extrapolation.

    :param src: type GriddedField
    :param dst_geometry: type GridGeometry
    :return: GriddedField on dst_geometry
    """
    geo = src.geometry
    if min(geo.shape) < 2:
        raise InputError('bilinear regridding needs at least 2x2 source gridboxes')
    lat_axis, lat_order = _ascending(geo.lats)
    lon_axis, lon_order = _ascending(wrap_longitude(geo.lons, geo.lon_convention))
    if not _strictly_monotonic(lon_axis):
        raise InputError('source longitudes collapse after wrapping')

    dst_lats = dst_geometry.lats
    dst_lons = wrap_longitude(dst_geometry.lons, geo.lon_convention)
    lat_inside = (dst_lats >= lat_axis[0]) & (dst_lats <= lat_axis[-1])
    lon_inside = (dst_lons >= lon_axis[0]) & (dst_lons <= lon_axis[-1])
    if not (lat_inside.any() and lon_inside.any()):
        raise InputError('destination grid lies entirely outside the source domain')
    clamped = int((~lat_inside).sum()) + int((~lon_inside).sum())
    if clamped:
        log.debug('clamping %d destination rows/columns to the source hull', clamped)

    values = src.data[:, :, lat_order][:, :, :, lon_order].astype(np.float64)
    values = np.moveaxis(values, (2, 3), (0, 1))
    interpolator = RegularGridInterpolator((lat_axis, lon_axis), values, method='linear')
    qlat, qlon = np.meshgrid(np.clip(dst_lats, lat_axis[0], lat_axis[-1]),
                             np.clip(dst_lons, lon_axis[0], lon_axis[-1]), indexing='ij')
    points = np.stack([qlat.ravel(), qlon.ravel()], axis=-1)
    out = interpolator(points).reshape(dst_geometry.shape + values.shape[2:])
    out = np.moveaxis(out, (0, 1), (2, 3)).astype(src.data.dtype)
    return GriddedField(out, dst_geometry, src.channels, src.times)
