"""
Named lat-lon polygons and their membership over a predictand land mask.
"""

from collections import OrderedDict
import logging

import numpy as np
import yaml

from xai_downscale.errors import InputError

log = logging.getLogger(__name__)


def points_in_polygon(lats, lons, polygon):
    """
    Crossing-number point-in-polygon test.

    Half-open on both axes: a point on a south or west edge is inside, a
    point on a north or east edge is outside, so polygons that tile the
    plane never share a point.

    :param lats: numpy array of point latitudes
    :param lons: numpy array of point longitudes, same shape
    :param polygon: (n, 2) vertices as (lat, lon), closed implicitly
    :return: boolean array with the shape of lats
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    inside = np.zeros(lats.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        lat_i, lon_i = poly[i]
        lat_j, lon_j = poly[i - 1]
        spans = (lat_i > lats) != (lat_j > lats)
        if not spans.any():
            continue
        with np.errstate(divide='ignore', invalid='ignore'):
            cross = lon_i + (lats - lat_i) * (lon_j - lon_i) / (lat_j - lat_i)
        inside ^= spans & (lons < cross)
    return inside


class RegionSet(object):
    """
    An ordered set of named polygons.

    :param regions: mapping name -> sequence of (lat, lon) vertices
    """

    def __init__(self, regions):
        self.regions = OrderedDict()
        for name, polygon in regions.items():
            poly = np.asarray(polygon, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise InputError('region {!r} needs at least three (lat, lon) vertices'.format(name))
            if not np.all(np.isfinite(poly)):
                raise InputError('region {!r} has non-finite vertices'.format(name))
            self.regions[str(name)] = poly

    def __repr__(self):
        return 'RegionSet({})'.format(', '.join(self.regions))

    def __len__(self):
        return len(self.regions)

    @property
    def names(self):
        return list(self.regions)

    @classmethod
    def load(cls, path):
        """
        Load regions from a YAML file of the form

            regions:
              - name: NWN
                polygon: [[50.0, -170.0], [50.0, -105.0], ...]
        """
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        entries = data.get('regions') if isinstance(data, dict) else None
        if not isinstance(entries, list):
            raise InputError('{}: expected a list under "regions"'.format(path))
        regions = OrderedDict()
        for entry in entries:
            if not isinstance(entry, dict) or 'name' not in entry or 'polygon' not in entry:
                raise InputError('{}: every region needs a name and a polygon'.format(path))
            if entry['name'] in regions:
                raise InputError('{}: duplicate region {!r}'.format(path, entry['name']))
            regions[entry['name']] = entry['polygon']
        return cls(regions)

    def assign(self, mask):
        """
        Region index of every mask location, -1 where unassigned.

        :param mask: type LandMask
        :return: numpy int array in mask enumeration order
        """
        lats, lons = mask.coordinates()
        members = np.full(len(mask), -1, dtype=np.int64)
        for index, (name, polygon) in enumerate(self.regions.items()):
            inside = points_in_polygon(lats, lons, polygon)
            clash = inside & (members >= 0)
            if clash.any():
                other = self.names[members[clash][0]]
                raise InputError('regions {!r} and {!r} overlap at {} location(s)'.format(
                    other, name, int(clash.sum())))
            members[inside] = index
        log.debug('%d of %d locations assigned to a region', int((members >= 0).sum()), len(mask))
        return members
