"""
The dataset container: a two-line header, a YAML manifest and a payload of
little-endian float32 arrays in row-major order.

    XAIDS-CONTAINER <version>
    manifest-bytes <n>
    <n bytes of YAML manifest>
    <payload>

The manifest lists every array with its name, shape, byte offset (from the
start of the payload) and byte count, plus free metadata (grid geometry,
channels, time axis, provenance). The reader validates the whole manifest
against the file size before it touches the payload.
"""

from collections import OrderedDict
import contextlib
import datetime
import logging
import os

import numpy as np
import yaml

from xai_downscale.errors import FormatError, InputError
from xai_downscale.evaluation import DeltaReport
from xai_downscale.graph import ModelGraph
from xai_downscale.grid import GridGeometry, GriddedField, LandMask, TargetField
from xai_downscale.preprocess import MonthlyMoments, Standardizer
from xai_downscale.saliency import ASMField, SaliencyCube, SDMField
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

MAGIC = b'XAIDS-CONTAINER'
FORMAT_VERSION = 1
ELEMENT_TYPE = '<f4'
ITEMSIZE = 4
MASK_ARRAY = 'land_mask'


class Container(object):
    """
    Arrays (float32, by name, in file order) plus the manifest metadata.
    """

    def __init__(self, arrays=None, metadata=None):
        self.arrays = OrderedDict(arrays or {})
        self.metadata = dict(metadata or {})

    def __repr__(self):
        return 'Container(kind={}, arrays={})'.format(self.metadata.get('kind'), list(self.arrays))

    def __getitem__(self, name):
        try:
            return self.arrays[name]
        except KeyError:
            raise FormatError('container has no array {!r}'.format(name))

    @property
    def kind(self):
        return self.metadata.get('kind')

    def expect(self, kind):
        if self.kind != kind:
            raise FormatError('expected a {} container, found {!r}'.format(kind, self.kind))
        return self


def _yaml_safe(value):
    if isinstance(value, dict):
        return {str(k): _yaml_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_yaml_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_yaml_safe(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (datetime.date, datetime.datetime)):
        return value.isoformat()
    return value


def encode_container(arrays, metadata=None):
    """ Serialise arrays and metadata into container bytes """

    entries = []
    payload = []
    offset = 0
    for name, array in arrays.items():
        data = np.ascontiguousarray(np.asarray(array), dtype=ELEMENT_TYPE)
        raw = data.tobytes(order='C')
        entries.append({'name': str(name), 'shape': [int(s) for s in data.shape],
                        'offset': offset, 'nbytes': len(raw)})
        payload.append(raw)
        offset += len(raw)
    manifest = {
        'format_version': FORMAT_VERSION,
        'element_type': ELEMENT_TYPE,
        'arrays': entries,
        'payload_bytes': offset,
        'metadata': _yaml_safe(metadata or {}),
    }
    text = yaml.safe_dump(manifest, default_flow_style=None).encode('utf-8')
    header = MAGIC + ' {}\nmanifest-bytes {}\n'.format(FORMAT_VERSION, len(text)).encode('ascii')
    return header + text + b''.join(payload)


def write_container(path, arrays, metadata=None):
    """
    :param path: destination file
    :param arrays: mapping name -> real array (stored as float32)
    :param metadata: YAML-serialisable dict
    :return: path
    """
    blob = encode_container(arrays, metadata)
    with open(path, 'wb') as f:
        f.write(blob)
    log.debug('wrote %s (%d arrays, %d bytes)', path, len(arrays), len(blob))
    return path


def _header_line(blob, start, what):
    end = blob.find(b'\n', start)
    if end < 0:
        raise FormatError('missing {} line'.format(what), position=start)
    return blob[start:end], end + 1


def _int_field(value, what, position):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise FormatError('manifest {} must be a non-negative integer'.format(what), position=position)
    return value


def decode_container(blob):
    """ Parse container bytes; every check happens before payload access """

    line, cursor = _header_line(blob, 0, 'magic')
    magic, _, version = line.partition(b' ')
    if magic != MAGIC:
        raise FormatError('not a container file', position=0)
    if version.strip() != str(FORMAT_VERSION).encode('ascii'):
        raise FormatError('unsupported container version {!r}'.format(version.decode('ascii', 'replace')),
                          position=len(MAGIC) + 1)
    line_start = cursor
    line, cursor = _header_line(blob, cursor, 'manifest size')
    key, _, size = line.partition(b' ')
    if key != b'manifest-bytes' or not size.strip().isdigit():
        raise FormatError('malformed manifest size line', position=line_start)
    manifest_start = cursor
    manifest_end = manifest_start + int(size)
    if manifest_end > len(blob):
        raise FormatError('truncated manifest: {} bytes declared, {} present'.format(
            int(size), len(blob) - manifest_start), position=len(blob))
    try:
        manifest = yaml.safe_load(blob[manifest_start:manifest_end].decode('utf-8'))
    except (yaml.YAMLError, UnicodeDecodeError) as e:
        raise FormatError('unreadable manifest: {}'.format(e), position=manifest_start)
    if not isinstance(manifest, dict):
        raise FormatError('manifest is not a mapping', position=manifest_start)
    if manifest.get('format_version') != FORMAT_VERSION:
        raise FormatError('manifest version {!r} does not match {}'.format(
            manifest.get('format_version'), FORMAT_VERSION), position=manifest_start)
    if manifest.get('element_type') != ELEMENT_TYPE:
        raise FormatError('unsupported element type {!r}'.format(manifest.get('element_type')),
                          position=manifest_start)

    payload_bytes = _int_field(manifest.get('payload_bytes'), 'payload_bytes', manifest_start)
    entries = manifest.get('arrays')
    if not isinstance(entries, list):
        raise FormatError('manifest lacks its array list', position=manifest_start)
    expected = 0
    layout = []
    for entry in entries:
        if not isinstance(entry, dict) or not isinstance(entry.get('shape'), list):
            raise FormatError('malformed array entry {!r}'.format(entry), position=manifest_start)
        name = str(entry.get('name'))
        shape = tuple(_int_field(s, 'shape of {}'.format(name), manifest_start) for s in entry['shape'])
        offset = _int_field(entry.get('offset'), 'offset of {}'.format(name), manifest_start)
        nbytes = _int_field(entry.get('nbytes'), 'nbytes of {}'.format(name), manifest_start)
        if nbytes != int(np.prod(shape, dtype=np.int64)) * ITEMSIZE:
            raise FormatError('array {} has shape {} but {} bytes'.format(name, shape, nbytes),
                              position=manifest_end + offset)
        if offset != expected:
            raise FormatError('array {} starts at payload offset {}, expected {}'.format(name, offset, expected),
                              position=manifest_end + offset)
        expected = offset + nbytes
        layout.append((name, shape, offset, nbytes))
    if expected != payload_bytes:
        raise FormatError('arrays cover {} payload bytes, manifest declares {}'.format(expected, payload_bytes),
                          position=manifest_end)
    present = len(blob) - manifest_end
    if present < payload_bytes:
        raise FormatError('truncated payload: {} bytes declared, {} present'.format(payload_bytes, present),
                          position=len(blob))
    if present > payload_bytes:
        raise FormatError('{} trailing bytes after the payload'.format(present - payload_bytes),
                          position=manifest_end + payload_bytes)

    arrays = OrderedDict()
    for name, shape, offset, nbytes in layout:
        start = manifest_end + offset
        arrays[name] = np.frombuffer(blob, dtype=ELEMENT_TYPE, count=nbytes // ITEMSIZE,
                                     offset=start).reshape(shape).astype(np.float32)
    return Container(arrays, manifest.get('metadata') or {})


def read_container(path):
    if not os.path.isfile(path):
        raise InputError('container {} does not exist'.format(path))
    with open(path, 'rb') as f:
        blob = f.read()
    try:
        return decode_container(blob)
    except FormatError as e:
        error = FormatError('{}: {}'.format(path, e))
        error.position = e.position
        raise error


# typed codecs
def _times(times):
    return [H.to_date(t).isoformat() for t in times]


def _geometry(metadata, key='geometry'):
    try:
        return GridGeometry.from_dict(metadata[key])
    except (KeyError, TypeError):
        raise FormatError('container metadata lacks a valid {}'.format(key))


@contextlib.contextmanager
def _decoding(path):
    """
    Turns missing or ill-typed metadata met while rebuilding an object
    from a container into a FormatError that names the file.
    """
    try:
        yield
    except FormatError as e:
        raise FormatError('{}: {}'.format(path, e))
    except KeyError as e:
        raise FormatError('{}: container metadata lacks {}'.format(path, e))
    except (TypeError, ValueError) as e:
        raise FormatError('{}: container metadata is inconsistent: {}'.format(path, e))


def save_field(path, field, provenance=None):
    metadata = {
        'kind': 'gridded_field',
        'geometry': field.geometry.to_dict(),
        'channels': [str(c) for c in field.channels],
        'times': _times(field.times),
        'provenance': provenance or {},
    }
    return write_container(path, OrderedDict([('data', field.data)]), metadata)


def load_field(path):
    box = read_container(path).expect('gridded_field')
    with _decoding(path):
        return GriddedField(box['data'], _geometry(box.metadata), box.metadata['channels'], box.metadata['times'])


def _mask_from(box):
    return LandMask(_geometry(box.metadata), box['mask'] > 0.5)


def save_target(path, target, provenance=None):
    metadata = {
        'kind': 'target_field',
        'geometry': target.mask.geometry.to_dict(),
        'times': _times(target.times),
        'provenance': provenance or {},
    }
    arrays = OrderedDict([('values', target.values), ('mask', target.mask.cells)])
    return write_container(path, arrays, metadata)


def load_target(path):
    box = read_container(path).expect('target_field')
    with _decoding(path):
        return TargetField(box['values'], _mask_from(box), box.metadata['times'])


def save_truth(path, weights, mask, predictor_geometry, causal_channel, radius_km):
    """ Per-location true weight stencils (location, lat, lon) on the predictor grid """

    metadata = {
        'kind': 'synth_truth',
        'geometry': predictor_geometry.to_dict(),
        'mask_geometry': mask.geometry.to_dict(),
        'causal_channel': int(causal_channel),
        'locality_radius_km': float(radius_km),
    }
    return write_container(path, OrderedDict([('weights', weights), ('mask', mask.cells)]), metadata)


def load_truth(path):
    """ :return: dict with weights, supports, mask, geometry, causal_channel, radius_km """

    box = read_container(path).expect('synth_truth')
    weights = box['weights'].astype(np.float64)
    with _decoding(path):
        return {
            'weights': weights,
            'supports': weights > 0,
            'mask': LandMask(_geometry(box.metadata, 'mask_geometry'), box['mask'] > 0.5),
            'geometry': _geometry(box.metadata),
            'causal_channel': int(box.metadata['causal_channel']),
            'radius_km': float(box.metadata['locality_radius_km']),
        }


def save_checkpoint(path, model, mask=None, provenance=None):
    """ Graph spec, architecture and parameters; mask is the predictand LandMask """

    metadata = {
        'kind': 'checkpoint',
        'name': model.name,
        'seed': model.seed,
        'input_shape': list(model.input_shape),
        'layers': model.spec(),
        'architecture': model.architecture or {},
        'fingerprint': model.fingerprint(),
        'provenance': provenance or {},
        'mask_geometry': None if mask is None else mask.geometry.to_dict(),
    }
    arrays = OrderedDict(model.params.items())
    if mask is not None:
        arrays[MASK_ARRAY] = mask.cells
    return write_container(path, arrays, metadata)


def load_checkpoint_mask(path):
    """ The predictand LandMask stored with a checkpoint, or None """

    box = read_container(path).expect('checkpoint')
    if not box.metadata.get('mask_geometry'):
        return None
    with _decoding(path):
        return LandMask(_geometry(box.metadata, 'mask_geometry'), box[MASK_ARRAY] > 0.5)


def load_checkpoint(path, dtype=np.float32):
    box = read_container(path).expect('checkpoint')
    meta = box.metadata
    try:
        model = ModelGraph.from_spec(meta['input_shape'], meta['layers'], dtype=dtype,
                                     name=meta.get('name', 'model'), seed=meta.get('seed', 0))
    except (KeyError, TypeError, InputError) as e:
        raise FormatError('{}: checkpoint graph is incomplete: {}'.format(path, e))
    missing = [name for name in model.params.names() if name not in box.arrays]
    if missing:
        raise FormatError('{}: checkpoint lacks parameters {}'.format(path, ', '.join(missing)))
    for name in model.params.names():
        if box[name].shape != model.params[name].shape:
            raise FormatError('{}: parameter {} has shape {}, graph expects {}'.format(
                path, name, box[name].shape, model.params[name].shape))
    model.set_parameters(OrderedDict((name, box[name].astype(dtype)) for name in model.params.names()))
    model.architecture = meta.get('architecture') or None
    return model


def save_standardizer(path, standardizer):
    metadata = {
        'kind': 'standardizer',
        'geometry': standardizer.geometry.to_dict(),
        'channels': [str(c) for c in standardizer.channels],
        'period': None if standardizer.period is None else _times(standardizer.period),
    }
    arrays = OrderedDict([('mean', standardizer.mean), ('std', standardizer.std)])
    return write_container(path, arrays, metadata)


def load_standardizer(path):
    box = read_container(path).expect('standardizer')
    with _decoding(path):
        return Standardizer(box['mean'], box['std'], _geometry(box.metadata), box.metadata['channels'],
                            box.metadata.get('period'))


def save_moments(path, moments):
    metadata = {
        'kind': 'monthly_moments',
        'geometry': moments.geometry.to_dict(),
        'channels': [str(c) for c in moments.channels],
        'label': moments.label,
    }
    return write_container(path, OrderedDict([('mean', moments.mean), ('std', moments.std)]), metadata)


def load_moments(path):
    box = read_container(path).expect('monthly_moments')
    with _decoding(path):
        return MonthlyMoments(box['mean'], box['std'], _geometry(box.metadata), box.metadata['channels'],
                              box.metadata.get('label', ''))


def save_cubes(path, cubes):
    cubes = list(cubes)
    if not cubes:
        raise InputError('no saliency cubes to save')
    first = cubes[0]
    metadata = {
        'kind': 'saliency_cubes',
        'days': [None if c.day is None else c.day.isoformat() for c in cubes],
        'provenance': [c.provenance for c in cubes],
        'geometry': None if first.geometry is None else first.geometry.to_dict(),
        'channels': None if first.channels is None else [str(c) for c in first.channels],
    }
    return write_container(path, OrderedDict([('values', np.stack([c.values for c in cubes]))]), metadata)


def load_cubes(path):
    box = read_container(path).expect('saliency_cubes')
    meta = box.metadata
    values = box['values'].astype(np.float64)
    with _decoding(path):
        geometry = _geometry(meta) if meta.get('geometry') else None
        days, provenance = list(meta['days']), list(meta['provenance'])
        if len(days) != len(values) or len(provenance) != len(values):
            raise FormatError('{} cubes but {} days and {} provenance entries'.format(
                len(values), len(days), len(provenance)))
        return [SaliencyCube(values[i], day, prov, geometry, meta.get('channels'))
                for i, (day, prov) in enumerate(zip(days, provenance))]


def save_asm(path, asm):
    metadata = {
        'kind': 'asm',
        'period': None if asm.period is None else _times(asm.period),
        'aggregation': asm.aggregation,
        'n_days': asm.n_days,
        'geometry': None if asm.geometry is None else asm.geometry.to_dict(),
        'channels': None if asm.channels is None else [str(c) for c in asm.channels],
    }
    return write_container(path, OrderedDict([('values', asm.values)]), metadata)


def load_asm(path):
    box = read_container(path).expect('asm')
    meta = box.metadata
    with _decoding(path):
        geometry = _geometry(meta) if meta.get('geometry') else None
        return ASMField(box['values'], meta.get('period'), meta.get('aggregation', 'mean'), meta.get('n_days', 0),
                        geometry, meta.get('channels'))


def save_sdm(path, sdm, mask=None):
    metadata = {
        'kind': 'sdm',
        'labels': [str(label) for label in sdm.labels],
        'period': None if sdm.period is None else _times(sdm.period),
        'aggregation': sdm.aggregation,
        'normalized': sdm.normalized,
        'n_days': sdm.n_days,
        'geometry': None if mask is None else mask.geometry.to_dict(),
    }
    arrays = OrderedDict([('values', sdm.values)])
    if mask is not None:
        arrays['mask'] = mask.cells
    return write_container(path, arrays, metadata)


def load_sdm(path):
    box = read_container(path).expect('sdm')
    meta = box.metadata
    with _decoding(path):
        labels = [label if label == 'all' else int(label) for label in meta['labels']]
        return SDMField(box['values'], labels, meta.get('period'), meta.get('aggregation', 'mean'),
                        meta.get('normalized', False), meta.get('n_days', 0))


def save_maps(path, maps, mask, metadata=None):
    """ Named per-location maps (evaluation output) over one mask """

    meta = dict(metadata or {})
    meta.update({'kind': 'maps', 'geometry': mask.geometry.to_dict()})
    arrays = OrderedDict((name, np.asarray(values)) for name, values in maps.items())
    arrays['mask'] = mask.cells
    return write_container(path, arrays, meta)


def load_maps(path):
    """ :return: (OrderedDict of maps, LandMask, metadata) """

    box = read_container(path).expect('maps')
    maps = OrderedDict((name, array) for name, array in box.arrays.items() if name != 'mask')
    with _decoding(path):
        return maps, _mask_from(box), box.metadata


def save_report(path, report):
    metadata = {'kind': 'delta_report', 'table': report.to_text()}
    return write_container(path, OrderedDict(), metadata)


def load_report(path):
    box = read_container(path).expect('delta_report')
    with _decoding(path):
        return DeltaReport.from_text(box.metadata.get('table', ''))
