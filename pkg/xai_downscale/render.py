"""
Grayscale heatmaps as binary PGM (P5) images, one pixel per gridbox.
"""

import logging

import numpy as np

from xai_downscale.errors import RenderError

log = logging.getLogger(__name__)

MAXVAL = 255
FLAT_GRAY = 128


def heatmap_pixels(values, geometry=None):
    """
    Min-max scale a 2-D field to 0..255 with north at the top and west on
    the left; a constant field maps to 128.

    :param values: (lat, lon) real array
    :param geometry: GridGeometry of values, used to orient the image
    :return: uint8 array
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or 0 in values.shape:
        raise RenderError('heatmaps need a non-empty 2-D field, got shape {}'.format(values.shape))
    if not np.all(np.isfinite(values)):
        raise RenderError('field contains non-finite values')
    if geometry is not None:
        if geometry.shape != values.shape:
            raise RenderError('field shape {} does not match grid {}'.format(values.shape, geometry.shape))
        rows = np.argsort(-geometry.lats, kind='stable')
        cols = np.argsort(geometry.lons, kind='stable')
        values = values[rows][:, cols]
    low, high = values.min(), values.max()
    if high == low:
        return np.full(values.shape, FLAT_GRAY, dtype=np.uint8)
    scaled = np.rint((values - low) / (high - low) * MAXVAL)
    return np.clip(scaled, 0, MAXVAL).astype(np.uint8)


def encode_pgm(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    header = 'P5\n{} {}\n{}\n'.format(width, height, MAXVAL).encode('ascii')
    return header + pixels.tobytes()


def render_heatmap(values, path, geometry=None, palette='grayscale'):
    """
    Write a 2-D field as a PGM image.

    :param values: (lat, lon) real array
    :param path: output file
    :param geometry: GridGeometry for orientation (north at top)
    :param palette: only 'grayscale'
    :return: path
    """
    if palette != 'grayscale':
        raise RenderError('unsupported palette {!r}'.format(palette))
    blob = encode_pgm(heatmap_pixels(values, geometry))
    with open(path, 'wb') as f:
        f.write(blob)
    log.debug('rendered %s', path)
    return path


def read_pgm(path):
    """ Pixels of a binary PGM written by render_heatmap """

    with open(path, 'rb') as f:
        blob = f.read()
    parts = blob.split(b'\n', 3)
    if len(parts) != 4 or parts[0] != b'P5':
        raise RenderError('{} is not a binary PGM'.format(path))
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)
