"""
Place any reusable functions shared across modules here
"""

import datetime

import numpy as np

from xai_downscale.errors import InputError


def to_list(obj):
    if obj is None:
        return []
    if isinstance(obj, (list, tuple)):
        return list(obj)
    return [obj]


def to_date(value):
    """
    Coerce an ISO string or a date/datetime into a datetime.date

    :param value: type str or datetime.date
    :return: datetime.date
    """
    if isinstance(value, datetime.datetime):
        return value.date()
    if isinstance(value, datetime.date):
        return value
    try:
        return datetime.date.fromisoformat(str(value).strip())
    except ValueError:
        raise InputError('not an ISO date: {!r}'.format(value))


def parse_period(value):
    """
    Parse a period given as 'start..end', a (start, end) pair or None.

    Both ends are inclusive.

    :param value: type str, tuple or None
    :return: (datetime.date, datetime.date) or None
    """
    if value is None:
        return None
    if isinstance(value, str):
        parts = value.split('..')
        if len(parts) != 2:
            raise InputError('period must look like START..END: {!r}'.format(value))
        value = parts
    start, end = to_date(value[0]), to_date(value[1])
    if end < start:
        raise InputError('period ends before it starts: {}..{}'.format(start, end))
    return start, end


def daily_dates(start, count):
    start = to_date(start)
    return [start + datetime.timedelta(days=i) for i in range(int(count))]


def period_indices(times, period, months=None):
    """
    Indices of the dates inside period (inclusive) whose month is in months.

    :param times: list of datetime.date
    :param period: (start, end) or None for the whole axis
    :param months: iterable of month numbers or None for all months
    :return: numpy int array
    """
    period = parse_period(period)
    months = set(months) if months is not None else None
    keep = []
    for i, day in enumerate(times):
        if period is not None and not period[0] <= day <= period[1]:
            continue
        if months is not None and day.month not in months:
            continue
        keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def require_finite(array, what):
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise InputError('{} contains non-finite values'.format(what))
    return array
