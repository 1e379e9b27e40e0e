import calendar
import datetime

from xai_downscale.errors import InputError


class PeriodMatch(object):
    """
    Provides a suite of month filters for daily time axes
    """

    @classmethod
    def dict_call(cls, name, day):
        """
        Allows filters to be called easily from variables, e.g.
        'annual', 'august', 'month:8' or 'months:6,7,8'
        """
        test, _, expression = str(name).strip().lower().partition(':')
        try:
            method = {
                'annual': cls.annual,
                'any': cls.annual,
                'month': cls.month,
                'months': cls.months,
            }[test]
        except KeyError:
            month = cls.month_number(test)
            return cls.month(day, month)
        return method(day, expression)

    @staticmethod
    def month_number(name):
        """Month number from an English month name or abbreviation"""
        names = [n.lower() for n in calendar.month_name]
        abbr = [n.lower() for n in calendar.month_abbr]
        name = str(name).strip().lower()
        if name in names[1:]:
            return names.index(name)
        if name in abbr[1:]:
            return abbr.index(name)
        raise InputError('unknown month filter {!r}'.format(name))

    @staticmethod
    def annual(day, expression=None):
        """Always returns True"""
        return True

    @staticmethod
    def month(day, expression):
        """Day falls in a single calendar month"""
        try:
            month = int(expression)
        except (TypeError, ValueError):
            month = PeriodMatch.month_number(expression)
        if not 1 <= month <= 12:
            raise InputError('month {} out of range'.format(month))
        return day.month == month

    @staticmethod
    def months(day, expression):
        """Day falls in any of a comma separated list of months"""
        return any(PeriodMatch.month(day, part) for part in str(expression).split(',') if part.strip())

    @classmethod
    def months_of(cls, name):
        """
        The set of calendar months a filter keeps, or None for all of them
        """
        keep = {m for m in range(1, 13) if cls.dict_call(name, datetime.date(2001, m, 1))}
        return None if len(keep) == 12 else keep
