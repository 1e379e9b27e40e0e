import datetime
import unittest

from xai_downscale.errors import InputError
from xai_downscale.period_match import PeriodMatch


class TestPeriodMatch(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.august = datetime.date(2001, 8, 15)
        cls.january = datetime.date(2001, 1, 15)

    def test_annual(self):
        self.assertTrue(PeriodMatch.dict_call('annual', self.august))
        self.assertTrue(PeriodMatch.dict_call('any', self.january))

    def test_month_names(self):
        self.assertTrue(PeriodMatch.dict_call('august', self.august))
        self.assertTrue(PeriodMatch.dict_call('Aug', self.august))
        self.assertFalse(PeriodMatch.dict_call('august', self.january))

    def test_month_numbers(self):
        self.assertTrue(PeriodMatch.dict_call('month:8', self.august))
        self.assertFalse(PeriodMatch.dict_call('month:1', self.august))
        self.assertTrue(PeriodMatch.dict_call('months:6,7,8', self.august))
        self.assertTrue(PeriodMatch.dict_call('months:dec,jan,feb', self.january))
        self.assertFalse(PeriodMatch.dict_call('months:6,7', self.august))

    def test_unknown_filters(self):
        with self.assertRaises(InputError):
            PeriodMatch.dict_call('summer', self.august)
        with self.assertRaises(InputError):
            PeriodMatch.dict_call('month:13', self.august)

    def test_months_of(self):
        self.assertIsNone(PeriodMatch.months_of('annual'))
        self.assertEqual({8}, PeriodMatch.months_of('august'))
        self.assertEqual({12, 1, 2}, PeriodMatch.months_of('months:12,1,2'))


if __name__ == "__main__":
    unittest.main(failfast=True)
