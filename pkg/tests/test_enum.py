import unittest

from . import context

from odsgdlab import enum


class EnumTestCase(unittest.TestCase):
    def test_enum_make(self):
        e = enum.make('a', {'b': "yay!", 'c': "foobar"})
        self.assertEqual(str(e.b), "b")
        self.assertEqual(str(e['c']), "c")
        self.assertEqual(e.b.value, "yay!")
        self.assertEqual(e.__members__['c'].value, "foobar")

    def test_modes(self):
        self.assertEqual(str(enum.mode.ODSGD), 'ODSGD')
        self.assertEqual(list(enum.mode.__members__), ['SSGD', 'ASGD', 'DCASGD_C', 'DCASGD_A', 'ODSGD'])
        self.assertIn(enum.mode.ODSGD, enum.synchronous_modes)
        self.assertNotIn(enum.mode.ASGD, enum.synchronous_modes)
        self.assertEqual(list(enum.local_updater.__members__), ['none', 'sgd', 'dcasgd_c', 'dcasgd_a'])
