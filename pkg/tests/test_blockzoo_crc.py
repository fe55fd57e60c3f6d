########################################################################################
#
#    Copyright 2026 The blockzoo developers
#
#    This file is part of blockzoo.
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU Lesser General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU Lesser General Public License for more details.
#
#    You should have received a copy of the GNU Lesser General Public License
#    along with this program. If not, see <http://www.gnu.org/licenses/>.
#
########################################################################################

# 1. Standard library imports:
import unittest

# 2. Known third party imports:
# 3. Local imports in the relative form:
from blockzoo import CRC
from blockzoo.errors import ChecksumError

from .test_blockzoo_common import TestBlockzooCommonBase


class TestBlockzooCRC(TestBlockzooCommonBase):
    """Test CRC."""

    def setUp(self):
        """Set up."""
        super().setUp()
        self.crc = CRC(b"123456789")

    def test_crc_data_bytes(self):
        """Test CRC data bytes input."""
        with self.assertRaises(ValueError):
            CRC(None)
        with self.assertRaises(TypeError):
            CRC(123)
        self.assertEqual(CRC(bytearray(b"123456789")).value, self.crc.value)

    def test_crc_poly(self):
        """Test CRC polynomial input."""
        self.assertEqual(self.crc.poly, 0x8408)
        with self.assertRaises(ValueError):
            self.crc.poly = None
        with self.assertRaises(TypeError):
            self.crc.poly = "Test"
        with self.assertRaises(ValueError):
            self.crc.poly = 0x10000

    def test_crc_check_value(self):
        """Test CRC of the standard check string."""
        self.assertEqual(self.crc.get_crc_hex_string(), "6E90")
        self.assertEqual(self.crc.get_crc_bytes(), b"\x90\x6e")

    def test_crc_verify(self):
        """Test trailer verification."""
        self.crc.verify(self.crc.get_crc_bytes())
        with self.assertRaises(ChecksumError) as e:
            self.crc.verify(b"\x00\x00")
        self.assertIn("stored 0000, computed 6E90", str(e.exception))
        with self.assertRaises(ChecksumError):
            self.crc.verify(b"\x90")
        with self.assertRaises(ChecksumError):
            CRC(b"123456780").verify(self.crc.get_crc_bytes())


if __name__ == "__main__":
    unittest.main()
