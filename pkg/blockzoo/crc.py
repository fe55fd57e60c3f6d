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
import operator
import struct
from typing import List, Union

# 2. Known third party imports:

# 3. Local imports in the relative form:
from .errors import ChecksumError

BytesLike = Union[bytes, bytearray, memoryview]


def _build_table(poly: int) -> List[int]:
    """Build the 256 entry lookup table of the reflected polynomial."""
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 0x0001 else crc >> 1
        table.append(crc)
    return table


class CRC:
    """
    CRC-16-CCITT checksum of a checkpoint payload.

    Checkpoints end with the two byte checksum of everything before it, so a
    truncated or edited file is detected before any parameter is read.

    CRC-16-CCITT polynomial representation: x^{16} + x^{12} + x^5 + 1

    :param data_bytes: Bytes-like object for which to calculate the CRC.
    :param poly: Reversed polynomial representation for CRC-16-CCITT calculation, \
    defaults to ``0x8408``
    """

    def __init__(self, data_bytes: BytesLike, poly: int = None):
        self.data_bytes = data_bytes
        if poly is None:
            poly = 0x8408
        self.poly = poly

    data_bytes = property(operator.attrgetter("_data_bytes"))

    @data_bytes.setter
    def data_bytes(self, d):
        if d is None:
            raise ValueError("Bytes data cannot be empty.")
        if not isinstance(d, (bytes, bytearray, memoryview)):
            raise TypeError(
                f"Bytes data must be a bytes-like object. {type(d)} was given."
            )
        self._data_bytes = bytes(d)

    poly = property(operator.attrgetter("_poly"))

    @poly.setter
    def poly(self, p):
        if p is None:
            raise ValueError("Polynomial cannot be empty.")
        if not isinstance(p, int) or isinstance(p, bool):
            raise TypeError(f"Polynomial must be a valid integer. {type(p)} was given.")
        if not 0 < p <= 0xFFFF:
            raise ValueError(f"Polynomial must fit in 16 bits. {p:#x} was given.")
        self._poly = p
        self._table = _build_table(p)

    @property
    def value(self) -> int:
        """
        CRC-16-CCITT of the data bytes.

        :returns: Checksum as an integer in ``0..0xFFFF``.
        """
        crc = 0xFFFF
        for b in self._data_bytes:
            crc = (crc >> 8) ^ self._table[(crc ^ b) & 0xFF]
        crc = ~crc & 0xFFFF
        return ((crc << 8) | (crc >> 8)) & 0xFFFF

    def get_crc_hex_string(self) -> str:
        """
        Get CRC-16-CCITT as four digit zero padding hexadecimal string.

        :returns: CRC-16-CCITT as four digit zero padding hexadecimal string
        """
        return f"{self.value:04X}"

    def get_crc_bytes(self) -> bytes:
        """
        Get CRC-16-CCITT as the two byte little-endian trailer of a checkpoint.

        :returns: Two bytes.
        """
        return struct.pack("<H", self.value)

    def verify(self, trailer: bytes) -> None:
        """
        Compare the checksum with a stored trailer.

        :param trailer: Two byte little-endian trailer read from a checkpoint.
        :raises ChecksumError: If the trailer does not match.
        """
        if len(trailer) != 2:
            raise ChecksumError(
                f"CRC trailer must be 2 bytes. {len(trailer)} were given."
            )
        stored = struct.unpack("<H", trailer)[0]
        if stored != self.value:
            computed = self.get_crc_hex_string()
            raise ChecksumError(
                f"CRC mismatch: stored {stored:04X}, computed {computed}."
            )
