from turbinewatch.exceptions import FormatException, UsageException
from turbinewatch.record import Blob, FieldType, Integer, Record, Text
from unittest import TestCase

import numpy as np


class TestRecord(TestCase):
    def test_success(self):
        payload = [
            (FieldType.integer, 3),
            (FieldType.integer, 2**40),
            (FieldType.text, "enc.w_x"),
            (FieldType.blob, np.array([1.5, -2.0, np.pi])),
        ]
        record = Record.from_bytes(Record(payload).to_bytes())
        assert record.values[:3] == payload[:3]
        assert record.values[3][0] == FieldType.blob
        assert np.array_equal(record.values[3][1], payload[3][1])

    def test_empty(self):
        with self.assertRaises(UsageException):
            Record([])

    def test_truncated(self):
        raw = Record([(FieldType.text, "power"), (FieldType.blob, np.ones(4))]).to_bytes()
        with self.assertRaises(FormatException):
            Record.from_bytes(raw[:-3])

    def test_unknown_serial_type(self):
        # header of one serial type 0, which is unused here
        with self.assertRaises(FormatException):
            Record.from_bytes(b"\x01\x00")


class TestInteger(TestCase):
    def test_varint(self):
        for value, size in [(99, 1), (201, 2), (2147483647, 5)]:
            d = Integer(value)
            assert d.value == value
            raw_bytes = d.to_bytes()
            assert Integer.from_bytes(raw_bytes).value == value
            assert len(d.to_bytes()) == size

    def test_varint_offset(self):
        """
        When decoding we don't know how many bytes a varint takes, so
        consecutive reads must leave the offset right after each one.
        """
        buf = b"\xff\xff\xff\xff\x07\x04\xc9\x01"
        buf_values = [2147483647, 4, 201]

        for value in buf_values:
            result = Integer.from_bytes(buf)
            assert result.value == value
            buf = buf[result.content_length() :]

    def test_padding(self):
        # 5 byte varints are stored in the 6 byte slot
        d = Integer(2147483647)
        assert d.serial_type() == 5
        padded = d.to_padded_bytes()
        assert len(padded) == 6
        assert Integer.from_bytes(padded).value == 2147483647

    def test_negative(self):
        with self.assertRaises(UsageException):
            Integer(-1)

    def test_truncated(self):
        with self.assertRaises(FormatException):
            Integer.from_bytes(b"\xff\xff")


class TestText(TestCase):
    def test_vartext(self):
        value = "gearbox bearing"
        s = Text(value)
        assert Text.from_bytes(s.to_bytes()).value == value
        assert s.serial_type() == 15 * 2 + 13


class TestBlob(TestCase):
    def test_little_endian(self):
        b = Blob(np.array([[1.0, 2.0]]))
        assert b.to_bytes() == np.array([1.0, 2.0], dtype="<f8").tobytes()
        assert b.serial_type() == 16 * 2 + 12

    def test_bad_length(self):
        with self.assertRaises(FormatException):
            Blob.from_bytes(b"\x00" * 7)
