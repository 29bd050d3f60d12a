"""
A small self describing record codec used by checkpoint files.

A record is a header followed by a body:

    varint header_size | varint serial_type ... | value bytes ...

where header_size counts the serial type varints only. Serial types follow
SQLite's scheme:

    1..6            unsigned varint whose encoded length is 1, 2, 3, 4, 6 or 8 bytes
    n*2 + 12 (even) blob of n bytes, here a little-endian float64 array
    n*2 + 13 (odd)  UTF-8 text of n bytes
"""
from enum import Enum
from typing import BinaryIO, List, Literal, Tuple, cast
import io

import numpy as np

from turbinewatch.exceptions import FormatException, UsageException

IntSizes = Literal[1, 2, 3, 4, 6, 8]
IntSerialType = Literal[1, 2, 3, 4, 5, 6]


class FieldType(Enum):
    integer = "integer"
    text = "text"
    blob = "blob"


class Integer:
    """
    Unsigned variable length integer, 7 bits per byte with the high bit set
    on every byte but the last.
    """

    serial_type_map = dict([(1, 1), (2, 2), (3, 3), (4, 4), (6, 5), (8, 6)])
    content_length_map = dict([(1, 1), (2, 2), (3, 3), (4, 4), (5, 6), (6, 8)])

    def __init__(self, value) -> None:
        self.value = int(value)
        if self.value < 0:
            raise UsageException(f"varints are unsigned, got {self.value}")

    def content_length(self) -> IntSizes:
        return cast(IntSizes, len(self.to_bytes()))

    def serial_type(self) -> int:
        length = self.content_length()
        # the size table has gaps, round up to the next slot
        for size in (1, 2, 3, 4, 6, 8):
            if length <= size:
                return self.serial_type_map[size]
        raise UsageException(f"integer {self.value} does not fit in 8 varint bytes")

    @staticmethod
    def content_length_from_serial_type(serial_type: IntSerialType) -> IntSizes:
        return cast(IntSizes, Integer.content_length_map[serial_type])

    def to_bytes(self) -> bytes:
        number = self.value
        buf = b""
        while True:
            towrite = number & 0x7F
            number >>= 7
            if number:
                buf += bytes((towrite | 0x80,))
            else:
                buf += bytes((towrite,))
                break
        return buf

    def to_padded_bytes(self) -> bytes:
        """Varint padded with continuation bytes to its serial type's length."""
        raw = self.to_bytes()
        size = Integer.content_length_from_serial_type(cast(IntSerialType, self.serial_type()))
        if size == len(raw):
            return raw
        padding = size - len(raw)
        return bytes(b | 0x80 for b in raw) + b"\x80" * (padding - 1) + b"\x00"

    @staticmethod
    def read(buff: BinaryIO) -> "Integer":
        shift = 0
        result = 0
        while True:
            byte = buff.read(1)
            if not byte:
                raise FormatException("truncated varint")
            b = byte[0]
            result |= (b & 0x7F) << shift
            shift += 7
            if not (b & 0x80):
                break

        return Integer(result)

    @staticmethod
    def from_bytes(value: bytes) -> "Integer":
        return Integer.read(io.BytesIO(value))


class Text:
    def __init__(self, value: str) -> None:
        self.value = value

    def serial_type(self) -> int:
        return len(self.to_bytes()) * 2 + 13

    def to_bytes(self) -> bytes:
        return self.value.encode("utf-8")

    @staticmethod
    def from_bytes(value: bytes) -> "Text":
        return Text(value.decode("utf-8"))


class Blob:
    """A flat float64 array stored little-endian."""

    def __init__(self, value: np.ndarray) -> None:
        self.value = np.asarray(value, dtype=np.float64).ravel()

    def serial_type(self) -> int:
        return len(self.to_bytes()) * 2 + 12

    def to_bytes(self) -> bytes:
        return self.value.astype("<f8").tobytes()

    @staticmethod
    def from_bytes(value: bytes) -> "Blob":
        if len(value) % 8 != 0:
            raise FormatException(f"blob of {len(value)} bytes is not a float64 array")
        return Blob(np.frombuffer(value, dtype="<f8").astype(np.float64))


Field = Tuple[FieldType, object]


def _encode(field: Field) -> Tuple[int, bytes]:
    kind, value = field
    if kind == FieldType.integer:
        integer = Integer(value)
        return integer.serial_type(), integer.to_padded_bytes()
    if kind == FieldType.text:
        text = Text(cast(str, value))
        return text.serial_type(), text.to_bytes()
    blob = Blob(cast(np.ndarray, value))
    return blob.serial_type(), blob.to_bytes()


def _read_exact(buff: BinaryIO, size: int) -> bytes:
    content = buff.read(size)
    if len(content) != size:
        raise FormatException(f"truncated record, wanted {size} bytes, got {len(content)}")
    return content


class Record:
    def __init__(self, values: List[Field]):
        if len(values) == 0:
            raise UsageException("Empty record")
        self.values = values

    def to_bytes(self) -> bytes:
        header_data = b""
        body_data = b""

        for field in self.values:
            serial_type, content = _encode(field)
            header_data += Integer(serial_type).to_bytes()
            body_data += content

        return Integer(len(header_data)).to_bytes() + header_data + body_data

    @staticmethod
    def from_bytes(data: bytes) -> "Record":
        buff = io.BytesIO(data)
        header_size = Integer.read(buff)
        header_end = buff.tell() + header_size.value

        serial_types = []
        while buff.tell() < header_end:
            serial_types.append(Integer.read(buff).value)

        if buff.tell() != header_end:
            raise FormatException("record header overruns its declared size")

        values: List[Field] = []
        for serial_type in serial_types:
            if 0 < serial_type < 7:
                content = _read_exact(buff, Integer.content_length_from_serial_type(serial_type))
                values.append((FieldType.integer, Integer.from_bytes(content).value))

            elif serial_type >= 13 and serial_type % 2 != 0:
                content = _read_exact(buff, (serial_type - 13) // 2)
                values.append((FieldType.text, Text.from_bytes(content).value))

            elif serial_type >= 12 and serial_type % 2 == 0:
                content = _read_exact(buff, (serial_type - 12) // 2)
                values.append((FieldType.blob, Blob.from_bytes(content).value))

            else:
                raise FormatException(f"unknown serial type {serial_type}")

        return Record(values)
