"""
Checkpoint files: a magic string, a format version and a sequence of length
prefixed records (see record.py). docs/checkpoint.md has the full layout.
"""
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, List
import io
import json

import numpy as np

from turbinewatch.exceptions import CompatibilityException, FormatException
from turbinewatch.models import Detector, ModelKind, model_from_descriptor
from turbinewatch.record import FieldType, Integer, Record
from turbinewatch.tensor import ParameterSet

MAGIC = b"TWCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    kind: ModelKind
    architecture: Dict[str, Any]
    params: ParameterSet
    columns: List[str]
    normalizer_ref: str = "normalizer.json"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def model(self) -> Detector:
        return model_from_descriptor(self.kind, self.architecture, self.params)


def _json(value: Any) -> str:
    return json.dumps(value, sort_keys=True)


def to_bytes(checkpoint: Checkpoint) -> bytes:
    records = [
        Record(
            [
                (FieldType.text, checkpoint.kind.value),
                (FieldType.text, _json(checkpoint.architecture)),
                (FieldType.text, checkpoint.normalizer_ref),
                (FieldType.text, _json(checkpoint.columns)),
                (FieldType.text, _json(checkpoint.metadata)),
            ]
        )
    ]
    for name, tensor in checkpoint.params.items():
        records.append(
            Record(
                [
                    (FieldType.text, name),
                    (FieldType.text, _json(list(tensor.shape))),
                    (FieldType.blob, tensor.data),
                ]
            )
        )

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(Integer(VERSION).to_bytes())
    out.write(Integer(len(records)).to_bytes())
    for record in records:
        raw = record.to_bytes()
        out.write(Integer(len(raw)).to_bytes())
        out.write(raw)
    return out.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    buff = io.BytesIO(data)
    if buff.read(len(MAGIC)) != MAGIC:
        raise FormatException("not a checkpoint file")

    version = Integer.read(buff).value
    if version != VERSION:
        raise CompatibilityException(f"checkpoint version {version}, expected {VERSION}")

    count = Integer.read(buff).value
    records = []
    for _ in range(count):
        size = Integer.read(buff).value
        raw = buff.read(size)
        if len(raw) != size:
            raise FormatException("truncated checkpoint")
        records.append([value for _, value in Record.from_bytes(raw).values])

    if not records:
        raise FormatException("checkpoint has no header record")

    if buff.read(1):
        raise FormatException("trailing bytes after the last checkpoint record")

    kind, architecture, normalizer_ref, columns, metadata = records[0]
    params = ParameterSet()
    for name, shape, values in records[1:]:
        params.add(name, np.asarray(values).reshape(json.loads(shape)))

    try:
        model_kind = ModelKind(kind)
    except ValueError:
        raise CompatibilityException(f"unknown model kind {kind!r}")

    return Checkpoint(
        kind=model_kind,
        architecture=json.loads(architecture),
        params=params,
        columns=json.loads(columns),
        normalizer_ref=normalizer_ref,
        metadata=json.loads(metadata),
    )


def save(checkpoint: Checkpoint, sink: BinaryIO):
    sink.write(to_bytes(checkpoint))


def load(source: BinaryIO) -> Checkpoint:
    return from_bytes(source.read())
