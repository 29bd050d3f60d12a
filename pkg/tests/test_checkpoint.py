import io

import numpy as np

from turbinewatch import checkpoint as ckpt
from turbinewatch.exceptions import CompatibilityException, FormatException
from turbinewatch.models import ModelKind, build_model
from turbinewatch.record import FieldType, Integer, Record
from tests.fixtures import Fixtures


def sample(kind: ModelKind = ModelKind.TRANSFORMER) -> ckpt.Checkpoint:
    model = build_model(kind, 3, {"d_model": 4, "d_k": 4, "ff": 4, "latent": 2, "seq_len": 3})
    return ckpt.Checkpoint(
        kind=kind,
        architecture=model.describe(),
        params=model.initialize(np.random.default_rng(0)),
        columns=["a:raw", "b:raw", "c:raw"],
        metadata={"epochs_run": 2, "best_val_loss": 0.25, "seed": 7},
    )


class TestCheckpoint(Fixtures):
    def test_save_and_load(self):
        original = sample()
        path = self.out_dir + "/transformer.ckpt"
        with open(path, "wb") as f:
            ckpt.save(original, f)
        with open(path, "rb") as f:
            loaded = ckpt.load(f)

        assert loaded.kind == ModelKind.TRANSFORMER
        assert loaded.architecture == original.architecture
        assert loaded.columns == original.columns
        assert loaded.metadata == original.metadata
        assert loaded.normalizer_ref == "normalizer.json"
        assert list(loaded.params) == list(original.params)
        for name, tensor in original.params.items():
            assert loaded.params[name].shape == tensor.shape
            assert np.array_equal(loaded.params[name].data, tensor.data)

        x = np.random.default_rng(1).standard_normal((2, 3, 3))
        model, again = original.model(), loaded.model()
        assert np.array_equal(model.score_batch(model.params, x), again.score_batch(again.params, x))

    def test_layout(self):
        data = ckpt.to_bytes(sample())
        assert data.startswith(b"TWCKPT\x01")
        buff = io.BytesIO(data[len(ckpt.MAGIC) + 1 :])
        count = Integer.read(buff).value
        assert count == 1 + len(sample().params)

        size = Integer.read(buff).value
        header = Record.from_bytes(buff.read(size)).values
        assert header[0] == (FieldType.text, "transformer")

    def test_bad_magic(self):
        with self.assertRaises(FormatException):
            ckpt.from_bytes(b"NOTACKPT")

    def test_truncated(self):
        data = ckpt.to_bytes(sample())
        with self.assertRaises(FormatException):
            ckpt.from_bytes(data[:-10])

    def test_trailing_bytes(self):
        with self.assertRaises(FormatException):
            ckpt.from_bytes(ckpt.to_bytes(sample()) + b"\x00")

    def test_version(self):
        data = bytearray(ckpt.to_bytes(sample()))
        data[len(ckpt.MAGIC)] = 2
        with self.assertRaises(CompatibilityException):
            ckpt.from_bytes(bytes(data))

    def test_unknown_kind(self):
        data = ckpt.to_bytes(sample()).replace(b"transformer", b"transfusion")
        with self.assertRaises(CompatibilityException):
            ckpt.from_bytes(data)
