"""
The three reconstruction based detectors.

    VaeModel            one feature row at a time; score = alpha * rec + beta * kl
    LstmAeModel         T consecutive rows; LSTM encoder -> latent -> LSTM decoder
    TransformerAeModel  T consecutive rows; attention + feed forward block on
                        each side of a per step latent bottleneck

All of them work on batches: rows are (B, F), sequences are (B, T, F).
Parameters live in a ParameterSet keyed by dotted names such as
`enc.w_x` or `dec.attn.q`.
"""
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple, Type
import math

import numpy as np

from turbinewatch.exceptions import ConfigurationException, StateException, UsageException
from turbinewatch.tensor import (
    ArrayLike,
    ParameterSet,
    Tensor,
    attention,
    glorot,
    lstm_cell,
    positional_encoding,
    reparam_sample,
    stack,
)

Params = Mapping[str, Tensor]
SCORE_CHUNK = 256


class ModelKind(Enum):
    VAE = "vae"
    LSTM = "lstm"
    TRANSFORMER = "transformer"


@dataclass(frozen=True)
class VaeArch:
    n_features: int
    hidden: int = 64
    latent: int = 8
    alpha: float = 1.0
    beta: float = 1.0

    def validate(self):
        if min(self.n_features, self.hidden, self.latent) < 1:
            raise ConfigurationException(f"VAE sizes must be >= 1: {self}")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigurationException("VAE score weights need alpha, beta >= 0 and alpha + beta > 0")


@dataclass(frozen=True)
class LstmArch:
    n_features: int
    hidden: int = 32
    latent: int = 16
    seq_len: int = 16

    def validate(self):
        if min(self.n_features, self.hidden, self.latent, self.seq_len) < 1:
            raise ConfigurationException(f"LSTM sizes must be >= 1: {self}")


@dataclass(frozen=True)
class TransformerArch:
    n_features: int
    d_model: int = 32
    d_k: int = 32
    ff: int = 64
    latent: int = 8
    seq_len: int = 16
    positional: bool = True

    def validate(self):
        if min(self.n_features, self.d_model, self.d_k, self.ff, self.latent, self.seq_len) < 1:
            raise ConfigurationException(f"transformer sizes must be >= 1: {self}")
        if self.d_model % 2 != 0:
            raise ConfigurationException(f"d_model must be even, got {self.d_model}")


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over the last axis."""
    return ((1.0 + logvar - mu**2 - logvar.exp()) * -0.5).sum(axis=-1)


def reconstruction_error(x: ArrayLike, x_hat: ArrayLike) -> Tensor:
    """Squared euclidean distance over the last axis."""
    return ((Tensor.ensure(x) - Tensor.ensure(x_hat)) ** 2).sum(axis=-1)


def sequence_mse(x: ArrayLike, x_hat: ArrayLike) -> Tensor:
    """(1/T) sum_t ||x_t - x_hat_t||^2 for (..., T, F) inputs."""
    return reconstruction_error(x, x_hat).mean(axis=-1)


def _dense_init(params: ParameterSet, g: np.random.Generator, prefix: str, fan_in: int, fan_out: int):
    params.add(f"{prefix}.w", glorot(g, fan_in, fan_out))
    params.add(f"{prefix}.b", np.zeros(fan_out))


def _dense(params: Params, prefix: str, x: Tensor) -> Tensor:
    return x @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


@dataclass
class Examples:
    """
    Training or scoring inputs drawn from a feature matrix. `starts` are row
    positions; every example covers rows [start, start + length).
    """

    rows: np.ndarray
    starts: np.ndarray
    length: int

    def __len__(self) -> int:
        return len(self.starts)

    def take(self, positions: np.ndarray) -> np.ndarray:
        starts = self.starts[positions]
        if self.length == 1:
            return self.rows[starts]
        return self.rows[starts[:, None] + np.arange(self.length)]


def sequence_starts(row_index: np.ndarray, length: int) -> np.ndarray:
    """Row positions that begin `length` rows with consecutive sample indices."""
    if len(row_index) < length:
        return np.zeros(0, dtype=np.int64)
    span = row_index[length - 1 :] - row_index[: len(row_index) - length + 1]
    return np.nonzero(span == length - 1)[0]


class Detector:
    kind: ModelKind
    arch_type: Type

    def __init__(self, arch, params: Optional[ParameterSet] = None):
        arch.validate()
        self.arch = arch
        self.params = params

    @property
    def sequence_length(self) -> int:
        return 1

    def describe(self) -> Dict[str, Any]:
        return asdict(self.arch)

    def require_params(self) -> ParameterSet:
        if self.params is None:
            raise StateException(f"{self.kind.value} model has no trained parameters")
        return self.params

    def initialize(self, g: np.random.Generator) -> ParameterSet:
        raise NotImplementedError

    def loss(self, params: Params, batch: np.ndarray, g: Optional[np.random.Generator] = None) -> Tensor:
        """Mean training loss of a batch. `g` supplies sampling noise when needed."""
        raise NotImplementedError

    def score_batch(self, params: Params, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def examples(self, rows: np.ndarray, row_index: np.ndarray) -> Examples:
        length = self.sequence_length
        if length == 1:
            starts = np.arange(len(rows))
        else:
            starts = sequence_starts(row_index, length)
        return Examples(rows, starts, length)

    def score_examples(self, examples: Examples) -> np.ndarray:
        params = self.require_params()
        scores = [
            self.score_batch(params, examples.take(np.arange(lo, min(lo + SCORE_CHUNK, len(examples)))))
            for lo in range(0, len(examples), SCORE_CHUNK)
        ]
        return np.concatenate(scores) if scores else np.zeros(0)


class VaeModel(Detector):
    kind = ModelKind.VAE
    arch_type = VaeArch

    def initialize(self, g: np.random.Generator) -> ParameterSet:
        a = self.arch
        params = ParameterSet()
        _dense_init(params, g, "enc.hidden", a.n_features, a.hidden)
        _dense_init(params, g, "enc.mu", a.hidden, a.latent)
        _dense_init(params, g, "enc.logvar", a.hidden, a.latent)
        _dense_init(params, g, "dec.hidden", a.latent, a.hidden)
        _dense_init(params, g, "dec.out", a.hidden, a.n_features)
        return params

    def encode(self, params: Params, x: Tensor) -> Tuple[Tensor, Tensor]:
        h = _dense(params, "enc.hidden", x).tanh()
        return _dense(params, "enc.mu", h), _dense(params, "enc.logvar", h)

    def decode(self, params: Params, z: Tensor) -> Tensor:
        return _dense(params, "dec.out", _dense(params, "dec.hidden", z).tanh())

    def loss(self, params, batch, g=None):
        if g is None:
            noise = np.zeros((batch.shape[0], self.arch.latent))
        else:
            noise = g.standard_normal((batch.shape[0], self.arch.latent))
        total, _, _ = vae_loss(batch, self, noise, params)
        return total

    def score_batch(self, params, batch, noise: Optional[ArrayLike] = None):
        rec, kl = _vae_terms(self, params, Tensor(batch), noise)
        a = self.arch
        return a.alpha * rec.data + a.beta * kl.data


def _vae_terms(model: VaeModel, params: Params, x: Tensor, noise: Optional[ArrayLike]) -> Tuple[Tensor, Tensor]:
    mu, logvar = model.encode(params, x)
    z = mu if noise is None else reparam_sample(mu, logvar, noise)
    return reconstruction_error(x, model.decode(params, z)), kl_divergence(mu, logvar)


def vae_loss(
    x: ArrayLike, model: VaeModel, noise: ArrayLike, params: Optional[Params] = None
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    (total, rec, kl) where rec = ||x - x_hat||^2 with x_hat decoded from a
    reparameterized sample, kl the posterior's divergence from N(0, I) and
    total = rec + kl. Batches give batch means.
    """
    params = params if params is not None else model.require_params()
    rec, kl = _vae_terms(model, params, Tensor.ensure(x), noise)
    rec, kl = rec.mean(), kl.mean()
    return rec + kl, rec, kl


def vae_score(x: ArrayLike, model: VaeModel, noise: Optional[ArrayLike] = None) -> np.ndarray:
    """
    alpha * rec + beta * kl per row. Without `noise` the posterior mean is
    decoded; with it, the reparameterized sample mu + sigma * noise.
    """
    params = model.require_params()
    x = np.asarray(Tensor.ensure(x).data)
    if noise is not None:
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    scores = model.score_batch(params, np.atleast_2d(x), noise)
    return scores if x.ndim > 1 else scores[0]


class LstmAeModel(Detector):
    kind = ModelKind.LSTM
    arch_type = LstmArch

    @property
    def sequence_length(self) -> int:
        return self.arch.seq_len

    def initialize(self, g: np.random.Generator) -> ParameterSet:
        a = self.arch
        params = ParameterSet()
        for side in ("enc", "dec"):
            bias = np.zeros(4 * a.hidden)
            bias[a.hidden : 2 * a.hidden] = 1.0
            params.add(f"{side}.w_x", glorot(g, a.n_features, 4 * a.hidden))
            params.add(f"{side}.w_h", glorot(g, a.hidden, 4 * a.hidden))
            params.add(f"{side}.b", bias)
        _dense_init(params, g, "latent", a.hidden, a.latent)
        _dense_init(params, g, "dec.init", a.latent, a.hidden)
        _dense_init(params, g, "dec.out", a.hidden, a.n_features)
        params.add("dec.start", np.zeros((1, a.n_features)))
        return params

    def _cell(self, params: Params, side: str, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        return lstm_cell(x, h, c, params[f"{side}.w_x"], params[f"{side}.w_h"], params[f"{side}.b"])

    def reconstruct(self, params: Params, x: Tensor) -> Tensor:
        """
        Encodes (B, T, F) into z = FC(h_T). The decoder starts from
        h = tanh(FC(z)), c = 0 and a learned start token, then feeds back
        its own previous output.
        """
        batch, steps, _ = x.shape
        h = Tensor(np.zeros((batch, self.arch.hidden)))
        c = Tensor(np.zeros((batch, self.arch.hidden)))
        for t in range(steps):
            h, c = self._cell(params, "enc", x[:, t, :], h, c)

        z = _dense(params, "latent", h)
        h = _dense(params, "dec.init", z).tanh()
        c = Tensor(np.zeros((batch, self.arch.hidden)))

        step_input = params["dec.start"]
        outputs = []
        for _ in range(steps):
            h, c = self._cell(params, "dec", step_input, h, c)
            step_input = _dense(params, "dec.out", h)
            outputs.append(step_input)

        return stack(outputs, axis=1)

    def loss(self, params, batch, g=None):
        x = Tensor(batch)
        return sequence_mse(x, self.reconstruct(params, x)).mean()

    def score_batch(self, params, batch):
        x = Tensor(batch)
        return sequence_mse(x, self.reconstruct(params, x)).data


class TransformerAeModel(Detector):
    kind = ModelKind.TRANSFORMER
    arch_type = TransformerArch

    @property
    def sequence_length(self) -> int:
        return self.arch.seq_len

    def initialize(self, g: np.random.Generator) -> ParameterSet:
        a = self.arch
        params = ParameterSet()
        _dense_init(params, g, "in", a.n_features, a.d_model)
        self._block_init(params, g, "enc")
        _dense_init(params, g, "latent", a.d_model, a.latent)
        _dense_init(params, g, "up", a.latent, a.d_model)
        self._block_init(params, g, "dec")
        _dense_init(params, g, "out", a.d_model, a.n_features)
        return params

    def _block_init(self, params: ParameterSet, g: np.random.Generator, side: str):
        a = self.arch
        for name in ("q", "k", "v"):
            params.add(f"{side}.attn.{name}", glorot(g, a.d_model, a.d_k))
        params.add(f"{side}.attn.o", glorot(g, a.d_k, a.d_model))
        _dense_init(params, g, f"{side}.ff1", a.d_model, a.ff)
        _dense_init(params, g, f"{side}.ff2", a.ff, a.d_model)

    def _block(self, params: Params, side: str, h: Tensor) -> Tensor:
        q = h @ params[f"{side}.attn.q"]
        k = h @ params[f"{side}.attn.k"]
        v = h @ params[f"{side}.attn.v"]
        h = h + attention(q, k, v) @ params[f"{side}.attn.o"]
        return h + _dense(params, f"{side}.ff2", _dense(params, f"{side}.ff1", h).relu())

    def reconstruct(self, params: Params, x: Tensor) -> Tensor:
        steps = x.shape[-2]
        pe = positional_encoding(steps, self.arch.d_model) if self.arch.positional else None

        h = _dense(params, "in", x)
        if pe is not None:
            h = h + pe
        h = self._block(params, "enc", h)
        z = _dense(params, "latent", h).tanh()

        u = _dense(params, "up", z)
        if pe is not None:
            u = u + pe
        u = self._block(params, "dec", u)
        return _dense(params, "out", u)

    def loss(self, params, batch, g=None):
        x = Tensor(batch)
        return sequence_mse(x, self.reconstruct(params, x)).mean()

    def score_batch(self, params, batch):
        x = Tensor(batch)
        return sequence_mse(x, self.reconstruct(params, x)).data


def _sequence_score(x: ArrayLike, model: Detector) -> np.ndarray:
    params = model.require_params()
    x = np.asarray(Tensor.ensure(x).data)
    if x.ndim not in (2, 3) or x.shape[-2] != model.sequence_length:
        raise UsageException(
            f"expected sequences of {model.sequence_length} rows, got shape {x.shape}"
        )
    scores = model.score_batch(params, x.reshape((-1,) + x.shape[-2:]))
    return scores if x.ndim == 3 else scores[0]


def lstm_ae_score(x: ArrayLike, model: LstmAeModel) -> np.ndarray:
    return _sequence_score(x, model)


def transformer_ae_score(x: ArrayLike, model: TransformerAeModel) -> np.ndarray:
    return _sequence_score(x, model)


MODELS: Dict[ModelKind, Type[Detector]] = {
    ModelKind.VAE: VaeModel,
    ModelKind.LSTM: LstmAeModel,
    ModelKind.TRANSFORMER: TransformerAeModel,
}


def build_model(
    kind: ModelKind,
    n_features: int,
    overrides: Optional[Mapping[str, Any]] = None,
    params: Optional[ParameterSet] = None,
) -> Detector:
    cls = MODELS[kind]
    try:
        arch = cls.arch_type(n_features=n_features, **dict(overrides or {}))
    except TypeError as e:
        raise ConfigurationException(f"invalid {kind.value} architecture: {e}")
    return cls(arch, params)


def model_from_descriptor(kind: ModelKind, descriptor: Mapping[str, Any], params: ParameterSet) -> Detector:
    descriptor = dict(descriptor)
    return build_model(kind, descriptor.pop("n_features"), descriptor, params)


def parameter_count(model: Detector) -> int:
    return int(sum(math.prod(t.shape) for t in model.require_params().values()))
