"""Variance decoders, visual prior network and their JSON weight files.

All networks are dense MLPs. Decoders emit log-variances and the prior
network emits ``[mean (L), log-variance (L)]``; exponentiation happens here so
callers always receive strictly positive variances.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "vaemm"
FORMAT_VERSION = 1

_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda a: np.maximum(a, 0.0),
    "identity": lambda a: a,
}


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ValueError(f"layer weight {w.shape} and bias {b.shape} do not agree")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True, eq=False)
class MlpSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].weight.shape[1] != layers[i - 1].weight.shape[0]:
                raise ValueError(
                    f"dimension mismatch: layer {i - 1} outputs {layers[i - 1].weight.shape[0]}, "
                    f"layer {i} expects {layers[i].weight.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on ``x`` of shape (..., n_in)."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = _ACTIVATIONS[layer.activation](h @ layer.weight.T + layer.bias)
        return h

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "weight": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        try:
            return cls(tuple(
                Layer(np.array(l["weight"], dtype=np.float64),
                      np.array(l["bias"], dtype=np.float64), l["activation"])
                for l in d["layers"]
            ))
        except KeyError as e:
            raise ValueError(f"malformed layer description, missing {e}") from None


@dataclass(frozen=True, eq=False)
class ModelBundle:
    L: int
    M: int
    F: int
    decoder_a: MlpSpec
    decoder_av: MlpSpec
    prior_av: MlpSpec
    encoder_a: MlpSpec | None = None
    encoder_av: MlpSpec | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        expect = {
            "decoder_a": (self.decoder_a, self.L, self.F),
            "decoder_av": (self.decoder_av, self.L + self.M, self.F),
            "prior_av": (self.prior_av, self.M, 2 * self.L),
            "encoder_a": (self.encoder_a, self.F, 2 * self.L),
            "encoder_av": (self.encoder_av, self.F + self.M, 2 * self.L),
        }
        for name, (net, n_in, n_out) in expect.items():
            if net is None:
                continue
            if (net.n_in, net.n_out) != (n_in, n_out):
                raise ValueError(
                    f"{name} maps R^{net.n_in} -> R^{net.n_out}, expected R^{n_in} -> R^{n_out}"
                )
        if self.L >= self.F:
            warnings.warn(f"latent dim L={self.L} is not much smaller than F={self.F}")

    @property
    def has_encoders(self) -> bool:
        return self.encoder_a is not None and self.encoder_av is not None

    def to_dict(self) -> dict:
        out = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dims": {"L": self.L, "M": self.M, "F": self.F},
        }
        for name in ("decoder_a", "decoder_av", "prior_av", "encoder_a", "encoder_av"):
            net = getattr(self, name)
            out[name] = None if net is None else net.to_dict()
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != FORMAT_NAME:
            raise ValueError("not a vaemm model document")
        try:
            dims = d["dims"]
            nets = {
                name: None if d.get(name) is None else MlpSpec.from_dict(d[name])
                for name in ("decoder_a", "decoder_av", "prior_av", "encoder_a", "encoder_av")
            }
            return cls(int(dims["L"]), int(dims["M"]), int(dims["F"]), meta=d.get("meta", {}), **nets)
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed model document: {e}") from None


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict()))


def load_model(path: str | Path) -> ModelBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: cannot parse model file: {e}") from None
    return ModelBundle.from_dict(doc)


def _check_input(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ValueError(f"{what} must have length {n}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite {what}")
    return x


def _positive(logvar, what):
    with np.errstate(over="ignore"):
        var = np.exp(logvar)
    if not np.all(np.isfinite(var)) or np.any(var <= 0):
        raise FloatingPointError(f"{what} produced a non-finite or zero variance")
    return var


def decode_a(bundle: ModelBundle, z) -> np.ndarray:
    z = _check_input(z, bundle.L, "z")
    return _positive(bundle.decoder_a.forward(z), "decoder_a")


def decode_av(bundle: ModelBundle, z, v) -> np.ndarray:
    z = _check_input(z, bundle.L, "z")
    v = _check_input(v, bundle.M, "v")
    zv = np.concatenate(_align(z, v), axis=-1)
    return _positive(bundle.decoder_av.forward(zv), "decoder_av")


def _align(z, v):
    shape = np.broadcast_shapes(z.shape[:-1], v.shape[:-1])
    return (np.broadcast_to(z, shape + z.shape[-1:]), np.broadcast_to(v, shape + v.shape[-1:]))


def prior_av(bundle: ModelBundle, v) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the visual prior on z given embedding(s) ``v``."""
    v = _check_input(v, bundle.M, "v")
    out = bundle.prior_av.forward(v)
    mean, logvar = out[..., :bundle.L], out[..., bundle.L:]
    if not np.all(np.isfinite(mean)):
        raise FloatingPointError("prior_av produced a non-finite mean")
    return mean, _positive(logvar, "prior_av")


def encode_means(bundle: ModelBundle, power: np.ndarray, v: np.ndarray | None):
    """Encoder posterior means for the two branches.

    ``power`` is the |x|^2 spectrogram as (N, F); returns (z_a, z_av), each (N, L),
    or ``None`` for a missing encoder.
    """
    z_a = z_av = None
    if bundle.encoder_a is not None:
        z_a = bundle.encoder_a.forward(power)[..., :bundle.L]
    if bundle.encoder_av is not None and v is not None:
        z_av = bundle.encoder_av.forward(np.concatenate([power, v], axis=-1))[..., :bundle.L]
    return z_a, z_av


def align_embeddings(emb: np.ndarray, n_frames: int, max_slack: int = 2) -> np.ndarray:
    """Repeat or drop trailing rows so ``emb`` has exactly ``n_frames`` rows."""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("visual embeddings must be a non-empty N x M matrix")
    diff = n_frames - emb.shape[0]
    if abs(diff) > max_slack:
        raise ValueError(
            f"visual embeddings have {emb.shape[0]} rows, spectrogram has {n_frames} frames"
        )
    if diff > 0:
        return np.vstack([emb, np.repeat(emb[-1:], diff, axis=0)])
    return emb[:n_frames]


def read_embeddings(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as f:
            rows = [[float(c) for c in row] for row in csv.reader(f) if row]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError(f"{path}: ragged or empty embedding CSV")
        return np.array(rows)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated embedding file")
    n, m = struct.unpack("<II", raw[:8])
    data = np.frombuffer(raw[8:], dtype="<f8")
    if data.size != n * m:
        raise ValueError(f"{path}: header says {n}x{m}, found {data.size} values")
    return data.reshape(n, m).copy()


def write_embeddings(path: str | Path, emb: np.ndarray) -> None:
    path = Path(path)
    emb = np.asarray(emb, dtype=np.float64)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as f:
            csv.writer(f).writerows([[repr(float(x)) for x in row] for row in emb])
    else:
        path.write_bytes(struct.pack("<II", *emb.shape) + emb.astype("<f8").tobytes())
