"""SVD-factorized encoder (SVDCL) and the dense baseline (MLPCL).

Batches are row-major: ``h`` has shape ``(batch, n_in)``.  An SVD layer maps

    h -> (h @ d) * relu(v) @ s.T + bias

i.e. ``W = s @ diag(relu(v)) @ d.T`` applied to every row, with ``s`` of shape
``(n_out, r)``, ``d`` of shape ``(n_in, r)`` and ``v`` of length ``r``.  All
layers but the last are followed by SiLU.

Checkpoint container (little-endian)::

    6 bytes  b"SVDCLK", u8 format version (1)
    u32      length of the UTF-8 arch JSON, then the JSON
    per layer, in order: s, v, d[, bias] (SVD) or w[, bias] (dense), each in
    the linalg binary matrix layout (vectors stored as 1 x n)
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import (gaussian_matrix, make_rng, matrix_to_bytes,
                     project_semi_orthogonal, read_matrix_from)

CKPT_MAGIC = b"SVDCLK"
CKPT_VERSION = 1
KINDS = ("svd", "dense")


class ArchError(ValueError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    sg = sigmoid(x)
    return sg * (1.0 + x * (1.0 - sg))


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    input_dim: int
    widths: tuple[int, ...]
    ranks: tuple[int, ...] | None = None
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if self.kind not in KINDS:
            raise ArchError(f"kind must be one of {KINDS}, got '{self.kind}'")
        if self.input_dim < 1 or not self.widths or min(self.widths) < 1:
            raise ArchError("input_dim and widths must be positive")
        if self.kind == "svd":
            if self.ranks is None or len(self.ranks) != len(self.widths):
                raise ArchError("svd encoder needs one rank per layer")
            dims = (self.input_dim,) + self.widths
            for l, r in enumerate(self.ranks):
                if not 1 <= r <= min(dims[l], dims[l + 1]):
                    raise ArchError(
                        f"layer {l}: rank {r} outside [1, min({dims[l]}, {dims[l + 1]})]"
                    )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.widths

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ArchSpec":
        ranks = data.get("ranks")
        return cls(data["kind"], int(data["input_dim"]), tuple(data["widths"]),
                   None if ranks is None else tuple(ranks), bool(data.get("bias", True)))


def ising_arch(l: int, kind: str) -> ArchSpec:
    """Two-layer Ising encoder: widths 5, 2; ranks 3, 1; biases on."""
    return ArchSpec(kind, l * l, (5, 2), (3, 1) if kind == "svd" else None, True)


def classical_arch(input_dim: int, kind: str, latent_dim: int = 2) -> ArchSpec:
    """Three 128-wide layers (ranks 100, 50, 50) and a linear latent head.

    SVD encoders carry no biases; the dense baseline does.
    """
    widths = (128, 128, 128, latent_dim)
    if kind == "svd":
        return ArchSpec(kind, input_dim, widths, (min(100, input_dim), 50, 50, latent_dim), False)
    return ArchSpec(kind, input_dim, widths, None, True)


@dataclass
class SvdLayer:
    s: np.ndarray
    v: np.ndarray
    d: np.ndarray
    bias: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.v.size

    def weight(self) -> np.ndarray:
        return (self.s * relu(self.v)) @ self.d.T

    def params(self) -> dict[str, np.ndarray]:
        p = {"s": self.s, "v": self.v, "d": self.d}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


@dataclass
class DenseLayer:
    w: np.ndarray
    bias: np.ndarray | None = None

    def weight(self) -> np.ndarray:
        return self.w

    def params(self) -> dict[str, np.ndarray]:
        p = {"w": self.w}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


@dataclass
class Encoder:
    arch: ArchSpec
    layers: list
    # bumped by every parameter update; forward caches remember it
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        dims = self.arch.dims
        if len(self.layers) != len(dims) - 1:
            raise ArchError("layer count does not match the arch spec")
        for l, layer in enumerate(self.layers):
            n_out, n_in = layer.weight().shape
            if (n_in, n_out) != (dims[l], dims[l + 1]):
                raise ArchError(f"layer {l} maps {n_in}->{n_out}, expected "
                                f"{dims[l]}->{dims[l + 1]}")

    def copy(self) -> "Encoder":
        layers = []
        for layer in self.layers:
            kw = {k: v.copy() for k, v in layer.params().items()}
            layers.append(type(layer)(**kw))
        return Encoder(self.arch, layers, self.version)

    def dense_equivalent(self) -> "Encoder":
        """Same function with every SVD layer materialized as a dense one."""
        arch = ArchSpec("dense", self.arch.input_dim, self.arch.widths, None, self.arch.bias)
        layers = [DenseLayer(layer.weight().copy(),
                             None if layer.bias is None else layer.bias.copy())
                  for layer in self.layers]
        return Encoder(arch, layers)

    def param_count(self) -> int:
        return param_count(self)

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return forward(self, h)


def param_count(enc: Encoder) -> int:
    return int(sum(p.size for layer in enc.layers for p in layer.params().values()))


def arch_param_count(arch: ArchSpec) -> int:
    """Parameter count implied by an arch spec, without building the encoder."""
    dims = arch.dims
    total = 0
    for l in range(len(arch.widths)):
        n_in, n_out = dims[l], dims[l + 1]
        if arch.kind == "svd":
            r = arch.ranks[l]
            total += n_in * r + r + r * n_out
        else:
            total += n_in * n_out
        if arch.bias:
            total += n_out
    return total


def _layer_forward(layer, h):
    if isinstance(layer, SvdLayer):
        a = h @ layer.d
        b = a * relu(layer.v)
        c = b @ layer.s.T
    else:
        a = b = None
        c = h @ layer.w.T
    if layer.bias is not None:
        c = c + layer.bias
    return a, b, c


def forward(enc: Encoder, h: np.ndarray, cache: list | None = None) -> np.ndarray:
    """Encoder output for a ``(batch, n_in)`` input.

    If ``cache`` is a list it is filled with the per-layer intermediates that
    :func:`svdcl.trainer.backward` needs.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != enc.arch.input_dim:
        raise ArchError(f"input has shape {h.shape}, encoder expects (batch, {enc.arch.input_dim})")
    last = len(enc.layers) - 1
    for l, layer in enumerate(enc.layers):
        a, b, c = _layer_forward(layer, h)
        if cache is not None:
            cache.append((h, a, b, c))
        h = c if l == last else silu(c)
    return h


def init_encoder(arch: ArchSpec, seed: int) -> Encoder:
    """Fresh encoder; SVD factors start exactly semi-orthogonal, v in [0.5, 1.5]."""
    rng = make_rng(seed)
    dims = arch.dims
    layers = []
    for l in range(len(arch.widths)):
        n_in, n_out = dims[l], dims[l + 1]
        bias = np.zeros(n_out) if arch.bias else None
        if arch.kind == "svd":
            r = arch.ranks[l]
            s = project_semi_orthogonal(gaussian_matrix(n_out, r, seed, l, 0))
            d = project_semi_orthogonal(gaussian_matrix(n_in, r, seed, l, 1))
            v = rng.uniform(0.5, 1.5, size=r)
            layers.append(SvdLayer(s, v, d, bias))
        else:
            w = gaussian_matrix(n_out, n_in, seed, l, 0) / np.sqrt(n_in)
            layers.append(DenseLayer(w, bias))
    return Encoder(arch, layers)


def truncate_rank(layer: SvdLayer, r_keep: int) -> SvdLayer:
    """Zero all but the ``r_keep`` largest entries of ``relu(v)``."""
    if not 1 <= r_keep <= layer.rank:
        raise ValueError(f"r_keep must be in [1, {layer.rank}], got {r_keep}")
    v = relu(layer.v)
    order = np.argsort(-v, kind="stable")
    v[order[r_keep:]] = 0.0
    bias = None if layer.bias is None else layer.bias.copy()
    return SvdLayer(layer.s.copy(), v, layer.d.copy(), bias)


# -- checkpoints -------------------------------------------------------------


def encoder_to_bytes(enc: Encoder) -> bytes:
    arch = json.dumps(enc.arch.to_json(), sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(arch)) + arch)
    for layer in enc.layers:
        for p in layer.params().values():
            out.write(matrix_to_bytes(np.atleast_2d(p)))
    return out.getvalue()


def encoder_from_bytes(data: bytes) -> Encoder:
    stream = io.BytesIO(data)
    if stream.read(6) != CKPT_MAGIC:
        raise ValueError("not an encoder checkpoint")
    version, n = struct.unpack("<BI", stream.read(5))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    arch = ArchSpec.from_json(json.loads(stream.read(n).decode("utf-8")))
    layers = []
    for _ in arch.widths:
        if arch.kind == "svd":
            s = read_matrix_from(stream)
            v = read_matrix_from(stream)[0]
            d = read_matrix_from(stream)
            bias = read_matrix_from(stream)[0] if arch.bias else None
            layers.append(SvdLayer(s, v, d, bias))
        else:
            w = read_matrix_from(stream)
            bias = read_matrix_from(stream)[0] if arch.bias else None
            layers.append(DenseLayer(w, bias))
    if stream.read(1):
        raise ValueError("trailing bytes after the last layer")
    return Encoder(arch, layers)


def save_encoder(path, enc: Encoder) -> str:
    """Write a checkpoint; returns its SHA-256 hex digest."""
    data = encoder_to_bytes(enc)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_encoder(path) -> Encoder:
    with open(path, "rb") as fh:
        return encoder_from_bytes(fh.read())
