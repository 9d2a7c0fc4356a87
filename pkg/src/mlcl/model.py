"""Mean-pooled bag-of-embeddings encoder with per-label representations.

For token ids ``x_1..x_n`` and label ``j`` the encoder computes::

    e_t  = mean(token_table[x_1..x_n])
    e_j  = tanh([e_t ; label_table[j]] @ interaction_weights + interaction_bias)
    p_j  = sigmoid(e_j . readout + readout_bias)

Checkpoint layout (all little-endian)::

    8 bytes   magic  b"MLCLCKPT"
    1 byte    format version (1)
    u32 V, u32 l, u32 d, i64 seed, f64 init scale
    u32 n     length of the UTF-8 JSON metadata blob that follows
    n bytes   metadata (vocabulary, label names, free-form run info)
    f64[]     token_table, label_table, interaction_weights,
              interaction_bias, readout, readout_bias (row-major, that order)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import MLCLError, ShapeError

MAGIC = b"MLCLCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IIIqd")

PARAM_NAMES = (
    "token_table",
    "label_table",
    "interaction_weights",
    "interaction_bias",
    "readout",
    "readout_bias",
)


@dataclass
class EncoderParams:
    token_table: Tensor
    label_table: Tensor
    interaction_weights: Tensor
    interaction_bias: Tensor
    readout: Tensor
    readout_bias: Tensor
    seed: int = 0
    scale: float = 0.1

    def __post_init__(self):
        v, d = self.token_table.shape
        l = self.label_table.shape[0]
        expected = {
            "label_table": (l, d),
            "interaction_weights": (2 * d, d),
            "interaction_bias": (d,),
            "readout": (d,),
            "readout_bias": (),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, expected {shape}")
        for name, t in zip(PARAM_NAMES, self.tensors()):
            t.requires_grad = True
            t.name = name

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]

    @property
    def n_labels(self) -> int:
        return self.label_table.shape[0]

    @property
    def dim(self) -> int:
        return self.token_table.shape[1]

    def tensors(self) -> list[Tensor]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def copy(self) -> "EncoderParams":
        return EncoderParams(*(Tensor(a.copy()) for a in self.arrays()), seed=self.seed, scale=self.scale)


@dataclass
class ModelOutput:
    """Encoder outputs for one sample (unbatched) or ``K`` samples (batched)."""

    sentence_vector: Tensor
    label_matrix: Tensor
    probabilities: Tensor


def init_params(seed: int, vocab_size: int, n_labels: int, dim: int, scale: float = 0.1) -> EncoderParams:
    """Uniform initialisation in ``[-scale, scale]`` from ``numpy.random.default_rng(seed)``."""
    for name, n in (("vocab_size", vocab_size), ("n_labels", n_labels), ("dim", dim)):
        if n < 1:
            raise ShapeError(f"{name} must be >= 1, got {n}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    shapes = [(vocab_size, dim), (n_labels, dim), (2 * dim, dim), (dim,), (dim,), ()]
    tensors = [Tensor(rng.uniform(-scale, scale, size=s)) for s in shapes]
    return EncoderParams(*tensors, seed=seed, scale=scale)


def pack_tokens(sequences: Sequence[Sequence[int]], vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Flatten token sequences into ``(ids, offsets)`` after validating them."""
    lengths = [len(s) for s in sequences]
    if any(n == 0 for n in lengths):
        raise ShapeError("empty token sequence")
    ids = np.fromiter((t for s in sequences for t in s), dtype=np.int64, count=sum(lengths))
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ShapeError(f"token id outside vocabulary of size {vocab_size}")
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return ids, offsets


def forward_batch(params: EncoderParams, sequences: Sequence[Sequence[int]]) -> ModelOutput:
    """Encode ``K`` token sequences; outputs are shaped ``(K, d)``, ``(K, l, d)``, ``(K, l)``."""
    ids, offsets = pack_tokens(sequences, params.vocab_size)
    d = params.dim
    w = params.interaction_weights
    sent = ad.bag_mean(params.token_table, ids, offsets)
    from_text = ad.matmul(sent, w[:d])
    from_label = ad.matmul(params.label_table, w[d:])
    pre = ad.add(ad.add(ad.expand_dims(from_text, 1), from_label), params.interaction_bias)
    label_repr = ad.tanh(pre)
    logits = ad.add(ad.matmul(label_repr, params.readout), params.readout_bias)
    return ModelOutput(sent, label_repr, ad.sigmoid(logits))


def forward(params: EncoderParams, tokens: Sequence[int]) -> ModelOutput:
    out = forward_batch(params, [tokens])
    return ModelOutput(out.sentence_vector[0], out.label_matrix[0], out.probabilities[0])


def save_checkpoint(path, params: EncoderParams, metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(_HEADER.pack(params.vocab_size, params.n_labels, params.dim, params.seed, params.scale))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise MLCLError(f"{path}: not a checkpoint (bad magic)")
    if raw[8] != FORMAT_VERSION:
        raise MLCLError(f"{path}: unsupported checkpoint version {raw[8]}")
    pos = 9
    v, l, d, seed, scale = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    (n_meta,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    metadata = json.loads(raw[pos : pos + n_meta].decode("utf-8"))
    pos += n_meta
    shapes = [(v, d), (l, d), (2 * d, d), (d,), (d,), ()]
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        tensors.append(Tensor(arr.astype(np.float64)))
    if pos != len(raw):
        raise MLCLError(f"{path}: {len(raw) - pos} trailing bytes")
    return EncoderParams(*tensors, seed=seed, scale=scale), metadata
