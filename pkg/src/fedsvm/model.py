"""Embedding-based MLP classifier: ReLU encoder followed by a bias-free
logit layer whose rows are the class embeddings.

The forward map is ``logits(x) = G(x) @ W.T`` where ``G`` is the encoder
(dense layers with ReLU between them, linear output) and ``W`` is the
``K x d`` logit matrix. Class inference is the argmax of the inner
products, i.e. nearest class embedding under the dot-product metric.
Gradients are hand-derived; a finite-difference oracle checks them in
the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .numerics import Tensor, as_tensor, check_finite

CHECKPOINT_MAGIC = b"FSVM"
CHECKPOINT_VERSION = 1


@dataclass
class Model:
    """Encoder layers as (weight, bias) pairs plus the logit matrix.

    Layer weights have shape (out, in); activations are row vectors, so a
    layer computes ``relu(x @ W.T + b)`` except the last encoder layer,
    which stays linear. The same structure doubles as the container for
    model-shaped gradients.
    """

    encoder: list[tuple[Tensor, Tensor]]
    logit_matrix: Tensor

    @property
    def num_classes(self) -> int:
        return self.logit_matrix.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.logit_matrix.shape[1]

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[1]

    def copy(self) -> "Model":
        return Model([(w.copy(), b.copy()) for w, b in self.encoder],
                     self.logit_matrix.copy())


@dataclass
class Batch:
    inputs: Tensor   # B x P
    labels: np.ndarray  # length B, ints in [0, K)

    def __post_init__(self):
        self.inputs = as_tensor(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("batch inputs must be a nonempty B x P matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels length must equal batch size")


def init_model(input_dim: int, hidden_dims: Sequence[int], embedding_dim: int,
               num_classes: int, rng: np.random.Generator) -> Model:
    """Fan-balanced uniform init for weights, zero biases.

    Every draw comes from ``rng``, so a model is fully determined by the
    seed that built the generator.
    """
    if num_classes < 2 or embedding_dim < 1:
        raise ValueError("need num_classes >= 2 and embedding_dim >= 1")
    dims = [input_dim] + list(hidden_dims) + [embedding_dim]
    encoder = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        encoder.append((w, np.zeros(fan_out)))
    bound = np.sqrt(6.0 / (embedding_dim + num_classes))
    logit = rng.uniform(-bound, bound, size=(num_classes, embedding_dim))
    return Model(encoder, logit)


def structurally_compatible(a: Model, b: Model) -> bool:
    if len(a.encoder) != len(b.encoder):
        return False
    for (wa, ba), (wb, bb) in zip(a.encoder, b.encoder):
        if wa.shape != wb.shape or ba.shape != bb.shape:
            return False
    return a.logit_matrix.shape == b.logit_matrix.shape


def require_compatible(a: Model, b: Model, what: str = "models") -> None:
    if not structurally_compatible(a, b):
        raise ValueError(f"structurally incompatible {what}")


def encode(model: Model, inputs: Tensor) -> Tensor:
    """Map a B x P input matrix to B x d embeddings."""
    emb, _ = encode_with_cache(model, inputs)
    return emb


def logits(model: Model, inputs: Tensor) -> Tensor:
    return encode(model, inputs) @ model.logit_matrix.T


def predict(model: Model, inputs: Tensor) -> np.ndarray:
    """Per-sample argmax over class inner products; ties go to the lowest
    class index (np.argmax keeps the first maximum)."""
    return np.argmax(logits(model, inputs), axis=1)


def class_probabilities(model: Model, inputs: Tensor) -> Tensor:
    return _softmax(logits(model, inputs))


def _softmax(scores: Tensor) -> Tensor:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def encode_with_cache(model: Model, inputs: Tensor):
    """Forward pass through the encoder, keeping the per-layer inputs and
    pre-activations needed by ``encoder_backward``."""
    h = as_tensor(inputs)
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ValueError(
            f"encoder expects B x {model.input_dim} inputs, got {h.shape}")
    acts = [h]
    pre = []
    last = len(model.encoder) - 1
    for i, (w, b) in enumerate(model.encoder):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i != last else z
        acts.append(h)
    return h, (acts, pre)


def encoder_backward(model: Model, cache, d_emb: Tensor) -> Model:
    """Backpropagate a gradient w.r.t. the embeddings to all encoder
    parameters. The returned container has a zero logit-matrix gradient."""
    acts, pre = cache
    last = len(model.encoder) - 1
    dh = d_emb
    grads: list[tuple[Tensor, Tensor]] = [None] * len(model.encoder)
    for i in range(len(model.encoder) - 1, -1, -1):
        w, _ = model.encoder[i]
        dz = dh if i == last else dh * (pre[i] > 0.0)
        grads[i] = (dz.T @ acts[i], dz.sum(axis=0))
        if i > 0:
            dh = dz @ w
    return Model(grads, np.zeros_like(model.logit_matrix))


def loss_and_gradient(model: Model, batch: Batch) -> tuple[float, Model]:
    """Mean softmax cross-entropy and its gradients for every parameter.

    Returns the loss and a model-shaped gradient container. The softmax
    is max-shifted, so overflow cannot occur; a non-finite loss is
    reported as an error rather than propagated.
    """
    x = batch.inputs
    y = batch.labels
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError("labels out of range")
    bsz = x.shape[0]

    emb, cache = encode_with_cache(model, x)
    scores = emb @ model.logit_matrix.T
    probs = _softmax(scores)
    picked = probs[np.arange(bsz), y]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    if not np.isfinite(loss):
        raise ValueError("non-finite loss")

    dscores = probs.copy()
    dscores[np.arange(bsz), y] -= 1.0
    dscores /= bsz
    d_logit = dscores.T @ emb
    grads = encoder_backward(model, cache, dscores @ model.logit_matrix)
    return loss, Model(grads.encoder, d_logit)


def flatten_params(model: Model) -> Tensor:
    """Fixed flattening order: encoder layers in order, weight then bias,
    then the logit matrix, all row-major."""
    parts = []
    for w, b in model.encoder:
        parts.append(w.ravel())
        parts.append(b.ravel())
    parts.append(model.logit_matrix.ravel())
    return np.concatenate(parts)


def unflatten_params(template: Model, flat: Tensor) -> Model:
    flat = np.asarray(flat, dtype=np.float64)
    encoder = []
    offset = 0
    for w, b in template.encoder:
        encoder.append((flat[offset:offset + w.size].reshape(w.shape).copy(),
                        flat[offset + w.size:offset + w.size + b.size].copy()))
        offset += w.size + b.size
    k = template.logit_matrix.size
    if flat.size != offset + k:
        raise ValueError(
            f"flat vector has {flat.size} entries, template needs {offset + k}")
    logit = flat[offset:offset + k].reshape(template.logit_matrix.shape).copy()
    return Model(encoder, logit)


def num_params(model: Model) -> int:
    return sum(w.size + b.size for w, b in model.encoder) + model.logit_matrix.size


def encoder_param_count(model: Model) -> int:
    return sum(w.size + b.size for w, b in model.encoder)


def save_model(model: Model, path) -> None:
    """Checkpoint layout: magic "FSVM", u32 version, u32 layer count, per
    layer (u32 out, u32 in), u32 K, u32 d, u64 value count, then the
    flattened parameters. All integers and floats little-endian."""
    flat = flatten_params(model)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(model.encoder)))
        for w, _ in model.encoder:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        fh.write(struct.pack("<II", model.num_classes, model.embedding_dim))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (layers,) = struct.unpack("<I", _read_exact(fh, 4))
        shapes = [struct.unpack("<II", _read_exact(fh, 8)) for _ in range(layers)]
        k, d = struct.unpack("<II", _read_exact(fh, 8))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        flat = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64)
    encoder = [(np.zeros((out, inp)), np.zeros(out)) for out, inp in shapes]
    template = Model(encoder, np.zeros((k, d)))
    model = unflatten_params(template, flat)
    check_finite(flatten_params(model), "checkpoint parameters")
    return model
