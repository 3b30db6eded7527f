"""Dense Q-networks: hand-rolled forward/backward, SGD, binary checkpoints.

Everything is float64 and owned by the caller; there is no autodiff
framework and no global state.  The checkpoint layout is versioned so a
stale or corrupted file fails loudly instead of deserializing into the
wrong architecture.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from .core import ContractViolationError

CHECKPOINT_MAGIC = b"CRLQ1"
GRAD_CLIP_NORM = 10.0


class MlpQNetwork:
    """Rectifier MLP with an identity output head.

    weights[i] has shape (sizes[i], sizes[i+1]) so a batch of row
    vectors propagates as x @ W + b.  He-scaled Gaussian weights, zero
    biases.  The parameter count is fixed at construction.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ContractViolationError(f"need >= 2 positive layer sizes, got {sizes!r}")
        self.sizes = sizes
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            self.weights.append(np.asarray(w, dtype=np.float64))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- forward / backward --------------------------------------------------

    def forward_cached(self, x):
        """Returns (output, cache); cache is the list of layer activations.

        Input is promoted to a 2-d batch; cache[0] is the input batch and
        cache[-1] is the output, so backward() can be fed directly.
        """
        x = np.asarray(x, dtype=np.float64)
        batch = np.atleast_2d(x)
        if batch.shape[1] != self.sizes[0]:
            raise ContractViolationError(
                f"input dim {batch.shape[1]} != network input {self.sizes[0]}"
            )
        acts = [batch]
        h = batch
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, acts

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        out, _ = self.forward_cached(x)
        return out[0] if x.ndim == 1 else out

    def backward(self, cache, grad_out):
        """Exact gradients of sum(grad_out * output) w.r.t. every parameter.

        cache must come from forward_cached on this network with the
        current parameters.  Returns (grads_w, grads_b) matching the
        layer lists.  Rectifier subgradient at 0 is taken as 0.
        """
        acts = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != acts[-1].shape:
            raise ContractViolationError(
                f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}"
            )
        grads_w = [np.empty(0)] * self.n_layers
        grads_b = [np.empty(0)] * self.n_layers
        for i in reversed(range(self.n_layers)):
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                # acts[i] is post-rectifier for hidden layers: mask = active units
                g = (g @ self.weights[i].T) * (acts[i] > 0.0)
        return grads_w, grads_b

    # -- parameter plumbing ----------------------------------------------------

    def get_flat(self) -> np.ndarray:
        """All parameters as one vector: per layer, W row-major then b."""
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks.append(w.ravel())
            chunks.append(b)
        return np.concatenate(chunks)

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.n_params:
            raise ContractViolationError(
                f"parameter vector size {vec.size} != {self.n_params}"
            )
        if not np.all(np.isfinite(vec)):
            raise ContractViolationError("non-finite parameter vector")
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = vec[k : k + b.size].copy()
            k += b.size

    def clone(self) -> "MlpQNetwork":
        out = MlpQNetwork.__new__(MlpQNetwork)
        out.sizes = self.sizes
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out


def global_grad_norm(grads_w, grads_b) -> float:
    total = 0.0
    for g in list(grads_w) + list(grads_b):
        total += float(np.sum(np.square(g)))
    return math.sqrt(total)


def sgd_step(net: MlpQNetwork, grads_w, grads_b, lr: float,
             clip_norm: float | None = GRAD_CLIP_NORM) -> float:
    """In-place SGD update with global-norm clipping; returns pre-clip norm."""
    if lr <= 0.0:
        raise ContractViolationError(f"learning rate must be positive, got {lr}")
    norm = global_grad_norm(grads_w, grads_b)
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    for i in range(net.n_layers):
        net.weights[i] -= lr * scale * grads_w[i]
        net.biases[i] -= lr * scale * grads_b[i]
    return norm


# -- checkpoints ----------------------------------------------------------------
#
# layout: magic "CRLQ1" | uint32 n_sizes | n_sizes * uint32 layer sizes |
#         float64 params (per layer: W row-major, then b) | uint32 CRC32
# of every preceding byte.  All integers and floats little-endian.


def save_checkpoint(net: MlpQNetwork, path) -> None:
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<I", len(net.sizes))
    body += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    body += net.get_flat().astype("<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path) -> MlpQNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise ContractViolationError(f"checkpoint too short: {len(blob)} bytes")
    body, tail = blob[:-4], blob[-4:]
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ContractViolationError("checkpoint CRC mismatch")
    if body[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ContractViolationError(
            f"bad checkpoint magic {body[: len(CHECKPOINT_MAGIC)]!r}"
        )
    off = len(CHECKPOINT_MAGIC)
    (n_sizes,) = struct.unpack_from("<I", body, off)
    off += 4
    if n_sizes < 2 or off + 4 * n_sizes > len(body):
        raise ContractViolationError(f"checkpoint header declares {n_sizes} layer sizes")
    sizes = struct.unpack_from(f"<{n_sizes}I", body, off)
    off += 4 * n_sizes
    net = MlpQNetwork(sizes)
    expected = off + 8 * net.n_params
    if len(body) != expected:
        raise ContractViolationError(
            f"checkpoint payload {len(body)} bytes, expected {expected}"
        )
    params = np.frombuffer(body, dtype="<f8", offset=off, count=net.n_params)
    net.set_flat(params)
    return net
