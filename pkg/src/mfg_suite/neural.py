"""Minimal feedforward network with hand-derived gradients, an adaptive-moment
optimizer, a FIFO replay buffer and a reservoir buffer.

This is the whole substrate the deep solvers need: two loss gradients
(squared error on a chosen action's value, and negative log-likelihood of a
chosen action under the softmax of the logits), nothing more. Parameters are
float64 throughout; save/load round-trips are bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import LOG_FLOOR, NonFiniteGradient, ShapeMismatch


@dataclass
class Mlp:
    """Fully connected net; rectifier between hidden layers, linear output."""

    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]  # per layer, shape (out, in)
    biases: List[np.ndarray]  # per layer, shape (out,)

    @staticmethod
    def create(layer_sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return Mlp(sizes, weights, biases)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


def forward(net: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Network output for a single input (1-d) or a batch (2-d, one row each)."""
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(f"input width {x.shape[1]}, net expects {net.layer_sizes[0]}")
    h = x
    for i in range(net.num_layers):
        z = h @ net.weights[i].T + net.biases[i]
        h = np.maximum(z, 0.0) if i < net.num_layers - 1 else z
    return h[0] if single else h


def _forward_cached(net: Mlp, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    hs = [x]
    zs = []
    h = x
    for i in range(net.num_layers):
        z = h @ net.weights[i].T + net.biases[i]
        zs.append(z)
        h = np.maximum(z, 0.0) if i < net.num_layers - 1 else z
        hs.append(h)
    return hs, zs


def _backprop(net: Mlp, hs, zs, d_out: np.ndarray):
    grads_w = [None] * net.num_layers
    grads_b = [None] * net.num_layers
    dz = d_out
    for i in range(net.num_layers - 1, -1, -1):
        grads_w[i] = dz.T @ hs[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ net.weights[i]) * (zs[i - 1] > 0.0)
    return list(zip(grads_w, grads_b))


def grad_squared_loss(
    net: Mlp, inputs: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> Tuple[list, float]:
    """Gradient of mean_i (Q(input_i)[action_i] - target_i)^2.

    Only the chosen action's output row carries error per sample.
    Returns (per-layer (dW, db) pairs, loss value).
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    acts = np.asarray(actions, dtype=np.int64).reshape(-1)
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1)
    if not (len(x) == len(acts) == len(tgt)) or len(x) == 0:
        raise ShapeMismatch("batch arrays must be nonempty and the same length")
    hs, zs = _forward_cached(net, x)
    out = hs[-1]
    b = len(x)
    idx = np.arange(b)
    err = out[idx, acts] - tgt
    loss = float(np.mean(err**2))
    d_out = np.zeros_like(out)
    d_out[idx, acts] = 2.0 * err / b
    return _backprop(net, hs, zs, d_out), loss


def grad_cross_entropy(net: Mlp, inputs: np.ndarray, actions: np.ndarray) -> Tuple[list, float]:
    """Gradient of mean_i -log softmax(logits(input_i))[action_i]."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    acts = np.asarray(actions, dtype=np.int64).reshape(-1)
    if len(x) != len(acts) or len(x) == 0:
        raise ShapeMismatch("batch arrays must be nonempty and the same length")
    hs, zs = _forward_cached(net, x)
    logits = hs[-1]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    b = len(x)
    idx = np.arange(b)
    loss = float(np.mean(-np.log(np.maximum(p[idx, acts], LOG_FLOOR))))
    d_out = p.copy()
    d_out[idx, acts] -= 1.0
    d_out /= b
    return _backprop(net, hs, zs, d_out), loss


@dataclass
class OptimizerState:
    """Adaptive-moment accumulator per parameter array."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[list] = None  # mirrors the gradient structure
    v: Optional[list] = None

    @staticmethod
    def create(net: Mlp, learning_rate: float, **kw) -> "OptimizerState":
        state = OptimizerState(learning_rate=learning_rate, **kw)
        state.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
        state.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
        return state


def optimizer_step(net: Mlp, state: OptimizerState, grads: list) -> None:
    """One in-place adaptive-moment update of the network parameters."""
    for dw, db in grads:
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (dw, db) in enumerate(grads):
        for j, (param, grad) in enumerate(((net.weights[i], dw), (net.biases[i], db))):
            m, v = state.m[i][j], state.v[i][j]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad**2
            param -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Buffers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    """One sampled step: (n, x) --a--> reward, (n+1, x_next); terminal at n_t."""

    n: int
    x: int
    a: int
    r: float
    x_next: int
    terminal: bool

    def __post_init__(self):
        if self.n < 0 or min(self.x, self.a, self.x_next) < 0:
            raise ValueError("transition indices must be nonnegative")


class ReplayBuffer:
    """Bounded FIFO of transitions, stored column-wise for fast sampling."""

    FIELDS = ("n", "x", "a", "r", "x_next", "terminal")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.cols = {
            "n": np.empty(capacity, dtype=np.int64),
            "x": np.empty(capacity, dtype=np.int64),
            "a": np.empty(capacity, dtype=np.int64),
            "r": np.empty(capacity, dtype=np.float64),
            "x_next": np.empty(capacity, dtype=np.int64),
            "terminal": np.empty(capacity, dtype=bool),
        }
        self.size = 0
        self._head = 0  # next slot to overwrite once full

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        self.push_many(
            np.array([t.n]), np.array([t.x]), np.array([t.a]),
            np.array([t.r]), np.array([t.x_next]), np.array([t.terminal]),
        )

    def push_many(self, n, x, a, r, x_next, terminal) -> None:
        vals = dict(n=n, x=x, a=a, r=r, x_next=x_next, terminal=terminal)
        count = len(vals["n"])
        for start in range(0, count, self.capacity):
            chunk = {k: np.asarray(v)[start : start + self.capacity] for k, v in vals.items()}
            c = len(chunk["n"])
            end = self._head + c
            for k, col in self.cols.items():
                if end <= self.capacity:
                    col[self._head : end] = chunk[k]
                else:
                    split = self.capacity - self._head
                    col[self._head :] = chunk[k][:split]
                    col[: end - self.capacity] = chunk[k][split:]
            self._head = end % self.capacity
            self.size = min(self.size + c, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {k: col[idx] for k, col in self.cols.items()}


class ReservoirBuffer:
    """Fixed-capacity uniform sample of everything offered so far."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list = []
        self.offered = 0

    def __len__(self) -> int:
        return len(self.items)


def reservoir_offer(buffer: ReservoirBuffer, item, rng: np.random.Generator) -> ReservoirBuffer:
    """Classic reservoir sampling: once full, the new item replaces a uniform
    slot with probability capacity/offered-count, so the buffer stays a
    uniform sample of the stream at every point.
    """
    buffer.offered += 1
    if len(buffer.items) < buffer.capacity:
        buffer.items.append(item)
    else:
        j = int(rng.integers(0, buffer.offered))
        if j < buffer.capacity:
            buffer.items[j] = item
    return buffer


# ---------------------------------------------------------------------------
# Parameter serialization (bit-exact round trip)
# ---------------------------------------------------------------------------

_MAGIC = b"MFGNET1"


def save_params(net: Mlp, path) -> None:
    """Write 'MFGNET1\\n<layer sizes>\\n' then raw little-endian float64 blobs,
    W then b per layer in order. Shapes are implied by the layer sizes."""
    with open(path, "wb") as f:
        f.write(_MAGIC + b"\n")
        f.write(" ".join(str(s) for s in net.layer_sizes).encode() + b"\n")
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> Mlp:
    with open(path, "rb") as f:
        if f.readline().strip() != _MAGIC:
            raise ValueError("not a network parameter file")
        sizes = tuple(int(s) for s in f.readline().split())
        blob = f.read()
    weights, biases, off = [], [], 0

    def take(count):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
        off += count * 8
        return arr

    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(take(fan_out * fan_in).reshape(fan_out, fan_in))
        biases.append(take(fan_out))
    if off != len(blob):
        raise ValueError("parameter file has trailing bytes")
    return Mlp(sizes, weights, biases)


# ---------------------------------------------------------------------------
# State encoding for the Q- and policy-networks
# ---------------------------------------------------------------------------


class StateEncoder:
    """Maps (n, x) pairs to network inputs.

    Default: one-hot over states plus a normalized-time feature n/n_t.
    Joint mode: one-hot over the (n, x) product space, which makes a linear
    network an exact table (used to cross-check deep against tabular solvers).
    """

    def __init__(self, n_t: int, num_states: int, joint: bool = False):
        self.n_t = n_t
        self.num_states = num_states
        self.joint = joint
        rows = (n_t + 1) * num_states
        if joint:
            self.width = rows
            self.table = np.eye(rows)
        else:
            self.width = num_states + 1
            self.table = np.zeros((rows, self.width))
            for n in range(n_t + 1):
                for x in range(num_states):
                    self.table[n * num_states + x, x] = 1.0
                    self.table[n * num_states + x, num_states] = n / n_t
        self.table.setflags(write=False)

    def encode(self, ns, xs) -> np.ndarray:
        """Batch of rows for time indices ns and state indices xs."""
        return self.table[np.asarray(ns) * self.num_states + np.asarray(xs)]

    def all_inputs(self) -> np.ndarray:
        """Rows for every (n, x), ordered n-major."""
        return self.table
