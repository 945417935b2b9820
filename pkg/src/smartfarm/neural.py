"""A small tanh MLP with hand-written backprop, Adam, and a flat checkpoint format.

The network maps an observation to 3 action logits plus one value estimate.
Parameters live in a single float64 vector; per-layer weight and bias arrays
are views into it, so optimizers and checkpoints only ever touch the flat
vector.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_ACTIONS = 3
HIDDEN = (64, 64)


class CheckpointError(ValueError):
    pass


@dataclass
class GradientRecord:
    params: np.ndarray
    inputs: np.ndarray


class PolicyNet:
    def __init__(self, layer_sizes: Sequence[int], seed: int | None = 0,
                 params: np.ndarray | None = None) -> None:
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if sizes[-1] != NUM_ACTIONS + 1:
            raise ValueError(f"output layer must have {NUM_ACTIONS + 1} units, got {sizes[-1]}")
        self.sizes = sizes
        self.seed = seed
        self.n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        if params is None:
            self.params = self._init_params(np.random.default_rng(seed))
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params.copy()
        self._cache: tuple | None = None

    @classmethod
    def for_observation(cls, obs_dim: int, seed: int | None = 0) -> "PolicyNet":
        return cls((obs_dim, *HIDDEN, NUM_ACTIONS + 1), seed=seed)

    @property
    def obs_dim(self) -> int:
        return self.sizes[0]

    def layers(self, vec: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``vec`` (defaults to the live parameters)."""
        vec = self.params if vec is None else vec
        out, k = [], 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            w = vec[k:k + i * o].reshape(i, o)
            k += i * o
            b = vec[k:k + o]
            k += o
            out.append((w, b))
        return out

    def _init_params(self, rng: np.random.Generator) -> np.ndarray:
        vec = np.zeros(self.n_params)
        layers = self.layers(vec)
        for idx, (w, _) in enumerate(layers):
            fan_in, fan_out = w.shape
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            if idx == len(layers) - 1:
                scale *= 0.01  # near-uniform initial policy
            w[...] = rng.normal(0.0, scale, size=w.shape)
        return vec

    def head_slice(self) -> slice:
        i, o = self.sizes[-2], self.sizes[-1]
        return slice(self.n_params - (i * o + o), self.n_params)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.sizes, self.seed, self.params)

    # -- forward / backward ---------------------------------------------------

    def forward_raw(self, x: np.ndarray) -> np.ndarray:
        """Return the (B, 4) output block for a (B, D) or (D,) input and cache it."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"observation has {x.shape[1]} features, network expects {self.sizes[0]}")
        acts = [x]
        h = x
        layers = self.layers()
        for idx, (w, b) in enumerate(layers):
            z = h @ w + b
            h = z if idx == len(layers) - 1 else np.tanh(z)
            acts.append(h)
        self._cache = (acts, single)
        return h

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.forward_raw(x)
        logits, value = out[:, :NUM_ACTIONS], out[:, NUM_ACTIONS]
        if self._cache[1]:
            return logits[0], value[0]
        return logits, value

    def backward(self, grad_out: np.ndarray) -> GradientRecord:
        """Reverse-mode gradients for the most recent forward pass.

        ``grad_out`` is dLoss/d(output block), shaped like the forward output.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grad = np.zeros(self.n_params)
        grad_layers = self.layers(grad)
        layers = self.layers()
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            h_in = acts[idx]
            if idx != len(layers) - 1:
                g = g * (1.0 - acts[idx + 1] ** 2)
            gw, gb = grad_layers[idx]
            gw[...] = h_in.T @ g
            gb[...] = g.sum(axis=0)
            g = g @ w.T
        return GradientRecord(grad, g[0] if single else g)

    def input_gradient(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        self.forward_raw(x)
        return self.backward(grad_out).inputs


def forward(net: PolicyNet, observation: np.ndarray) -> tuple[np.ndarray, float]:
    return net.forward(observation)


def backward(net: PolicyNet, grad_out: np.ndarray) -> GradientRecord:
    return net.backward(grad_out)


def softmax_temp(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Adam:
    def __init__(self, n_params: int, lr: float = 8e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float | None = None) -> None:
        """In-place descent step on ``params``."""
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimize_step(net: PolicyNet, grads: GradientRecord | np.ndarray, lr: float = 8e-4,
                  optimizer: Adam | None = None) -> PolicyNet:
    g = grads.params if isinstance(grads, GradientRecord) else np.asarray(grads)
    opt = optimizer if optimizer is not None else Adam(net.n_params, lr)
    opt.step(net.params, g, lr)
    return net


# -- checkpoints --------------------------------------------------------------
#
# layout: MAGIC | u32 header length | JSON header | float64 LE parameters
# header: {"version", "layer_sizes", "seed", "training_steps", "n_params", "crc32", ...meta}

MAGIC = b"SFNET\x01"
VERSION = 1


def save_checkpoint(net: PolicyNet, meta: dict | None = None) -> bytes:
    payload = net.params.astype("<f8").tobytes()
    header = {
        "version": VERSION,
        "layer_sizes": list(net.sizes),
        "seed": net.seed,
        "training_steps": 0,
        "n_params": net.n_params,
        "crc32": zlib.crc32(payload),
    }
    for key, value in (meta or {}).items():
        if key in ("version", "layer_sizes", "n_params", "crc32"):
            raise ValueError(f"meta key {key!r} is reserved")
        header[key] = value
    blob = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + payload


def read_checkpoint(data: bytes) -> tuple[dict, np.ndarray]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a policy checkpoint (bad magic)")
    try:
        (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
        start = len(MAGIC) + 4
        header = json.loads(data[start:start + hlen].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    for key in ("version", "layer_sizes", "n_params", "crc32"):
        if key not in header:
            raise CheckpointError(f"checkpoint header lacks {key!r}")
    if header["version"] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header['version']}")
    sizes = header["layer_sizes"]
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if expected != header["n_params"]:
        raise CheckpointError("header parameter count disagrees with layer sizes")
    payload = data[start + hlen:]
    if len(payload) != 8 * expected:
        raise CheckpointError(f"expected {8 * expected} payload bytes, found {len(payload)}")
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    return header, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def load_checkpoint(data: bytes, mode: str = "full", target: PolicyNet | None = None) -> PolicyNet:
    """Rebuild a network from checkpoint bytes.

    ``full`` restores every parameter and requires matching layer sizes when a
    ``target`` is given. ``partial`` copies the hidden layers into ``target``
    and leaves its output head as initialized; head shapes may differ.
    """
    header, params = read_checkpoint(data)
    sizes = tuple(header["layer_sizes"])
    if mode == "full":
        if target is not None and tuple(target.sizes) != sizes:
            raise CheckpointError(f"layer sizes {sizes} do not match target {tuple(target.sizes)}")
        return PolicyNet(sizes, header.get("seed"), params)
    if mode != "partial":
        raise ValueError(f"unknown load mode {mode!r}")
    if target is None:
        raise ValueError("partial load needs a target network")
    if tuple(target.sizes[:-1]) != sizes[:-1]:
        raise CheckpointError(f"hidden layers {sizes[:-1]} do not match target {tuple(target.sizes[:-1])}")
    out = target.copy()
    src = PolicyNet(sizes, header.get("seed"), params)
    for (w_dst, b_dst), (w_src, b_src) in zip(out.layers()[:-1], src.layers()[:-1]):
        w_dst[...] = w_src
        b_dst[...] = b_src
    return out
