"""Dense ReLU network with Fourier input features, trained with softmax cross-entropy.

Everything is float64 numpy. Inputs are first mapped to ``[-1, 1]^d`` using
the owning node's region, then optionally lifted with sinusoidal features
``[x, sin(2^j pi s x), cos(2^j pi s x)]_{j<m}``.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Box
from .rng import make_rng


@dataclass(frozen=True)
class Encoding:
    kind: str = "fourier"
    m: int = 6
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "fourier"):
            raise ValueError(f"unknown encoding {self.kind!r}")
        if self.kind == "fourier" and self.m < 1:
            raise ValueError("fourier encoding needs m >= 1")

    def out_dim(self, d: int) -> int:
        return d if self.kind == "none" else d * (2 * self.m + 1)

    def to_json(self) -> dict:
        return {"kind": self.kind, "m": self.m, "sigma": self.sigma}


def normalize(x: np.ndarray, region: Box) -> np.ndarray:
    """Map the region affinely onto ``[-1, 1]^d``; points outside are clamped."""
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    u = np.where(span > 0, 2.0 * (x - lo) / safe - 1.0, 0.0)
    return np.clip(u, -1.0, 1.0)


def encode(x: np.ndarray, encoding: Encoding, region: Box) -> np.ndarray:
    u = normalize(np.atleast_2d(np.asarray(x, dtype=float)), region)
    if encoding.kind == "none":
        return u
    feats = [u]
    for j in range(encoding.m):
        arg = (2.0 ** j) * np.pi * encoding.sigma * u
        feats.append(np.sin(arg))
        feats.append(np.cos(arg))
    return np.concatenate(feats, axis=1)


@dataclass
class Mlp:
    widths: list[int]
    encoding: Encoding
    region: Box
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    node_id: Optional[int] = None

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), self.encoding, self.region,
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.seed, self.node_id)


def init(widths: Sequence[int], encoding: Encoding, seed: int, region: Box,
         node_id: Optional[int] = None) -> Mlp:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``) and zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    if widths[0] != encoding.out_dim(region.dim):
        raise ValueError(f"input width {widths[0]} does not match encoded dimension "
                         f"{encoding.out_dim(region.dim)}")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(widths, encoding, region, weights, biases, seed, node_id)


def make_model(dim: int, hidden: Sequence[int], n_out: int, encoding: Encoding,
               region: Box, seed: int, node_id: Optional[int] = None) -> Mlp:
    return init([encoding.out_dim(dim), *hidden, n_out], encoding, seed, region, node_id)


def constant_model(dim: int, region: Box, n_out: int = 1, node_id: Optional[int] = None) -> Mlp:
    """All-zero network: every input gets logits 0 (used for single-class nodes)."""
    enc = Encoding("none")
    return Mlp([dim, n_out], enc, region, [np.zeros((dim, n_out))], [np.zeros(n_out)], 0, node_id)


def _forward_trace(model: Mlp, x: np.ndarray):
    a = encode(x, model.encoding, model.region)
    acts, pre = [a], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Logits for a batch ``(N, d)`` (or a single point) of raw coordinates."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    acts, _ = _forward_trace(model, np.atleast_2d(x))
    return acts[-1][0] if single else acts[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row ``-log softmax(logits)[label]`` with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return logz - z[np.arange(len(labels)), labels]


def loss_and_grad(model: Mlp, x: np.ndarray, labels: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its exact gradient.

    Gradients come back in ``model.params()`` order (W1, b1, W2, b2, ...).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= model.n_out:
        raise ValueError(f"labels must lie in [0, {model.n_out})")
    acts, pre = _forward_trace(model, x)
    logits = acts[-1]
    batch = len(labels)
    loss = float(cross_entropy(logits, labels).mean())

    dz = softmax(logits)
    dz[np.arange(batch), labels] -= 1.0
    dz /= batch
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append(dz.sum(axis=0))
        grads.append(acts[i].T @ dz)
        if i > 0:
            dz = (dz @ model.weights[i].T) * (pre[i - 1] > 0)
    grads.reverse()
    return loss, grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: Mlp, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        params = model.params()
        return cls(lr, beta1, beta2, eps, 0,
                   [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(model: Mlp, state: AdamState, grads: Sequence[np.ndarray]) -> tuple[Mlp, AdamState]:
    """Bias-corrected Adam update, applied in place."""
    params = model.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the model")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


# --- model files -------------------------------------------------------------

def model_to_json(model: Mlp) -> dict:
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    return {
        "widths": list(model.widths),
        "encoding": model.encoding.to_json(),
        "seed": model.seed,
        "node_id": model.node_id,
        "region": model.region.to_json(),
        "params": base64.b64encode(blob).decode("ascii"),
    }


def model_from_json(doc: dict) -> Mlp:
    widths = [int(w) for w in doc["widths"]]
    raw = np.frombuffer(base64.b64decode(doc["params"]), dtype="<f8")
    weights, biases, off = [], [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(raw[off:off + fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float64))
        off += fan_in * fan_out
        biases.append(raw[off:off + fan_out].astype(np.float64))
        off += fan_out
    if off != len(raw):
        raise ValueError("parameter blob length does not match widths")
    return Mlp(widths, Encoding(**doc["encoding"]), Box.from_json(doc["region"]),
               weights, biases, int(doc["seed"]), doc["node_id"])


def dumps_model(model: Mlp) -> str:
    return json.dumps(model_to_json(model)) + "\n"


def loads_model(text: str) -> Mlp:
    return model_from_json(json.loads(text))
