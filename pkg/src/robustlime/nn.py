"""Minimal dense-network engine.

Fixed-topology MLPs in double precision: Glorot init, exact reverse-mode
gradients for parameters and inputs, Adam, JSON parameter files. The output
layer may mix activations over a declared block layout (tanh scalars plus
softmax one-hot blocks), which is how the tabular generator emits encoded
rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.2

SIMPLE_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "linear")


@dataclass(frozen=True)
class MixSpec:
    """Output block layout: sequence of ('tanh'|'softmax'|'linear', width).

    `temperature` scales the softmax blocks as softmax(a / T).  Low values
    push the blocks toward one-hot corners, which keeps generated category
    indicators comparable to the hard one-hots real encodings carry."""

    blocks: tuple[tuple[str, int], ...]
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError("temperature must be positive")

    @property
    def width(self) -> int:
        return sum(w for _, w in self.blocks)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str | MixSpec


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[Layer, ...]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        sizes = [self.layers[0].weight.shape[1]]
        sizes.extend(l.weight.shape[0] for l in self.layers)
        return tuple(sizes)


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)  # layer inputs X_0..X_{L-1}
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activations A_1..A_L
    post: list[np.ndarray] = field(default_factory=list)  # activations after each layer


def mlp_init(layer_sizes, activations, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least one layer (two sizes)")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError(f"zero-size layer in {layer_sizes}")
    if len(activations) != len(layer_sizes) - 1:
        raise ValueError("one activation per layer required")
    for act in activations:
        if isinstance(act, str):
            if act not in SIMPLE_ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        elif not isinstance(act, MixSpec):
            raise ValueError(f"bad activation spec {act!r}")
    if isinstance(activations[-1], MixSpec) and activations[-1].width != layer_sizes[-1]:
        raise ValueError("mix block widths must sum to the output size")

    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-a, a, size=(fan_out, fan_in))
        layers.append(Layer(weight, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


def _apply_activation(act, a: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(a, 0.0)
    if act == "leaky_relu":
        return np.where(a > 0.0, a, LEAKY_SLOPE * a)
    if act == "tanh":
        return np.tanh(a)
    if act == "linear":
        return a
    out = np.empty_like(a)
    off = 0
    for kind, w in act.blocks:
        seg = a[:, off : off + w]
        if kind == "tanh":
            out[:, off : off + w] = np.tanh(seg)
        elif kind == "linear":
            out[:, off : off + w] = seg
        else:  # softmax over the block, optionally tempered
            scaled = seg / act.temperature
            shifted = scaled - scaled.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            out[:, off : off + w] = e / e.sum(axis=1, keepdims=True)
        off += w
    return out


def activation_deriv(act: str, a: np.ndarray) -> np.ndarray:
    """phi'(a) for elementwise activations (mix handled in backward)."""
    if act == "relu":
        return (a > 0.0).astype(np.float64)
    if act == "leaky_relu":
        return np.where(a > 0.0, 1.0, LEAKY_SLOPE)
    if act == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if act == "linear":
        return np.ones_like(a)
    raise ValueError(f"no elementwise derivative for {act!r}")


def forward(p: MlpParams, batch) -> tuple[np.ndarray, Cache]:
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != p.layers[0].weight.shape[1]:
        raise ValueError(
            f"batch width {X.shape[1]} does not match input size {p.layers[0].weight.shape[1]}"
        )
    cache = Cache()
    h = X
    for layer in p.layers:
        cache.inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        cache.pre.append(a)
        h = _apply_activation(layer.activation, a)
        cache.post.append(h)
    return h, cache


def _grad_through_activation(act, a: np.ndarray, post: np.ndarray, g: np.ndarray) -> np.ndarray:
    """dL/d(pre-activation) given dL/d(activation output)."""
    if isinstance(act, str):
        return g * activation_deriv(act, a)
    out = np.empty_like(g)
    off = 0
    for kind, w in act.blocks:
        gs = g[:, off : off + w]
        if kind == "tanh":
            t = post[:, off : off + w]
            out[:, off : off + w] = gs * (1.0 - t * t)
        elif kind == "linear":
            out[:, off : off + w] = gs
        else:
            s = post[:, off : off + w]
            inner = (gs * s).sum(axis=1, keepdims=True)
            out[:, off : off + w] = s * (gs - inner) / act.temperature
        off += w
    return out


def backward(p: MlpParams, cache: Cache, grad_output) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact gradients of sum(L) for both parameters and the input batch."""
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"grad_output shape {g.shape} != output shape {cache.pre[-1].shape}")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(p.layers)
    for i in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[i]
        delta = _grad_through_activation(layer.activation, cache.pre[i], cache.post[i], g)
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        g = delta @ layer.weight
    return grads, g


@dataclass
class AdamState:
    m: list[tuple[np.ndarray, np.ndarray]]
    v: list[tuple[np.ndarray, np.ndarray]]
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8


def adam_init(p: MlpParams, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8) -> AdamState:
    zeros = lambda l: (np.zeros_like(l.weight), np.zeros_like(l.bias))
    return AdamState(
        m=[zeros(l) for l in p.layers],
        v=[zeros(l) for l in p.layers],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(state: AdamState, p: MlpParams, grads) -> MlpParams:
    """One Adam update with bias correction; mutates state, returns new params."""
    for i, (dw, db) in enumerate(grads):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise FloatingPointError(f"non-finite gradient at layer {i}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_layers = []
    for i, layer in enumerate(p.layers):
        mw, mb = state.m[i]
        vw, vb = state.v[i]
        dw, db = grads[i]
        mw = state.beta1 * mw + (1 - state.beta1) * dw
        mb = state.beta1 * mb + (1 - state.beta1) * db
        vw = state.beta2 * vw + (1 - state.beta2) * dw * dw
        vb = state.beta2 * vb + (1 - state.beta2) * db * db
        state.m[i] = (mw, mb)
        state.v[i] = (vw, vb)
        w = layer.weight - state.lr * (mw / c1) / (np.sqrt(vw / c2) + state.eps)
        b = layer.bias - state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps)
        new_layers.append(Layer(w, b, layer.activation))
    return MlpParams(tuple(new_layers))


def _act_to_json(act):
    if isinstance(act, str):
        return act
    doc = {"kind": "mix", "blocks": [[k, w] for k, w in act.blocks]}
    if act.temperature != 1.0:
        doc["temperature"] = act.temperature
    return doc


def _act_from_json(doc):
    if isinstance(doc, str):
        return doc
    return MixSpec(
        tuple((k, int(w)) for k, w in doc["blocks"]),
        temperature=float(doc.get("temperature", 1.0)),
    )


def save_params(p: MlpParams, path) -> None:
    doc = {
        "version": 1,
        "layer_sizes": list(p.layer_sizes),
        "activations": [_act_to_json(l.activation) for l in p.layers],
        "weights": [l.weight.tolist() for l in p.layers],
        "biases": [l.bias.tolist() for l in p.layers],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_params(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt parameter file {path}: {exc}") from exc
    if doc.get("version") != 1:
        raise ValueError(f"unsupported parameter file version {doc.get('version')!r}")
    layers = []
    for w, b, act in zip(doc["weights"], doc["biases"], doc["activations"]):
        layers.append(Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64), _act_from_json(act)))
    p = MlpParams(tuple(layers))
    sizes = list(p.layer_sizes)
    if sizes != doc["layer_sizes"]:
        raise ValueError("layer_sizes disagree with stored matrices")
    return p
