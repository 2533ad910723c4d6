"""Declarative layer stack: descriptors, Glorot init, forward pass, hashing.

A model is a tuple of layer descriptors plus a list of float32 parameter
arrays.  Keeping the description as plain data lets checkpoints store a
canonical topology hash and lets the forward pass stay a single loop.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag


@dataclass(frozen=True)
class Conv:
    cin: int
    cout: int
    k: int = 3
    stride: int = 1
    pad: int = 1


@dataclass(frozen=True)
class TConv:
    cin: int
    cout: int
    k: int = 3
    stride: int = 2
    pad: int = 1
    out_pad: int = 1


@dataclass(frozen=True)
class Dense:
    din: int
    dout: int


@dataclass(frozen=True)
class Gelu:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


def param_shapes(layers) -> list:
    """Weight/bias shapes in forward order; activation layers contribute none."""
    shapes = []
    for layer in layers:
        if isinstance(layer, Conv):
            shapes += [(layer.cout, layer.cin, layer.k, layer.k), (layer.cout,)]
        elif isinstance(layer, TConv):
            shapes += [(layer.cin, layer.cout, layer.k, layer.k), (layer.cout,)]
        elif isinstance(layer, Dense):
            shapes += [(layer.din, layer.dout), (layer.dout,)]
    return shapes


def param_count(layers) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(layers))


def _fans(layer):
    if isinstance(layer, (Conv, TConv)):
        rf = layer.k * layer.k
        return layer.cin * rf, layer.cout * rf
    return layer.din, layer.dout


def _feeds_gelu(layers, i) -> bool:
    for nxt in layers[i + 1:]:
        if isinstance(nxt, Flatten):
            continue
        return isinstance(nxt, Gelu)
    return False


def init_params(layers, seed: int) -> list:
    """Seeded uniform weight init, zero biases.

    Layers feeding a GELU get He-style fan-in scaling (the stack is deep
    enough that Glorot attenuates activations to near zero); output layers
    get Glorot.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params = []
    for i, layer in enumerate(layers):
        if not isinstance(layer, (Conv, TConv, Dense)):
            continue
        w_shape, b_shape = param_shapes([layer])
        fan_in, fan_out = _fans(layer)
        denom = fan_in if _feeds_gelu(layers, i) else (fan_in + fan_out)
        limit = float(np.sqrt(6.0 / denom))
        params.append(rng.uniform(-limit, limit, size=w_shape).astype(np.float32))
        params.append(np.zeros(b_shape, dtype=np.float32))
    return params


def forward(layers, params, x: ag.Tensor) -> ag.Tensor:
    """Run the stack; params must match param_shapes(layers) in order."""
    it = iter(params)
    h = x
    for layer in layers:
        if isinstance(layer, Conv):
            h = ag.conv2d(h, next(it), next(it), stride=layer.stride, pad=layer.pad)
        elif isinstance(layer, TConv):
            h = ag.conv2d_transpose(h, next(it), next(it), stride=layer.stride,
                                    pad=layer.pad, out_pad=layer.out_pad)
        elif isinstance(layer, Dense):
            h = ag.dense(ag.flatten(h) if h.data.ndim != 2 else h, next(it), next(it))
        elif isinstance(layer, Gelu):
            h = ag.gelu(h)
        elif isinstance(layer, Sigmoid):
            h = ag.sigmoid(h)
        elif isinstance(layer, Flatten):
            h = ag.flatten(h)
        else:
            raise TypeError(f"unknown layer descriptor: {layer!r}")
    return h


def topology(layers) -> list:
    """JSON-ready description: one dict per layer, field order fixed."""
    out = []
    for layer in layers:
        d = {"type": type(layer).__name__}
        for f in fields(layer):
            d[f.name] = getattr(layer, f.name)
        out.append(d)
    return out


def topology_hash(layers) -> str:
    blob = json.dumps(topology(layers), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


_LAYER_TYPES = {cls.__name__: cls for cls in (Conv, TConv, Dense, Gelu, Sigmoid, Flatten)}


def layers_from_topology(desc) -> tuple:
    """Inverse of topology(); raises on unknown layer types."""
    out = []
    for d in desc:
        cls = _LAYER_TYPES.get(d.get("type"))
        if cls is None:
            raise ValueError(f"unknown layer type in topology: {d.get('type')!r}")
        kwargs = {k: v for k, v in d.items() if k != "type"}
        out.append(cls(**kwargs))
    return tuple(out)


def flatten_params(params) -> np.ndarray:
    if not params:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([np.asarray(p, dtype=np.float32).ravel() for p in params])


def param_views(layers, flat: np.ndarray) -> list:
    """Reshaped views into a flat parameter buffer (shared memory)."""
    views, pos = [], 0
    for s in param_shapes(layers):
        n = int(np.prod(s))
        views.append(flat[pos:pos + n].reshape(s))
        pos += n
    return views


def unflatten_params(flat: np.ndarray, layers) -> list:
    shapes = param_shapes(layers)
    total = sum(int(np.prod(s)) for s in shapes)
    flat = np.asarray(flat, dtype=np.float32)
    if flat.size != total:
        raise ValueError(f"parameter vector holds {flat.size} values, topology needs {total}")
    out, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(flat[pos:pos + n].reshape(s).copy())
        pos += n
    return out
