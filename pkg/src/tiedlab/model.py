"""Executable sequential models built from a ModelConfig.

Every layer exposes a pure ``forward``, a ``forward_train`` that also returns
what its backward pass needs, and ``backward(cache, grad_out)`` returning the
input gradient plus one gradient per parameter.  Parameters are plain numpy
arrays, changed only through :meth:`Model.apply_gradient`.
"""

import math

import numpy as np

from . import autograd as ag
from .config import bottleneck_parts, infer_shapes, validate
from .errors import ShapeError
from .nn import ConvWeights, conv2d, fully_connected, global_avg_pool, group_conv2d, relu, softmax_cross_entropy
from .tensor import Rng, as_tensor4, derive_seed
from .tied import TfcWeights, TiedConvWeights, TiedSeSpec, tbc_forward_fast, tfc_forward, tgc_forward, tied_se_forward


def _init(rng, shape, fan_in):
    """Uniform in [-a, a], a = sqrt(1 / fan_in)."""
    return math.sqrt(1.0 / fan_in) * rng.uniform(shape)


class Layer:
    kind = ""

    def __init__(self, node):
        self.node = node
        self.params = {}

    @property
    def size(self):
        return sum(p.size for p in self.params.values())

    def forward(self, x):
        raise NotImplementedError

    def forward_train(self, x):
        return self.forward(x), x

    def backward(self, cache, grad_out):
        raise NotImplementedError


_CONV_FORWARD = {"conv": conv2d, "gconv": group_conv2d, "tbc": tbc_forward_fast, "tgc": tgc_forward}
_CONV_BACKWARD = {"conv": ag.conv2d_backward, "gconv": ag.group_conv2d_backward,
                  "tbc": ag.tbc_backward, "tgc": ag.tgc_backward}


class ConvLayer(Layer):
    def __init__(self, node, rng):
        super().__init__(node)
        self.kind = node.kind
        self.spec = node.conv_spec()
        rows, fan_in = self.spec.bank_shape
        self.params["weight"] = _init(rng, (rows, fan_in), fan_in)
        if self.spec.has_bias:
            self.params["bias"] = _init(rng, (self.spec.bias_len,), fan_in)

    def _weights(self):
        cls = TiedConvWeights if self.kind in ("tbc", "tgc") else ConvWeights
        return cls(self.params["weight"], self.params.get("bias"))

    def forward(self, x):
        return _CONV_FORWARD[self.kind](x, self.spec, self._weights())

    def backward(self, x, grad_out):
        gx, gw, gb = _CONV_BACKWARD[self.kind](x, self.spec, self._weights(), grad_out)
        grads = {"weight": gw}
        if gb is not None:
            grads["bias"] = gb
        return gx, grads


class LinearLayer(Layer):
    """``fc`` (blocks=1) or ``tfc``."""

    def __init__(self, node, rng):
        super().__init__(node)
        self.kind = node.kind
        self.blocks = node.blocks if node.kind == "tfc" else 1
        fan_in = node.c_i // self.blocks
        self.params["weight"] = _init(rng, (node.c_o // self.blocks, fan_in), fan_in)
        if node.bias:
            self.params["bias"] = _init(rng, (node.c_o // self.blocks,), fan_in)

    def forward(self, x):
        if self.kind == "fc":
            return fully_connected(x, self.params["weight"], self.params.get("bias"))
        return tfc_forward(x, self.blocks, TfcWeights(self.params["weight"], self.params.get("bias")))

    def backward(self, x, grad_out):
        wts = TfcWeights(self.params["weight"], self.params.get("bias"))
        gx, gw, gb = ag.tfc_backward(x, self.blocks, wts, grad_out)
        grads = {"weight": gw}
        if gb is not None:
            grads["bias"] = gb
        return gx, grads


class TiedSeLayer(Layer):
    kind = "tied_se"

    def __init__(self, node, rng):
        super().__init__(node)
        b, c, hidden = node.blocks, node.c, node.c // node.r
        self.params["fc1.weight"] = _init(rng, (hidden // b, c // b), c // b)
        if node.bias:
            self.params["fc1.bias"] = _init(rng, (hidden // b,), c // b)
        self.params["fc2.weight"] = _init(rng, (c // b, hidden // b), hidden // b)
        if node.bias:
            self.params["fc2.bias"] = _init(rng, (c // b,), hidden // b)

    def se_spec(self):
        p, node = self.params, self.node
        return TiedSeSpec(node.c, node.r, node.blocks,
                          TfcWeights(p["fc1.weight"], p.get("fc1.bias")),
                          TfcWeights(p["fc2.weight"], p.get("fc2.bias")))

    def forward(self, x):
        return tied_se_forward(x, self.se_spec())

    def backward(self, x, grad_out):
        gx, (gw1, gw2), (gb1, gb2) = ag.tied_se_backward(x, self.se_spec(), grad_out)
        grads = {"fc1.weight": gw1, "fc2.weight": gw2}
        if gb1 is not None:
            grads["fc1.bias"] = gb1
            grads["fc2.bias"] = gb2
        return gx, {k: grads[k] for k in self.params}


class ReluLayer(Layer):
    kind = "relu"

    def forward(self, x):
        return relu(x)

    def backward(self, x, grad_out):
        return ag.relu_backward(x, grad_out), {}


class GapLayer(Layer):
    kind = "gap"

    def forward(self, x):
        return global_avg_pool(x)

    def backward(self, x, grad_out):
        return ag.global_avg_pool_backward(x, grad_out), {}


class FlattenLayer(Layer):
    kind = "flatten"

    def forward(self, x):
        x = np.asarray(x)
        return x.reshape(x.shape[0], -1)

    def forward_train(self, x):
        return self.forward(x), x.shape

    def backward(self, shape, grad_out):
        return np.asarray(grad_out).reshape(shape), {}


class BottleneckLayer(Layer):
    """relu(branch(x) + shortcut(x)), shortcut being identity or a 1x1 projection."""

    def __init__(self, node, rng_for):
        super().__init__(node)
        self.kind = node.kind
        main, shortcut = bottleneck_parts(node)
        self.main = [make_layer(sub, rng_for(i)) for i, sub in enumerate(main)]
        self.shortcut = None if shortcut is None else make_layer(shortcut, rng_for(len(main)))
        for i, layer in enumerate(self.main):
            for name, p in layer.params.items():
                self.params[f"main.{i}.{name}"] = p
        if self.shortcut is not None:
            for name, p in self.shortcut.params.items():
                self.params[f"shortcut.{name}"] = p

    def forward(self, x):
        h = x
        for layer in self.main:
            h = layer.forward(h)
        s = x if self.shortcut is None else self.shortcut.forward(x)
        return relu(h + s)

    def forward_train(self, x):
        caches, h = [], x
        for layer in self.main:
            h, cache = layer.forward_train(h)
            caches.append(cache)
        s = x if self.shortcut is None else self.shortcut.forward(x)
        pre = h + s
        return relu(pre), (x, caches, pre)

    def backward(self, cache, grad_out):
        x, caches, pre = cache
        g = ag.relu_backward(pre, grad_out)
        grads = {}
        gh = g
        for i in reversed(range(len(self.main))):
            gh, sub = self.main[i].backward(caches[i], gh)
            for name, v in sub.items():
                grads[f"main.{i}.{name}"] = v
        if self.shortcut is None:
            gx = gh + g
        else:
            gs, sub = self.shortcut.backward(x, g)
            for name, v in sub.items():
                grads[f"shortcut.{name}"] = v
            gx = gh + gs
        return gx, {k: grads[k] for k in self.params}


def make_layer(node, rng, rng_for=None):
    kind = node.kind
    if kind in _CONV_FORWARD:
        return ConvLayer(node, rng)
    if kind in ("fc", "tfc"):
        return LinearLayer(node, rng)
    if kind == "tied_se":
        return TiedSeLayer(node, rng)
    if kind == "relu":
        return ReluLayer(node)
    if kind == "gap":
        return GapLayer(node)
    if kind == "flatten":
        return FlattenLayer(node)
    if kind in ("bottleneck", "tied_bottleneck"):
        seed = rng.seed
        return BottleneckLayer(node, rng_for or (lambda i: Rng(derive_seed(seed, i))))
    raise ShapeError(f"unknown layer kind {kind!r}")


class Model:
    """A built sequential model; see :func:`build`."""

    def __init__(self, config):
        self.config = validate(config)
        self.shapes = infer_shapes(config)
        self.layers = [make_layer(node, Rng(derive_seed(config.seed, i)))
                       for i, node in enumerate(config.layers)]

    @property
    def input_shape(self):
        return tuple(self.config.input)

    def parameters(self):
        """(qualified name, array) pairs in a fixed order; arrays are the live weights."""
        out = []
        for i, layer in enumerate(self.layers):
            label = layer.node.name or f"{layer.node.kind}{i}"
            for name, p in layer.params.items():
                out.append((f"{i}.{label}.{name}", p))
        return out

    def num_params(self):
        return sum(p.size for _, p in self.parameters())

    def _check_input(self, x):
        x = as_tensor4(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model {self.config.name} expects (n, {self.input_shape}), got {x.shape}")
        return x

    def forward(self, x):
        h = self._check_input(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def forward_trace(self, x):
        """Forward pass returning every layer's output (for shape checks)."""
        h = self._check_input(x)
        outs = []
        for layer in self.layers:
            h = layer.forward(h)
            outs.append(h)
        return outs

    def loss_and_grads(self, x, labels):
        """Mean softmax cross-entropy, logits, and gradients aligned with parameters()."""
        h = self._check_input(x)
        caches = []
        for layer in self.layers:
            h, cache = layer.forward_train(h)
            caches.append(cache)
        logits = h
        if logits.ndim != 2 or logits.shape[1] != self.config.classes:
            raise ShapeError(f"model output {logits.shape} is not (n, classes={self.config.classes})")
        loss, g = softmax_cross_entropy(logits, labels)
        per_layer = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, grads = layer.backward(cache, g)
            per_layer.append(grads)
        per_layer.reverse()
        flat = [grads[name] for layer, grads in zip(self.layers, per_layer) for name in layer.params]
        return loss, logits, flat

    def apply_gradient(self, steps):
        """In-place ``w -= step`` for each parameter, steps aligned with parameters()."""
        params = self.parameters()
        if len(steps) != len(params):
            raise ShapeError(f"{len(steps)} steps for {len(params)} parameters")
        for (name, p), step in zip(params, steps):
            if np.shape(step) != p.shape:
                raise ShapeError(f"step for {name} has shape {np.shape(step)}, expected {p.shape}")
            p -= step

    def summary(self):
        """(index, name, kind, parameter count, declared per-sample output shape) per layer."""
        return [(i, layer.node.name or f"{layer.node.kind}{i}", layer.node.kind, layer.size, shape)
                for i, (layer, shape) in enumerate(zip(self.layers, self.shapes))]


def build(config):
    """Validate ``config`` and initialize its weights deterministically from ``config.seed``."""
    return Model(config)
