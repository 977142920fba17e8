"""Declarative model descriptions: layer nodes, model configs, JSON I/O and shape checks."""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError, ShapeError
from .nn import ConvSpec
from .tensor import conv_out_size

CONV_KINDS = ("conv", "gconv", "tbc", "tgc")
_CONV_OPT = ("k", "stride", "pad", "bias")
_BOTTLENECK_OPT = ("stride", "expansion", "se", "r", "bias")

# kind -> (required keys, optional keys)
KIND_KEYS = {
    "conv": (("c_i", "c_o"), _CONV_OPT),
    "gconv": (("c_i", "c_o", "groups"), _CONV_OPT),
    "tbc": (("c_i", "c_o", "blocks"), _CONV_OPT),
    "tgc": (("c_i", "c_o", "groups", "blocks"), _CONV_OPT),
    "fc": (("c_i", "c_o"), ("bias",)),
    "tfc": (("c_i", "c_o", "blocks"), ("bias",)),
    "tied_se": (("c", "r"), ("blocks", "bias")),
    "relu": ((), ()),
    "gap": ((), ()),
    "flatten": ((), ()),
    "bottleneck": (("c_i", "planes"), _BOTTLENECK_OPT),
    "tied_bottleneck": (("c_i", "planes", "blocks"), _BOTTLENECK_OPT),
}


@dataclass(frozen=True)
class LayerNode:
    """One layer of a sequential model.  Only the keys listed in KIND_KEYS matter per kind."""

    kind: str
    name: Optional[str] = None
    c_i: Optional[int] = None
    c_o: Optional[int] = None
    c: Optional[int] = None
    k: int = 1
    stride: int = 1
    pad: int = 0
    groups: int = 1
    blocks: int = 1
    bias: bool = True
    r: int = 16
    planes: Optional[int] = None
    expansion: int = 4
    se: bool = False

    def conv_spec(self):
        if self.kind not in CONV_KINDS:
            raise ConfigError(f"{self.kind} is not a convolution")
        groups = self.groups if self.kind in ("gconv", "tgc") else 1
        blocks = self.blocks if self.kind in ("tbc", "tgc") else 1
        if self.kind == "tgc" and groups % blocks:
            raise ShapeError(f"tgc needs G % B == 0, got G={groups}, B={blocks}")
        return ConvSpec(self.c_i, self.c_o, self.k, self.stride, self.pad, groups, blocks, self.bias)

    def to_dict(self):
        required, optional = KIND_KEYS[self.kind]
        out = {"kind": self.kind}
        if self.name is not None:
            out["name"] = self.name
        for key in required + optional:
            out[key] = getattr(self, key)
        return out


@dataclass(frozen=True)
class ModelConfig:
    name: str
    input: tuple
    classes: int
    seed: int = 0
    layers: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {
            "name": self.name,
            "input": list(self.input),
            "classes": self.classes,
            "seed": self.seed,
            "layers": [node.to_dict() for node in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


_NODE_FIELDS = {f.name: f for f in fields(LayerNode)}
_TOP_KEYS = {"name", "input", "classes", "seed", "layers"}


def _check_int(value, key, where, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}", where)
    return value


def node_from_dict(data, index=None):
    if not isinstance(data, dict):
        raise ConfigError("layer entry must be an object", index)
    kind = data.get("kind")
    if kind not in KIND_KEYS:
        raise ConfigError(f"unknown layer kind {kind!r}", index)
    required, optional = KIND_KEYS[kind]
    allowed = {"kind", "name", *required, *optional}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) for {kind}: {', '.join(unknown)}", index)
    missing = [key for key in required if key not in data]
    if missing:
        raise ConfigError(f"{kind} is missing required key(s): {', '.join(missing)}", index)
    kwargs = {}
    for key, value in data.items():
        if key in ("kind", "name"):
            continue
        if key in ("bias", "se"):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be true or false, got {value!r}", index)
        else:
            _check_int(value, key, index, minimum=0 if key == "pad" else 1)
        kwargs[key] = value
    return LayerNode(kind=kind, name=data.get("name"), **kwargs)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for key in ("name", "input", "classes", "layers"):
        if key not in data:
            raise ConfigError(f"missing top-level key {key!r}")
    inp = data["input"]
    if not isinstance(inp, list) or len(inp) != 3:
        raise ConfigError(f"input must be [c, h, w], got {inp!r}")
    for v in inp:
        _check_int(v, "input", None)
    _check_int(data["classes"], "classes", None)
    seed = data.get("seed", 0)
    _check_int(seed, "seed", None, minimum=0)
    if not isinstance(data["layers"], list):
        raise ConfigError("layers must be a list")
    layers = tuple(node_from_dict(entry, i) for i, entry in enumerate(data["layers"]))
    config = ModelConfig(str(data["name"]), tuple(inp), data["classes"], seed, layers)
    validate(config)
    return config


def loads_config(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def load_config(path):
    return loads_config(Path(path).read_text())


def bottleneck_parts(node):
    """Expand a (tied) bottleneck node into (main branch nodes, shortcut node or None).

    Main branch: 1x1 conv reduce, relu, 3x3 conv (TBC when tied), relu, 1x1 conv
    expand, optional TiedSE.  The shortcut is a 1x1 standard conv when the
    channel count or stride changes, otherwise identity.  The block ends with
    residual add and relu.
    """
    tied = node.kind == "tied_bottleneck"
    b = node.blocks if tied else 1
    planes, out = node.planes, node.expansion * node.planes
    mid = (LayerNode("tbc", c_i=planes, c_o=planes, k=3, stride=node.stride, pad=1, blocks=b, bias=node.bias)
           if tied else
           LayerNode("conv", c_i=planes, c_o=planes, k=3, stride=node.stride, pad=1, bias=node.bias))
    main = [
        LayerNode("conv", c_i=node.c_i, c_o=planes, k=1, bias=node.bias),
        LayerNode("relu"),
        mid,
        LayerNode("relu"),
        LayerNode("conv", c_i=planes, c_o=out, k=1, bias=node.bias),
    ]
    if node.se:
        main.append(LayerNode("tied_se", c=out, r=node.r, blocks=b, bias=node.bias))
    shortcut = None
    if node.c_i != out or node.stride != 1:
        shortcut = LayerNode("conv", c_i=node.c_i, c_o=out, k=1, stride=node.stride, bias=node.bias)
    return main, shortcut


def tied_bottleneck(c_in, planes, blocks, stride=1, use_tied_se=False, r=4, expansion=4, bias=True):
    """Node for a residual bottleneck whose 3x3 stage is a TBC with ``blocks`` blocks."""
    node = LayerNode("tied_bottleneck", c_i=c_in, planes=planes, blocks=blocks, stride=stride,
                     se=use_tied_se, r=r, expansion=expansion, bias=bias)
    check_node(node, None)
    return node


def check_node(node, index):
    """Validate the node's own legality rules (divisibility etc.)."""
    try:
        if node.kind in CONV_KINDS:
            node.conv_spec()
        elif node.kind in ("fc", "tfc"):
            b = node.blocks if node.kind == "tfc" else 1
            if node.c_i % b or node.c_o % b:
                raise ShapeError(f"c_i={node.c_i} and c_o={node.c_o} must be divisible by blocks B={b}")
        elif node.kind == "tied_se":
            if node.c % (node.r * node.blocks):
                raise ShapeError(f"tied_se needs c % (r*B) == 0, got c={node.c}, r={node.r}, B={node.blocks}")
        elif node.kind in ("bottleneck", "tied_bottleneck"):
            if node.kind == "tied_bottleneck" and node.planes % node.blocks:
                raise ShapeError(f"planes={node.planes} not divisible by blocks B={node.blocks}")
            main, shortcut = bottleneck_parts(node)
            for sub in main + ([shortcut] if shortcut else []):
                check_node(sub, None)
    except ShapeError as exc:
        raise ConfigError(f"{node.kind}: {exc}", index) from None


def node_out_shape(node, shape, index=None):
    """Output shape of ``node`` for a per-sample input shape (c, h, w) or (features,)."""
    check_node(node, index)
    kind = node.kind
    if kind in ("relu",):
        return shape
    if kind == "flatten":
        out = 1
        for d in shape:
            out *= d
        return (out,)
    if kind in ("fc", "tfc"):
        if len(shape) != 1 or shape[0] != node.c_i:
            raise ConfigError(f"{kind} expects a vector of {node.c_i} features, got shape {shape}", index)
        return (node.c_o,)
    if len(shape) != 3:
        raise ConfigError(f"{kind} expects a (c, h, w) feature map, got shape {shape}", index)
    c, h, w = shape
    if kind == "gap":
        return (c,)
    if kind == "tied_se":
        if c != node.c:
            raise ConfigError(f"tied_se expects {node.c} channels, got {c}", index)
        return shape
    if kind in CONV_KINDS:
        if c != node.c_i:
            raise ConfigError(f"{kind} expects c_i={node.c_i} channels, got {c}", index)
        try:
            return (node.c_o, conv_out_size(h, node.k, node.stride, node.pad),
                    conv_out_size(w, node.k, node.stride, node.pad))
        except ShapeError as exc:
            raise ConfigError(f"{kind}: {exc}", index) from None
    if kind in ("bottleneck", "tied_bottleneck"):
        if c != node.c_i:
            raise ConfigError(f"{kind} expects c_i={node.c_i} channels, got {c}", index)
        main, shortcut = bottleneck_parts(node)
        out = shape
        for sub in main:
            out = node_out_shape(sub, out, index)
        if shortcut is not None:
            short = node_out_shape(shortcut, shape, index)
            if short != out:
                raise ConfigError(f"{kind}: shortcut shape {short} != branch shape {out}", index)
        return out
    raise ConfigError(f"unknown layer kind {kind!r}", index)


def infer_shapes(config):
    """Per-layer per-sample output shapes; raises ConfigError naming the first bad layer."""
    shape = tuple(config.input)
    shapes = []
    for i, node in enumerate(config.layers):
        shape = node_out_shape(node, shape, i)
        shapes.append(shape)
    return shapes


def validate(config):
    infer_shapes(config)
    return config


_TIED_KIND = {"conv": "tbc", "gconv": "tgc", "fc": "tfc", "bottleneck": "tied_bottleneck"}


def tied_twin(config, blocks, keep=(), name=None):
    """Copy of ``config`` with conv->tbc, gconv->tgc, fc->tfc, bottleneck->tied_bottleneck.

    Layers listed in ``keep`` (by index) stay untied; TiedSE nodes take the new
    block count.  ``blocks == 1`` returns the config unchanged.
    """
    if blocks == 1:
        return config
    layers = []
    for i, node in enumerate(config.layers):
        if i in keep:
            layers.append(node)
        elif node.kind in _TIED_KIND:
            layers.append(replace(node, kind=_TIED_KIND[node.kind], blocks=blocks))
        elif node.kind == "tied_se":
            layers.append(replace(node, blocks=blocks))
        else:
            layers.append(node)
    twin = ModelConfig(name or f"{config.name}_tied_b{blocks}", config.input, config.classes,
                       config.seed, tuple(layers))
    return validate(twin)


TOY_STEM = 0
TOY_HEAD = 9


def toy_untied():
    """Untied toy classifier for 1x16x16 inputs and 2 classes (widths 16 -> 32 -> 64)."""
    layers = (
        LayerNode("conv", name="stem", c_i=1, c_o=16, k=4, stride=4),
        LayerNode("relu"),
        LayerNode("conv", name="conv1", c_i=16, c_o=32, k=3, pad=1),
        LayerNode("relu"),
        LayerNode("conv", name="conv2", c_i=32, c_o=64, k=3),
        LayerNode("relu"),
        LayerNode("flatten"),
        LayerNode("fc", name="fc1", c_i=256, c_o=32),
        LayerNode("relu"),
        LayerNode("fc", name="head", c_i=32, c_o=2),
    )
    return validate(ModelConfig("toy_untied", (1, 16, 16), 2, 0, layers))


def make_toy_pair(blocks):
    """(tied, untied) toy classifiers differing only in conv1/conv2/fc1 being tied.

    The single-channel stem and the 2-way head stay untied in both: one input
    channel cannot be split into blocks, and two logits cannot be split into 4.
    """
    if blocks not in (1, 2, 4):
        raise ConfigError(f"toy pair supports B in (1, 2, 4), got {blocks}")
    untied = toy_untied()
    if blocks == 1:
        return untied, untied
    return tied_twin(untied, blocks, keep=(TOY_STEM, TOY_HEAD), name="toy_tied"), untied


def tied_se_demo():
    layers = (
        LayerNode("conv", name="stem", c_i=1, c_o=16, k=4, stride=4),
        LayerNode("relu"),
        tied_bottleneck(16, 8, 2, stride=1, use_tied_se=True, r=4),
        LayerNode("flatten"),
        LayerNode("tfc", name="fc1", c_i=512, c_o=32, blocks=2),
        LayerNode("relu"),
        LayerNode("fc", name="head", c_i=32, c_o=2),
    )
    return validate(ModelConfig("tied_se_demo", (1, 16, 16), 2, 0, layers))
