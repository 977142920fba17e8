"""Parameter and multiply-accumulate (MAC) counts per layer and per model.

Weight counts follow the filter shapes: standard k^2*c_i*c_o, group conv /G,
TBC /B^2, TGC /(G*B), FC c_i*c_o, TFC /B^2.  Biases are counted separately and
only when present; a tied bias has c_o/B entries.  MACs exclude bias,
activations, pooling and the residual add.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

from .config import CONV_KINDS, LayerNode, bottleneck_parts, check_node, infer_shapes, node_out_shape
from .errors import ShapeError
from .nn import ConvSpec


def _conv_divisors(spec):
    if spec.groups > 1:
        return spec.groups * spec.blocks, spec.groups
    return spec.blocks * spec.blocks, spec.blocks


def _spec_params(spec, include_bias):
    weight_div, _ = _conv_divisors(spec)
    weights = spec.k * spec.k * spec.c_i * spec.c_o // weight_div
    return weights + (spec.c_o // spec.blocks if spec.has_bias and include_bias else 0)


def param_count(spec, include_bias=True):
    """Exact parameter count of a ConvSpec or LayerNode.

    Biases count only when the layer has one and ``include_bias`` is set.
    """
    if isinstance(spec, ConvSpec):
        return _spec_params(spec, include_bias)
    node = spec
    check_node(node, None)
    kind = node.kind
    with_bias = node.bias and include_bias
    if kind in CONV_KINDS:
        return _spec_params(node.conv_spec(), include_bias)
    if kind in ("fc", "tfc"):
        b = node.blocks if kind == "tfc" else 1
        return node.c_i * node.c_o // (b * b) + (node.c_o // b if with_bias else 0)
    if kind == "tied_se":
        b, hidden = node.blocks, node.c // node.r
        weights = 2 * node.c * hidden // (b * b)
        return weights + ((hidden + node.c) // b if with_bias else 0)
    if kind in ("bottleneck", "tied_bottleneck"):
        main, shortcut = bottleneck_parts(node)
        return sum(param_count(sub, include_bias) for sub in main + ([shortcut] if shortcut else []))
    return 0


def _spec_macs(spec, n, oh, ow):
    _, mac_div = _conv_divisors(spec)
    return n * spec.k * spec.k * spec.c_i * spec.c_o * oh * ow // mac_div


def macs_count(spec, input_shape):
    """Exact MAC count for a ConvSpec or LayerNode on a batched input shape.

    ``input_shape`` is (n, c, h, w) for feature maps or (n, features) for vectors.
    """
    n, per_sample = input_shape[0], tuple(input_shape[1:])
    if isinstance(spec, ConvSpec):
        if len(per_sample) != 3 or per_sample[0] != spec.c_i:
            raise ShapeError(f"conv expects (n, {spec.c_i}, h, w), got {tuple(input_shape)}")
        oh, ow = spec.out_hw(per_sample[1], per_sample[2])
        return _spec_macs(spec, n, oh, ow)
    node = spec
    out = node_out_shape(node, per_sample)
    kind = node.kind
    if kind in CONV_KINDS:
        return _spec_macs(node.conv_spec(), n, out[1], out[2])
    if kind in ("fc", "tfc"):
        b = node.blocks if kind == "tfc" else 1
        return n * node.c_i * node.c_o // b
    if kind == "tied_se":
        return n * 2 * node.c * (node.c // node.r) // node.blocks
    if kind in ("bottleneck", "tied_bottleneck"):
        main, shortcut = bottleneck_parts(node)
        total, shape = 0, per_sample
        for sub in main:
            total += macs_count(sub, (n, *shape))
            shape = node_out_shape(sub, shape)
        if shortcut is not None:
            total += macs_count(shortcut, input_shape)
        return total
    return 0


def _ratio(a, b):
    return None if b == 0 else a / b


@dataclass
class CountRow:
    name: str
    kind: str
    params: int
    macs: int
    out_shape: tuple
    weights: int = 0
    weight_ratio: Optional[float] = None
    mac_ratio: Optional[float] = None


@dataclass
class CountReport:
    model: str
    input_shape: tuple
    rows: list = field(default_factory=list)
    baseline: Optional[str] = None
    total_ratio: tuple = (None, None)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_weights(self):
        return sum(r.weights for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    def _table(self, flops):
        scale = 2 if flops else 1
        header = ["name", "kind", "params", "flops" if flops else "macs", "out_shape"]
        if self.baseline is not None:
            header += ["weight_ratio", "flop_ratio" if flops else "mac_ratio"]
        body = []
        total = CountRow("total", "total", self.total_params, self.total_macs, (),
                         self.total_weights, *self.total_ratio)
        for row in self.rows + [total]:
            cells = [row.name, row.kind, str(row.params), str(row.macs * scale),
                     "x".join(str(d) for d in row.out_shape)]
            if self.baseline is not None:
                cells += [_fmt_ratio(row.weight_ratio), _fmt_ratio(row.mac_ratio)]
            body.append(cells)
        return header, body

    def to_csv(self, flops=False):
        header, body = self._table(flops)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buf.getvalue()

    def to_text(self, flops=False):
        header, body = self._table(flops)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = [f"model: {self.model}  input: {'x'.join(map(str, self.input_shape))}"]
        if self.baseline is not None:
            lines[0] += f"  baseline: {self.baseline}"
        for i, cells in enumerate([header] + body):
            if i == len(body):
                lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
            lines.append("  ".join(c.ljust(w) if j < 2 else c.rjust(w)
                                   for j, (c, w) in enumerate(zip(cells, widths))))
        return "\n".join(lines) + "\n"


def _fmt_ratio(value):
    return "" if value is None else f"{value:.6g}"


def _rows(config, input_shape):
    n = input_shape[0]
    shapes = infer_shapes(config)
    rows, shape = [], tuple(input_shape[1:])
    for i, (node, out) in enumerate(zip(config.layers, shapes)):
        rows.append(CountRow(node.name or f"{node.kind}{i}", node.kind, param_count(node),
                             macs_count(node, (n, *shape)), (n, *out),
                             param_count(node, include_bias=False)))
        shape = out
    return rows


def model_report(config, input_shape=None, baseline=None):
    """Per-layer and total counts; with a baseline config, tied/untied ratios.

    Ratios compare bias-free weight counts and MACs (tied / baseline).  Per-row
    ratios are filled when both models have the same number of layers; the
    total ratio is always reported.  A row whose baseline count is zero gets
    no ratio.
    """
    if input_shape is None:
        input_shape = (1, *config.input)
    input_shape = tuple(input_shape)
    if tuple(input_shape[1:]) != tuple(config.input):
        raise ShapeError(f"input shape {input_shape} does not match config input {config.input}")
    report = CountReport(config.name, input_shape, _rows(config, input_shape))
    if baseline is not None:
        base_rows = _rows(baseline, input_shape)
        report.baseline = baseline.name
        if len(base_rows) == len(report.rows):
            for row, base in zip(report.rows, base_rows):
                row.weight_ratio = _ratio(row.weights, base.weights)
                row.mac_ratio = _ratio(row.macs, base.macs)
        report.total_ratio = (
            _ratio(report.total_weights, sum(r.weights for r in base_rows)),
            _ratio(report.total_macs, sum(r.macs for r in base_rows)),
        )
    return report


def weight_params(nodes, kinds=("conv", "gconv", "tbc", "tgc", "fc", "tfc"), include_bias=False):
    """Sum of parameter counts over nodes of the given kinds (bias-free by default)."""
    return sum(param_count(n, include_bias) for n in nodes
               if isinstance(n, LayerNode) and n.kind in kinds)
