"""Tied block convolution kernels with untied oracles, gradients, accounting and a toy trainer."""

from .accounting import CountReport, macs_count, model_report, param_count
from .config import LayerNode, ModelConfig, load_config, make_toy_pair, tied_bottleneck
from .errors import ConfigError, InputError, ShapeError
from .model import Model, build
from .nn import ConvSpec, ConvWeights, conv2d, fully_connected, global_avg_pool, group_conv2d
from .tensor import Rng, im2col, matmul
from .tied import (
    TfcWeights,
    TiedConvWeights,
    TiedSeSpec,
    expand_tied_to_untied,
    tbc_forward_direct,
    tbc_forward_fast,
    tfc_forward,
    tgc_forward,
    tied_se_forward,
)

__version__ = "0.1.0"
