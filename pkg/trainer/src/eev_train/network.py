"""Binarized network assembly and the exact batch-norm statistics pass."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import (BinAct, BinMaskConv2d, BinMaskLinear, OutputScalarBN,
                     QuantizeInput)


@dataclass
class ConvSpec:
    out_channels: int
    kernel: tuple
    stride: tuple
    padding: tuple


ARCHS = {
    # hidden dense widths only; the classifier layer is appended
    "mlp": {"conv": [], "dense": [500, 300, 200, 100]},
    "mlp-small": {"conv": [], "dense": [128, 64]},
    "conv-small": {
        "conv": [ConvSpec(16, (4, 4), (2, 2), (1, 1)),
                 ConvSpec(32, (4, 4), (2, 2), (1, 1))],
        "dense": [100],
    },
    "conv-large": {
        "conv": [ConvSpec(32, (3, 3), (1, 1), (1, 1)),
                 ConvSpec(32, (4, 4), (2, 2), (1, 1)),
                 ConvSpec(64, (3, 3), (1, 1), (1, 1)),
                 ConvSpec(64, (4, 4), (2, 2), (1, 1))],
        "dense": [512, 512],
    },
    # desk-scale convs for offline runs
    "conv-tiny": {
        "conv": [ConvSpec(4, (3, 3), (2, 2), (1, 1)),
                 ConvSpec(8, (3, 3), (2, 2), (1, 1))],
        "dense": [32],
    },
    # one conv + wide fc: the fc layer carries the large, CBD-responsive
    # cardinality bounds, so bound-decay effects are visible at desk scale
    "conv-bench": {
        "conv": [ConvSpec(12, (5, 5), (2, 2), (2, 2))],
        "dense": [96],
    },
}


class Block(nn.Module):
    def __init__(self, kind, layer, bn, act):
        super().__init__()
        self.kind = kind
        self.layer = layer
        self.bn = bn
        self.act = act

    def forward(self, x):
        z = self.layer(x)
        z = self.bn(z)
        return self.act(z) if self.act is not None else z


class BnnNet(nn.Module):
    """Quantize -> [linear/conv + BN + sign]* -> linear + scalar BN.

    Inputs are (N, C, H, W) in [0, 1]. Shapes after each conv are tracked so
    the exporter can reorder flattened features into the verifier's
    height-width-channel layout.
    """

    def __init__(self, input_shape, quant_step, conv_specs, dense_units,
                 num_classes, init_std=0.01, bn_eps=1e-5):
        super().__init__()
        h, w, c = input_shape
        self.input_shape = (h, w, c)
        self.quantize = QuantizeInput(quant_step)
        self.conv_out_shape = None  # (C, H, W) just before flattening
        blocks = []
        shape = (c, h, w)
        for spec in conv_specs:
            layer = BinMaskConv2d(shape[0], spec.out_channels, spec.kernel,
                                  spec.stride, spec.padding,
                                  init_std=init_std)
            bn = nn.BatchNorm2d(spec.out_channels, eps=bn_eps)
            blocks.append(Block("conv", layer, bn, BinAct()))
            oh = (shape[1] + 2 * spec.padding[0] - spec.kernel[0]) \
                // spec.stride[0] + 1
            ow = (shape[2] + 2 * spec.padding[1] - spec.kernel[1]) \
                // spec.stride[1] + 1
            shape = (spec.out_channels, oh, ow)
        if conv_specs:
            self.conv_out_shape = shape
        size = shape[0] * shape[1] * shape[2]
        for units in dense_units:
            blocks.append(Block(
                "dense", BinMaskLinear(size, units, init_std=init_std),
                nn.BatchNorm1d(units, eps=bn_eps), BinAct()))
            size = units
        blocks.append(Block(
            "dense", BinMaskLinear(size, num_classes, init_std=init_std),
            OutputScalarBN(num_classes, eps=bn_eps), None))
        self.blocks = nn.ModuleList(blocks)

    @property
    def quant_step(self):
        return self.quantize.step

    def forward(self, x):
        # the first linear map runs on integer grid indices; the grid step is
        # applied once afterwards, so integer cancellations stay exact
        x = self.quantize.indices(x)
        for i, block in enumerate(self.blocks):
            if block.kind == "dense" and x.dim() > 2:
                x = x.flatten(1)
            z = block.layer(x)
            if i == 0:
                z = z * self.quantize.step
            z = block.bn(z)
            x = block.act(z) if block.act is not None else z
        return x

    @torch.no_grad()
    def pre_bn_values(self, x, block_index):
        """Linear output feeding the given block's batch norm (eval path)."""
        x = self.quantize.indices(x)
        for i, block in enumerate(self.blocks):
            if block.kind == "dense" and x.dim() > 2:
                x = x.flatten(1)
            z = block.layer(x)
            if i == 0:
                z = z * self.quantize.step
            if i == block_index:
                return z
            z = block.bn(z)
            x = block.act(z) if block.act is not None else z
        raise IndexError(block_index)


@torch.no_grad()
def recompute_bn_stats(net: BnnNet, images: torch.Tensor, batch=1024):
    """Replace every BN's running statistics with exact full-dataset moments.

    Walks blocks front to back (later statistics depend on earlier ones) and
    uses population variance. Hidden BNs get per-channel moments; the output
    layer gets per-unit means and one variance over the whole feature map.
    """
    net.eval()
    for bi, block in enumerate(net.blocks):
        total = 0
        s1 = None
        s2 = None
        for start in range(0, len(images), batch):
            z = net.pre_bn_values(images[start:start + batch], bi).double()
            if z.dim() == 4:  # (N, C, H, W): reduce over N, H, W
                red = (0, 2, 3)
                count = z.shape[0] * z.shape[2] * z.shape[3]
            else:
                red = (0,)
                count = z.shape[0]
            cur1 = z.sum(dim=red)
            cur2 = z.pow(2).sum(dim=red)
            s1 = cur1 if s1 is None else s1 + cur1
            s2 = cur2 if s2 is None else s2 + cur2
            total += count
        mean = s1 / total
        var = s2 / total - mean ** 2
        var = torch.clamp(var, min=0.0)
        bn = block.bn
        if isinstance(bn, OutputScalarBN):
            bn.running_mean.copy_(mean.to(bn.running_mean.dtype))
            # scalar variance over the whole feature map: E[z^2] - E[z]^2
            gm = (s1.sum() / (total * len(mean)))
            gv = (s2.sum() / (total * len(mean))) - gm ** 2
            bn.running_var.fill_(float(max(gv, 0.0)))
        else:
            bn.running_mean.copy_(mean.to(bn.running_mean.dtype))
            bn.running_var.copy_(var.to(bn.running_var.dtype))


def build_model(arch: str, input_shape, quant_step, num_classes=10,
                init_std=0.01) -> BnnNet:
    """Build a named architecture; the whole net runs in float64 so the
    eval-mode forward agrees with the verifier's exact inference."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r} "
                         f"(have {sorted(ARCHS)})")
    spec = ARCHS[arch]
    net = BnnNet(input_shape, quant_step, spec["conv"], spec["dense"],
                 num_classes, init_std=init_std)
    return net.double()
