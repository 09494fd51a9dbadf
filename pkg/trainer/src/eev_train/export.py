"""Export trained networks to the verifier's JSON model format.

The verifier flattens feature maps height-then-width-then-channel, while
torch flattens channel-first; dense weights that consume a conv output are
column-permuted accordingly. Everything else is a direct dump of the sign
weights and batch-norm statistics.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .layers import BinMaskConv2d, OutputScalarBN
from .network import BnnNet


def _hwc_to_chw_columns(c, h, w):
    """perm[f] = torch column index for verifier flat index f."""
    perm = np.empty(h * w * c, dtype=np.int64)
    f = 0
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                perm[f] = ch * h * w + y * w + x
                f += 1
    return perm


def to_model_dict(net: BnnNet) -> dict:
    h, w, c = net.input_shape
    layers = []
    pending_perm = None
    if not any(isinstance(b.layer, BinMaskConv2d) for b in net.blocks):
        if c != 1:
            pending_perm = _hwc_to_chw_columns(c, h, w)
    for block in net.blocks:
        layer = block.layer
        bn = block.bn
        if isinstance(layer, BinMaskConv2d):
            wsign = layer.exported_sign().cpu().numpy()
            entry = {
                "kind": "conv",
                "weight_sign": wsign.tolist(),
                "conv": {
                    "kernel": [wsign.shape[2], wsign.shape[3]],
                    "stride": list(layer.stride),
                    "padding": list(layer.padding),
                },
                "is_output": False,
                "bn": {
                    "gamma": bn.weight.detach().double().tolist(),
                    "beta": bn.bias.detach().double().tolist(),
                    "mean": bn.running_mean.detach().double().tolist(),
                    "var": bn.running_var.detach().double().tolist(),
                    "eps": float(bn.eps),
                },
            }
            layers.append(entry)
        else:
            wsign = layer.exported_sign().cpu().numpy()
            if pending_perm is None and net.conv_out_shape is not None \
                    and not any(l["kind"] == "dense" for l in layers):
                cc, hh, ww = net.conv_out_shape
                pending_perm = _hwc_to_chw_columns(cc, hh, ww)
            if pending_perm is not None:
                wsign = wsign[:, pending_perm]
                pending_perm = None
            is_output = isinstance(bn, OutputScalarBN)
            if is_output:
                bn_entry = {
                    "gamma": [float(bn.gamma.detach().double())],
                    "beta": bn.beta.detach().double().tolist(),
                    "mean": bn.running_mean.detach().double().tolist(),
                    "var": [float(bn.running_var.detach().double())],
                    "eps": float(bn.eps),
                }
            else:
                bn_entry = {
                    "gamma": bn.weight.detach().double().tolist(),
                    "beta": bn.bias.detach().double().tolist(),
                    "mean": bn.running_mean.detach().double().tolist(),
                    "var": bn.running_var.detach().double().tolist(),
                    "eps": float(bn.eps),
                }
            layers.append({
                "kind": "dense",
                "weight_sign": wsign.tolist(),
                "is_output": is_output,
                "bn": bn_entry,
            })
    return {
        "input_shape": [h, w, c],
        "quant_step": float(net.quant_step),
        "layers": layers,
    }


def save_model(net: BnnNet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_model_dict(net), fh, indent=1, sort_keys=True)
        fh.write("\n")


@torch.no_grad()
def predictions(net: BnnNet, images: torch.Tensor, batch=1024) -> np.ndarray:
    """Eval-mode argmax classes (the net runs in float64 throughout)."""
    was_training = net.training
    net.eval()
    out = []
    for start in range(0, len(images), batch):
        logits = net(images[start:start + batch].double())
        out.append(logits.argmax(dim=1).cpu().numpy())
    if was_training:
        net.train()
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


@torch.no_grad()
def accuracy(net: BnnNet, images: torch.Tensor, labels: torch.Tensor) -> float:
    preds = predictions(net, images)
    return float((preds == labels.cpu().numpy()).mean())
