"""Cardinality bounds of the verifier's layer constraints.

Each hidden unit turns into a reified counting constraint
`activation <-> (sum of operand literals <= bound)`; the bound in
less-or-equal normal form is

    k_eff > 0:  (#positive taps) * R + b / k_eff
    k_eff < 0:  (#negative taps) * R - b / k_eff

with k_eff = k * s on the pixel layer (else k), R the per-tap operand count
(the full grid width on the pixel layer, 1 elsewhere) and (k, b) the folded
batch-norm affine. Two implementations live here: a differentiable torch
version feeding the bound-decay loss, and an exact rational version working
on the exported JSON dict, used for reporting and for the golden cross-check
against the verifier's encoding.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import torch

from .layers import BinMaskConv2d, BinMaskLinear
from .network import BnnNet


def grid_max(step: float) -> int:
    """Quantization of 1.0: round-half-away of 1/step (exact)."""
    t = Fraction(1) / Fraction(float(step))
    return int((2 * t + 1) // 2)


def _tap_counts(block, in_shape):
    """(pos, neg) tap counts per unit; conv counts honor padding."""
    layer = block.layer
    if isinstance(layer, BinMaskLinear):
        w = layer.effective_weight().detach()
        return (w > 0).sum(dim=1).double(), (w < 0).sum(dim=1).double()
    w = layer.effective_weight().detach()
    ones = torch.ones((1, *in_shape), dtype=w.dtype)
    pos = torch.nn.functional.conv2d(ones, (w > 0).to(w.dtype),
                                     stride=layer.stride,
                                     padding=layer.padding)[0]
    neg = torch.nn.functional.conv2d(ones, (w < 0).to(w.dtype),
                                     stride=layer.stride,
                                     padding=layer.padding)[0]
    return pos, neg  # (C, H, W), broadcast against per-channel bn constants


def cbd_loss(net: BnnNet, tau: float, eta: float) -> torch.Tensor:
    """Penalty on normalized bounds exceeding tau, summed over hidden units.

    Gradients flow through the batch-norm parameters (the k and b constants);
    tap counts are step functions of the weights and act as constants.
    """
    if eta == 0:
        return torch.zeros((), dtype=torch.float64)
    h, w, c = net.input_shape
    shape = (c, h, w)
    total = None
    step = net.quant_step
    vmax = grid_max(step)
    for bi, block in enumerate(net.blocks):
        if block.act is None:
            break  # output layer has no activation constraint
        bn = block.bn
        k = bn.weight / torch.sqrt(bn.running_var + bn.eps)
        b = bn.bias - k * bn.running_mean
        k_eff = k * step if bi == 0 else k
        reach = vmax if bi == 0 else 1
        pos, neg = _tap_counts(block, shape)
        if isinstance(block.layer, BinMaskConv2d):
            kk = k_eff[:, None, None]
            bb = b[:, None, None]
            oh = (shape[1] + 2 * block.layer.padding[0]
                  - block.layer.weight.shape[2]) // block.layer.stride[0] + 1
            ow = (shape[2] + 2 * block.layer.padding[1]
                  - block.layer.weight.shape[3]) // block.layer.stride[1] + 1
            shape = (block.layer.weight.shape[0], oh, ow)
        else:
            kk = k_eff
            bb = b
            shape = (block.layer.weight.shape[0], 1, 1)
        safe = kk.abs() > 1e-12
        ratio = torch.where(safe, bb / torch.where(safe, kk,
                                                   torch.ones_like(kk)),
                            torch.zeros_like(bb))
        bound = torch.where(kk > 0, pos * reach + ratio,
                            neg * reach - ratio)
        term = torch.clamp(bound - tau, min=0)
        term = torch.where(safe, term, torch.zeros_like(term)).sum()
        total = term if total is None else total + term
    if total is None:
        return torch.zeros((), dtype=torch.float64)
    return eta * total


# --- exact bounds from the exported JSON dict ---------------------------------

def _conv_unit_counts(wsign, in_shape, stride, padding):
    """Per-unit (pos, neg) valid-tap counts for a conv layer, HWC order."""
    h, w, c = in_shape
    oc, ic, kh, kw = wsign.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    pos = np.zeros((oh, ow, oc), dtype=np.int64)
    neg = np.zeros((oh, ow, oc), dtype=np.int64)
    pos_k = (wsign > 0).sum(axis=1)  # (oc, kh, kw)
    neg_k = (wsign < 0).sum(axis=1)
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kh):
                iy = oy * sh - ph + ky
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * sw - pw + kx
                    if 0 <= ix < w:
                        pos[oy, ox, :] += pos_k[:, ky, kx]
                        neg[oy, ox, :] += neg_k[:, ky, kx]
    return pos.reshape(-1), neg.reshape(-1), (oh, ow, oc)


def exact_bounds(model_dict: dict) -> list:
    """Integer <=-form bounds per hidden layer from an exported model file.

    Mirrors the verifier's encoding rule exactly (rational arithmetic,
    ceiling/floor by the sign of the scaled batch-norm slope; full input
    grid on the pixel layer). Entries are None for units whose constraint
    folds to a constant (bound outside [0, n-1]) or whose slope is zero.
    """
    step = Fraction(float(model_dict["quant_step"]))
    vmax = grid_max(model_dict["quant_step"])
    shape = tuple(model_dict["input_shape"])
    out = []
    for li, layer in enumerate(model_dict["layers"]):
        if layer.get("is_output"):
            break
        bn = layer["bn"]
        wsign = np.asarray(layer["weight_sign"], dtype=np.int64)
        if layer["kind"] == "conv":
            pos, neg, oshape = _conv_unit_counts(
                wsign, shape, tuple(layer["conv"]["stride"]),
                tuple(layer["conv"]["padding"]))
            nch = wsign.shape[0]
            ch_of = lambda u: u % nch
            shape = oshape
        else:
            pos = (wsign > 0).sum(axis=1)
            neg = (wsign < 0).sum(axis=1)
            ch_of = lambda u: u
            shape = (1, 1, wsign.shape[0])
        reach = vmax if li == 0 else 1
        scale = step if li == 0 else Fraction(1)
        bounds = []
        for u in range(len(pos)):
            ch = ch_of(u)
            # derive the affine constants in float64 first, exactly as the
            # verifier does, then treat those floats as exact rationals
            k_float = float(bn["gamma"][ch]) / math.sqrt(
                float(bn["var"][ch]) + float(bn["eps"]))
            b_float = float(bn["beta"][ch]) - k_float * float(bn["mean"][ch])
            k_eff = Fraction(k_float) * scale
            b = Fraction(b_float)
            n = int(pos[u] + neg[u]) * reach
            if k_eff == 0:
                bounds.append(None)
                continue
            if k_eff > 0:
                bound = int(pos[u]) * reach + math.floor(b / k_eff)
            else:
                bound = int(neg[u]) * reach + math.floor(-b / k_eff)
            bounds.append(bound if 0 <= bound <= n - 1 else None)
        out.append(bounds)
    return out


def bound_stats(model_dict: dict) -> dict:
    """Mean and max surviving bound over all hidden units."""
    values = [b for layer in exact_bounds(model_dict) for b in layer
              if b is not None]
    if not values:
        return {"mean": 0.0, "max": 0, "count": 0}
    return {"mean": float(np.mean(values)), "max": int(max(values)),
            "count": len(values)}
