"""Binarized building blocks: masked sign weights, gradient-cancelled sign
activations, input quantization and the scalar-normalized output layer."""

from __future__ import annotations

import torch
from torch import nn


class _SignSTE(torch.autograd.Function):
    """sgn(x) in {-1, +1} with sgn(0) = +1; straight-through backward."""

    @staticmethod
    def forward(ctx, x):
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        return g


def sign_ste(x):
    return _SignSTE.apply(x)


class _BinActFn(torch.autograd.Function):
    """Activation (x >= 0) in {0, 1} with a gradient-cancelling backward.

    mode "tanh": g_r = (1 - tanh^2(alpha * r)) * g_q  (alpha=1 is plain tanh)
    mode "hard": g_r = g_q * 1_{|r| <= 1}             (hard-tanh window)
    """

    @staticmethod
    def forward(ctx, x, alpha, mode):
        ctx.save_for_backward(x)
        ctx.alpha = alpha
        ctx.mode = mode
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        if ctx.mode == "hard":
            window = (x.abs() <= 1).to(g.dtype)
        else:
            window = 1 - torch.tanh(ctx.alpha * x) ** 2
        return g * window, None, None


def grad_cancel_factor(r, alpha, mode="tanh"):
    """The backward window by itself (matches the activation's backward)."""
    if mode == "hard":
        return (r.abs() <= 1).to(r.dtype if torch.is_tensor(r)
                                 else torch.float64)
    return 1 - torch.tanh(alpha * r) ** 2


class BinAct(nn.Module):
    """Sign activation whose gradient window is set globally per epoch."""

    def __init__(self):
        super().__init__()
        self.alpha = 1.0
        self.mode = "tanh"

    def forward(self, x):
        return _BinActFn.apply(x, self.alpha, self.mode)


def set_grad_cancel(model, alpha=None, mode=None):
    for mod in model.modules():
        if isinstance(mod, BinAct):
            if alpha is not None:
                mod.alpha = float(alpha)
            if mode is not None:
                mod.mode = mode


class _QuantIndexFn(torch.autograd.Function):
    """Integer grid index of x, straight-through with the 1/step scale."""

    @staticmethod
    def forward(ctx, x, step):
        ctx.step = step
        return torch.floor(x.double() / step + 0.5).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        return g / ctx.step, None


class QuantizeInput(nn.Module):
    """Input grid quantization, round-half-away-from-zero, identity backward.

    Computed in float64 so the integer grid index agrees with the verifier's
    exact-rational rule on every realistic input. The network consumes the
    integer indices and applies the step scale after the first linear map,
    keeping integer cancellations exact in floating point.
    """

    def __init__(self, step: float):
        super().__init__()
        self.step = float(step)

    def forward(self, x):
        """Quantized real value (index * step), straight-through backward."""
        return _QuantIndexFn.apply(x, self.step) * self.step

    def indices(self, x):
        """Integer-valued grid indices with the 1/step gradient."""
        return _QuantIndexFn.apply(x, self.step)

    def grid(self, x):
        """Integer grid indices (no gradient), the verifier's input domain."""
        return torch.floor(x.double() / self.step + 0.5).long()


def _masked_sign(weight, mask):
    # sgn(W) * (sgn(M)+1)/2, both sign factors straight-through
    return sign_ste(weight) * (sign_ste(mask) + 1) * 0.5


class _TernaryGate(torch.autograd.Function):
    """Indicator |W| >= T, straight-through to W (ternary baseline mode)."""

    @staticmethod
    def forward(ctx, w, threshold):
        return (w.abs() >= threshold).to(w.dtype)

    @staticmethod
    def backward(ctx, g):
        return g, None


class BinMaskLinear(nn.Module):
    """Dense layer with sign weights gated by a trained binary mask.

    With ternary_threshold set, the trained mask is replaced by the ternary
    quantization baseline gate |W| >= T (the ablation comparison mode).
    """

    def __init__(self, in_features, out_features, init_std=0.01,
                 ternary_threshold=None):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features)
                                   * init_std)
        self.mask = nn.Parameter(torch.randn(out_features, in_features).abs()
                                 * init_std)
        self.ternary_threshold = ternary_threshold

    def effective_weight(self):
        if self.ternary_threshold is not None:
            return sign_ste(self.weight) * _TernaryGate.apply(
                self.weight, self.ternary_threshold)
        return _masked_sign(self.weight, self.mask)

    def forward(self, x):
        return nn.functional.linear(x, self.effective_weight())

    def exported_sign(self):
        """Integer weights in {-1, 0, 1} as the verifier sees them."""
        with torch.no_grad():
            return self.effective_weight().long()


class BinMaskConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, init_std=0.01, ternary_threshold=None):
        super().__init__()
        kh, kw = (kernel_size if isinstance(kernel_size, tuple)
                  else (kernel_size, kernel_size))
        self.stride = stride if isinstance(stride, tuple) else (stride, stride)
        self.padding = (padding if isinstance(padding, tuple)
                        else (padding, padding))
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kh, kw) * init_std)
        self.mask = nn.Parameter(
            torch.randn(out_channels, in_channels, kh, kw).abs() * init_std)
        self.ternary_threshold = ternary_threshold

    def effective_weight(self):
        if self.ternary_threshold is not None:
            return sign_ste(self.weight) * _TernaryGate.apply(
                self.weight, self.ternary_threshold)
        return _masked_sign(self.weight, self.mask)

    def forward(self, x):
        return nn.functional.conv2d(x, self.effective_weight(),
                                    stride=self.stride, padding=self.padding)

    def exported_sign(self):
        with torch.no_grad():
            return self.effective_weight().long()


def set_ternary_mode(model, threshold):
    """Switch every masked layer to the ternary-quantization baseline."""
    for mod in model.modules():
        if isinstance(mod, (BinMaskLinear, BinMaskConv2d)):
            mod.ternary_threshold = threshold


class OutputScalarBN(nn.Module):
    """Output batch norm with scalar variance/scale over the whole layer.

    Per-unit mean and shift, but a single variance statistic and a single
    scale parameter shared by all units, as the verifier's model format
    requires for the output layer.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = nn.Parameter(torch.ones(1))
        self.beta = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(1))

    def forward(self, x):
        if self.training:
            mean = x.mean(dim=0)
            var = (x - mean).pow(2).mean()  # over batch and units
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(
                    self.momentum * mean)
                self.running_var.mul_(1 - self.momentum).add_(
                    self.momentum * var)
        else:
            mean = self.running_mean
            var = self.running_var
        return self.gamma * (x - mean) / torch.sqrt(var + self.eps) + self.beta


def mask_decay_loss(model, coefficient: float):
    """Sparsification pressure: L2 decay on positive mask entries, or L1 on
    the latent weights when a layer runs in ternary baseline mode."""
    if coefficient == 0:
        return torch.zeros((), dtype=torch.float64)
    total = None
    for mod in model.modules():
        if isinstance(mod, (BinMaskLinear, BinMaskConv2d)):
            if mod.ternary_threshold is not None:
                term = coefficient * mod.weight.abs().sum()
            else:
                term = 0.5 * coefficient * torch.clamp(
                    mod.mask, min=0).pow(2).sum()
            total = term if total is None else total + term
    if total is None:
        return torch.zeros((), dtype=torch.float64)
    return total


def sparsity(model) -> float:
    """Fraction of zero entries in the exported sign weights."""
    zeros = 0
    total = 0
    for mod in model.modules():
        if isinstance(mod, (BinMaskLinear, BinMaskConv2d)):
            w = mod.exported_sign()
            zeros += int((w == 0).sum())
            total += w.numel()
    return zeros / total if total else 0.0
