"""Binarized network model format, loading/saving, and exact integer inference.

Weights take values in {-1, 0, +1}; hidden activations in {0, 1}. Each layer is
a linear map followed by a batch-norm affine and a sign activation. Inference
here is exact: hidden units compare integer dot products against integer
thresholds precomputed with rational arithmetic, so there is no floating-point
ambiguity at the decision boundary and the SAT encoding agrees with inference
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class ModelError(ValueError):
    """Base class for model file and validation problems."""


class ParseError(ModelError):
    """Malformed model file; message carries the JSON path."""


class ValidationError(ModelError):
    """Structurally valid file violating a model invariant; names the field."""


class ShapeError(ModelError):
    """Input/layer shape mismatch; names the offending layer."""


DEFAULT_BN_EPS = 1e-5


def round_half_away(t: Fraction) -> int:
    """Round to nearest integer, halves away from zero."""
    if t >= 0:
        return int((2 * t + 1) // 2)
    return -int((-2 * t + 1) // 2)


def quantize_value(x, step) -> int:
    """Map a real input in [0, 1] to its integer grid index."""
    return round_half_away(Fraction(float(x)) / Fraction(float(step)))


def grid_max(step) -> int:
    """Largest grid index, i.e. the quantization of 1.0."""
    return quantize_value(1.0, step)


def quantize_input(model: "BnnModel", x: np.ndarray) -> np.ndarray:
    """Quantize a real input tensor to integer grid indices, clipped to range."""
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.size != model.input_size:
        raise ShapeError(
            f"input has {flat.size} values, model expects {model.input_size}")
    vmax = model.grid_max
    out = np.empty(flat.size, dtype=np.int64)
    for i, v in enumerate(flat):
        out[i] = min(max(quantize_value(v, model.quant_step), 0), vmax)
    return out


@dataclass(eq=False)
class BnnLayer:
    """One linear-batchnorm-binarize block.

    weight_sign is (out, in) for dense layers and (out_c, in_c, kh, kw) for
    conv layers. Batch-norm vectors have one entry per output unit/channel,
    except on the output layer where gamma and var are scalars (length 1)
    shared by the whole feature map.
    """

    kind: str  # "dense" | "conv"
    weight_sign: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_eps: float = DEFAULT_BN_EPS
    is_output: bool = False
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    # Derived during model validation:
    in_shape: tuple[int, int, int] | None = field(default=None, compare=False)
    out_shape: tuple[int, int, int] | None = field(default=None, compare=False)

    @property
    def kernel(self) -> tuple[int, int]:
        if self.kind != "conv":
            raise ValueError("kernel is only defined for conv layers")
        return (self.weight_sign.shape[2], self.weight_sign.shape[3])

    @property
    def in_size(self) -> int:
        h, w, c = self.in_shape
        return h * w * c

    @property
    def out_size(self) -> int:
        h, w, c = self.out_shape
        return h * w * c

    @property
    def num_units(self) -> int:
        """Number of distinct BN channels (conv units share per-channel BN)."""
        return self.weight_sign.shape[0] if self.kind == "conv" else self.out_size

    def bn_index(self, unit: int) -> int:
        """BN channel index for a flat output unit (HWC layout, channel fastest)."""
        if self.kind == "dense":
            return unit
        return unit % self.weight_sign.shape[0]


@dataclass
class BnAffine:
    """Inference-time batch norm: x -> k*x + b."""

    k: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class BnnModel:
    layers: list[BnnLayer]
    input_shape: tuple[int, int, int]
    quant_step: float

    @property
    def input_size(self) -> int:
        h, w, c = self.input_shape
        return h * w * c

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_size

    @property
    def grid_max(self) -> int:
        return grid_max(self.quant_step)

    def __eq__(self, other):
        if not isinstance(other, BnnModel):
            return NotImplemented
        return model_to_dict(self) == model_to_dict(other)


def bn_to_affine(layer: BnnLayer) -> BnAffine:
    """Fold batch-norm statistics into an affine map k*x + b.

    k = gamma / sqrt(var + eps), b = beta - k * mean, in double precision.
    The derived floats are treated as exact rationals by every consumer, so
    rounding here is the single point where precision is fixed.
    """
    k = layer.bn_gamma / np.sqrt(layer.bn_var + layer.bn_eps)
    if layer.is_output:
        # Scalar gamma/var; mean and beta stay per-unit.
        b = layer.bn_beta - k[0] * layer.bn_mean
    else:
        b = layer.bn_beta - k * layer.bn_mean
    return BnAffine(k=np.asarray(k, dtype=np.float64),
                    b=np.asarray(b, dtype=np.float64))


def act_bound(k: float, b: float, scale: Fraction = Fraction(1)):
    """Integer decision rule for sign(k*scale*z + b) >= 0 over integer sums z.

    Returns ("ge", g) meaning act = (z >= g), ("le", f) meaning act = (z <= f),
    or ("const", bit) when k*scale == 0. Exact: k and b are taken as the
    rationals their float bit patterns denote.
    """
    kk = Fraction(float(k)) * scale
    if kk == 0:
        return ("const", bool(b >= 0))
    beta = Fraction(float(-b)) / kk
    if kk > 0:
        return ("ge", int(math.ceil(beta)))
    return ("le", int(math.floor(beta)))


def layer_pre_sums(layer: BnnLayer, x: np.ndarray) -> np.ndarray:
    """Integer pre-activation sums W_sign . x for one layer.

    x is the flat integer input (activations or quantized pixels, HWC order).
    Exact for any realistic size since values fit comfortably in int64.
    """
    if layer.kind == "dense":
        return layer.weight_sign.astype(np.int64) @ x.astype(np.int64)
    h, w, c = layer.in_shape
    oc, ic, kh, kw = layer.weight_sign.shape
    sh, sw = layer.stride
    ph, pw = layer.padding
    img = x.reshape(h, w, c).astype(np.int64)
    padded = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=np.int64)
    padded[ph:ph + h, pw:pw + w, :] = img
    oh, ow, _ = layer.out_shape
    out = np.zeros((oh, ow, oc), dtype=np.int64)
    wmat = layer.weight_sign.astype(np.int64)
    for oy in range(oh):
        for ox in range(ow):
            patch = padded[oy * sh:oy * sh + kh, ox * sw:ox * sw + kw, :]
            # patch is (kh, kw, ic); weights are (oc, ic, kh, kw)
            out[oy, ox, :] = np.einsum("oikl,kli->o", wmat, patch)
    return out.reshape(-1)


def unit_taps(layer: BnnLayer):
    """Yield (unit, [(flat_in_index, weight), ...]) for each output unit.

    Expands conv receptive fields into flat index/weight pairs, honoring
    stride and padding; taps falling on padding are omitted (they contribute
    the constant zero activation). Used by the SAT encoder and anywhere a
    per-unit view of the linear map is needed.
    """
    if layer.kind == "dense":
        for unit in range(layer.weight_sign.shape[0]):
            row = layer.weight_sign[unit]
            yield unit, [(j, int(row[j])) for j in np.flatnonzero(row)]
        return
    h, w, c = layer.in_shape
    oc, ic, kh, kw = layer.weight_sign.shape
    sh, sw = layer.stride
    ph, pw = layer.padding
    oh, ow, _ = layer.out_shape
    unit = 0
    for oy in range(oh):
        for ox in range(ow):
            for ch in range(oc):
                taps = []
                for ky in range(kh):
                    iy = oy * sh - ph + ky
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * sw - pw + kx
                        if ix < 0 or ix >= w:
                            continue
                        for ci in range(ic):
                            wgt = int(layer.weight_sign[ch, ci, ky, kx])
                            if wgt != 0:
                                taps.append(((iy * w + ix) * c + ci, wgt))
                yield unit, taps
                unit += 1


@dataclass
class Inference:
    """Exact forward pass: rational logits plus every hidden activation bit."""

    logits: list[Fraction]
    hidden: list[np.ndarray]  # one {0,1} int array per hidden layer

    @property
    def predicted(self) -> int:
        best = max(self.logits)
        return self.logits.index(best)

    def misclassifies(self, label: int) -> bool:
        """True iff some other class scores strictly higher than label."""
        ref = self.logits[label]
        return any(v > ref for i, v in enumerate(self.logits) if i != label)


def infer(model: BnnModel, qinput: np.ndarray) -> Inference:
    """Run the network exactly on an integer grid input.

    Hidden layers compare integer sums with integer thresholds derived by
    act_bound; the output layer returns exact rational scores. Also returns
    every hidden activation bit for encoder cross-checks.
    """
    x = np.asarray(qinput, dtype=np.int64).reshape(-1)
    if x.size != model.input_size:
        raise ShapeError(
            f"layer 0: input has {x.size} values, expected {model.input_size}")
    vmax = model.grid_max
    if x.min() < 0 or x.max() > vmax:
        raise ValidationError(f"quantized input out of range [0, {vmax}]")
    hidden = []
    logits = None
    for li, layer in enumerate(model.layers):
        scale = Fraction(float(model.quant_step)) if li == 0 else Fraction(1)
        aff = bn_to_affine(layer)
        z = layer_pre_sums(layer, x)
        if layer.is_output:
            kk = Fraction(float(aff.k[0])) * scale
            logits = [kk * int(z[u]) + Fraction(float(aff.b[u]))
                      for u in range(layer.out_size)]
        else:
            bits = np.zeros(layer.out_size, dtype=np.int64)
            for u in range(layer.out_size):
                ch = layer.bn_index(u)
                op, bound = act_bound(aff.k[ch], aff.b[ch], scale)
                if op == "ge":
                    bits[u] = 1 if z[u] >= bound else 0
                elif op == "le":
                    bits[u] = 1 if z[u] <= bound else 0
                else:
                    bits[u] = 1 if bound else 0
            hidden.append(bits)
            x = bits
    return Inference(logits=logits, hidden=hidden)


# ---------------------------------------------------------------------------
# Validation and the JSON file format (schema documented in docs/formats.md)

def _expect(cond: bool, cls, msg: str):
    if not cond:
        raise cls(msg)


def validate_model(model: BnnModel) -> BnnModel:
    """Check every invariant and fill in derived layer shapes."""
    _expect(len(model.layers) >= 1, ValidationError, "model has no layers")
    _expect(float(model.quant_step) > 0, ValidationError,
            "quant_step must be > 0")
    _expect(len(model.input_shape) == 3, ValidationError,
            "input_shape must be [H, W, C]")
    shape = tuple(int(v) for v in model.input_shape)
    for idx, layer in enumerate(model.layers):
        name = f"layers[{idx}]"
        ws = layer.weight_sign
        _expect(layer.kind in ("dense", "conv"), ValidationError,
                f"{name}.kind: unknown kind {layer.kind!r}")
        vals = np.unique(ws)
        _expect(np.all(np.isin(vals, (-1, 0, 1))), ValidationError,
                f"{name}.weight_sign out of range (entries must be -1, 0 or 1)")
        _expect(np.all(layer.bn_var >= 0), ValidationError,
                f"{name}.bn.var: entries must be >= 0")
        _expect(layer.bn_eps > 0, ValidationError,
                f"{name}.bn.eps: must be > 0")
        _expect(np.all(np.isfinite(layer.bn_gamma))
                and np.all(np.isfinite(layer.bn_beta))
                and np.all(np.isfinite(layer.bn_mean))
                and np.all(np.isfinite(layer.bn_var)), ValidationError,
                f"{name}.bn: statistics must be finite")
        is_last = idx == len(model.layers) - 1
        _expect(layer.is_output == is_last, ValidationError,
                f"{name}.is_output: must be true exactly on the last layer")
        layer.in_shape = shape
        if layer.kind == "dense":
            _expect(ws.ndim == 2, ParseError,
                    f"{name}.weight_sign: dense weights must be 2-D")
            in_size = shape[0] * shape[1] * shape[2]
            _expect(ws.shape[1] == in_size, ShapeError,
                    f"{name}: weight columns {ws.shape[1]} != input size {in_size}")
            layer.out_shape = (1, 1, int(ws.shape[0]))
        else:
            _expect(ws.ndim == 4, ParseError,
                    f"{name}.weight_sign: conv weights must be 4-D")
            h, w, c = shape
            oc, ic, kh, kw = ws.shape
            _expect(ic == c, ShapeError,
                    f"{name}: weight in-channels {ic} != input channels {c}")
            sh, sw = layer.stride
            ph, pw = layer.padding
            _expect(sh >= 1 and sw >= 1, ValidationError,
                    f"{name}.conv.stride: must be >= 1")
            _expect(ph >= 0 and pw >= 0, ValidationError,
                    f"{name}.conv.padding: must be >= 0")
            oh = (h + 2 * ph - kh) // sh + 1
            ow = (w + 2 * pw - kw) // sw + 1
            _expect(oh >= 1 and ow >= 1, ShapeError,
                    f"{name}: kernel {kh}x{kw} does not fit input {h}x{w}")
            layer.out_shape = (oh, ow, oc)
        nch = layer.num_units if not layer.is_output else None
        if layer.is_output:
            _expect(layer.kind == "dense", ValidationError,
                    f"{name}: output layer must be dense")
            _expect(len(layer.bn_gamma) == 1 and len(layer.bn_var) == 1,
                    ValidationError,
                    f"{name}.bn: output layer gamma/var must be scalars")
            _expect(len(layer.bn_beta) == layer.out_size
                    and len(layer.bn_mean) == layer.out_size, ValidationError,
                    f"{name}.bn: beta/mean must have one entry per output unit")
        else:
            for fld, arr in (("gamma", layer.bn_gamma), ("beta", layer.bn_beta),
                             ("mean", layer.bn_mean), ("var", layer.bn_var)):
                _expect(len(arr) == nch, ValidationError,
                        f"{name}.bn.{fld}: expected {nch} entries, got {len(arr)}")
        shape = layer.out_shape
    return model


def model_to_dict(model: BnnModel) -> dict:
    layers = []
    for layer in model.layers:
        entry = {
            "kind": layer.kind,
            "weight_sign": layer.weight_sign.tolist(),
            "bn": {
                "gamma": layer.bn_gamma.tolist(),
                "beta": layer.bn_beta.tolist(),
                "mean": layer.bn_mean.tolist(),
                "var": layer.bn_var.tolist(),
                "eps": float(layer.bn_eps),
            },
            "is_output": bool(layer.is_output),
        }
        if layer.kind == "conv":
            entry["conv"] = {
                "kernel": list(layer.kernel),
                "stride": list(layer.stride),
                "padding": list(layer.padding),
            }
        layers.append(entry)
    return {
        "input_shape": list(model.input_shape),
        "quant_step": float(model.quant_step),
        "layers": layers,
    }


def _get(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}: missing key {key!r}")
    return obj[key]


def model_from_dict(data: dict) -> BnnModel:
    input_shape = _get(data, "input_shape", "$")
    quant_step = _get(data, "quant_step", "$")
    raw_layers = _get(data, "layers", "$")
    if not isinstance(raw_layers, list):
        raise ParseError("$.layers: expected a list")
    layers = []
    for idx, entry in enumerate(raw_layers):
        path = f"$.layers[{idx}]"
        kind = _get(entry, "kind", path)
        try:
            ws = np.asarray(_get(entry, "weight_sign", path), dtype=np.int64)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{path}.weight_sign: not a rectangular int array "
                             f"({exc})") from exc
        bn = _get(entry, "bn", path)
        layer = BnnLayer(
            kind=kind,
            weight_sign=ws,
            bn_gamma=np.asarray(_get(bn, "gamma", path + ".bn"), dtype=np.float64),
            bn_beta=np.asarray(_get(bn, "beta", path + ".bn"), dtype=np.float64),
            bn_mean=np.asarray(_get(bn, "mean", path + ".bn"), dtype=np.float64),
            bn_var=np.asarray(_get(bn, "var", path + ".bn"), dtype=np.float64),
            bn_eps=float(bn.get("eps", DEFAULT_BN_EPS)),
            is_output=bool(entry.get("is_output", False)),
        )
        if kind == "conv":
            conv = _get(entry, "conv", path)
            layer.stride = tuple(int(v) for v in _get(conv, "stride", path + ".conv"))
            layer.padding = tuple(int(v) for v in _get(conv, "padding", path + ".conv"))
            kernel = tuple(int(v) for v in _get(conv, "kernel", path + ".conv"))
            if kernel != (ws.shape[2], ws.shape[3]):
                raise ValidationError(
                    f"{path}.conv.kernel: {list(kernel)} does not match "
                    f"weight_sign kernel {list(ws.shape[2:])}")
        layers.append(layer)
    model = BnnModel(layers=layers,
                     input_shape=tuple(int(v) for v in input_shape),
                     quant_step=float(quant_step))
    return validate_model(model)


def load_model(path) -> BnnModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(data)


def save_model(model: BnnModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def content_hash(model: BnnModel) -> str:
    """Stable digest of the canonical model content (encoding cache key)."""
    blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
