#!/usr/bin/env python3
"""Dev-time fixture generator: freezes cross-component golden files.

Imports both packages (allowed here only; the shipped tests consume the
frozen files). Produces:
  trainer/tests/data/quantize_golden.json   verifier's exact grid indices
  trainer/tests/data/bounds_golden.json     bounds read off the encoder's
                                            emitted constraints (full-range
                                            query) for a fixed tiny model
  tests/data/trainer_export.json            a trained tiny model for the
                                            primary's cross fixture
"""

import json
import os
import sys

import numpy as np
import torch

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

from eev import model as bnn
from eev.encoder import Encoder, TRUE, FALSE

from eev_train import data as ds
from eev_train.export import save_model, to_model_dict
from eev_train.network import build_model
from eev_train.train import TrainConfig, train


def quantize_golden():
    rng = np.random.default_rng(1812)
    out = {}
    for step in (0.61, 0.064):
        values = rng.uniform(0, 1, 10_000)
        # include exact half-step ties and the endpoints
        ties = np.array([step / 2, 3 * step / 2, 0.0, 1.0])
        values = np.concatenate([values, ties])
        idx = [int(bnn.quantize_value(v, step)) for v in values]
        out[str(step)] = {"values": values.tolist(), "indices": idx}
    path = os.path.join(ROOT, "trainer", "tests", "data",
                        "quantize_golden.json")
    with open(path, "w") as fh:
        json.dump(out, fh)
    print("wrote", path)


def bounds_golden():
    torch.manual_seed(20240907)
    net = build_model("conv-tiny", (8, 8, 1), 0.61)
    # make statistics generic so bounds are nontrivial
    rng = np.random.default_rng(5)
    with torch.no_grad():
        for block in net.blocks:
            if hasattr(block.bn, "running_mean"):
                rm = block.bn.running_mean
                rm.add_(torch.from_numpy(
                    rng.uniform(-2, 2, rm.shape)).to(rm.dtype))
    model_dict = to_model_dict(net)
    model_path = os.path.join(ROOT, "trainer", "tests", "data",
                              "bounds_model.json")
    with open(model_path, "w") as fh:
        json.dump(model_dict, fh, indent=1, sort_keys=True)

    model = bnn.load_model(model_path)
    enc = Encoder()
    x0 = np.full(model.input_size, 0.5)
    sys_ = enc.encode_query(model, x0, eps=1.0, target_class=0)
    # full-range query: every pixel spans [0, grid_max]
    for blk in sys_.input_blocks:
        assert blk.base == 0 and len(blk.bits) == model.grid_max
    by_target = {}
    for card in sys_.all_cards():
        by_target[card.target] = card.bound
    layers = []
    for li, layer in enumerate(model.layers[:-1]):
        bounds = []
        for u in range(layer.out_size):
            lit = sys_.activation_var_map.get((0, li, u))
            if lit is None or lit is TRUE or lit is FALSE:
                bounds.append(None)
            else:
                bounds.append(by_target.get(lit))
        layers.append(bounds)
    path = os.path.join(ROOT, "trainer", "tests", "data",
                        "bounds_golden.json")
    with open(path, "w") as fh:
        json.dump({"model": "bounds_model.json",
                   "encoder_bounds": layers}, fh)
    print("wrote", path)


def trainer_export_fixture():
    (ti, tl), (vi, vl) = ds.load_digits_surrogate()
    x_train, y_train = ds.to_torch(ti, tl)
    x_test, y_test = ds.to_torch(vi, vl)
    cfg = TrainConfig(epochs=25, quant_step=0.61, mask_weight_decay=1e-5,
                      cbd_eta=5e-4, seed=1)
    net, _ = train(cfg, "mlp-small", (8, 8, 1), x_train, y_train,
                   x_test, y_test)
    path = os.path.join(ROOT, "tests", "data", "trainer_export.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_model(net, path)
    print("wrote", path)


if __name__ == "__main__":
    os.makedirs(os.path.join(ROOT, "trainer", "tests", "data"), exist_ok=True)
    quantize_golden()
    bounds_golden()
    trainer_export_fixture()
