"""The training schedule: masked-sign networks, ramped PGD adversary,
cardinality-bound decay, exact statistics recomputation and model export."""

from __future__ import annotations

import copy
import json
import os
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import bounds, export, pgd
from .layers import mask_decay_loss, set_grad_cancel, set_ternary_mode
from .network import build_model, recompute_bn_stats


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-4
    lr_halve_epoch: int = 150
    eps: float = 0.0
    eps_ramp_epochs: int = 100
    pgd_steps: int = 10
    pgd_steps_ramp_epochs: int = 50
    pgd_eval_steps: int = 100
    alpha_grid: tuple = pgd.ALPHA_GRID
    alpha_minibatches: int = 40
    grad_mode: str = "adaptive"  # adaptive | tanh | hard
    cbd_tau: float = 5.0
    cbd_eta: float = 0.0
    mask_weight_decay: float = 1e-7
    ternary_threshold: float | None = None  # ternary baseline when set
    quant_step: float = 0.61
    init_std: float = 0.01
    seed: int = 0
    select_last: int = 3
    verifier_adv: bool = False  # counterexamples from the verifier CLI in
    verifier_adv_epochs: int = 10  # the last epochs, for PGD-missed inputs
    verifier_cli: str = "eev"
    verifier_adv_max_per_epoch: int = 32

    def validate(self):
        assert self.epochs >= 1 and self.batch_size >= 1
        assert self.lr > 0 and self.quant_step > 0
        assert self.eps >= 0 and self.pgd_steps >= 0
        assert self.eps_ramp_epochs <= max(self.epochs, 1) or self.eps == 0
        assert self.cbd_tau > 0 and self.cbd_eta >= 0
        return self


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    alpha: float | None
    eps: float
    pgd_steps: int


def _ramp(value, epoch, ramp_epochs):
    if ramp_epochs <= 0:
        return value
    return value * min(1.0, epoch / ramp_epochs)


def _epoch_batches(images, labels, batch_size, generator):
    order = torch.randperm(len(images), generator=generator)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield images[idx], labels[idx]


def _first_batches(images, labels, batch_size, count):
    out = []
    for start in range(0, min(len(images), batch_size * count), batch_size):
        out.append((images[start:start + batch_size],
                    labels[start:start + batch_size]))
    return out


def _verifier_counterexamples(net, x, y, eps, config: TrainConfig):
    """Ask the verifier CLI for adversarial inputs where PGD failed.

    Exchanges artifacts through the shared file formats only; any failure of
    the external tool silently falls back to the PGD batch.
    """
    try:
        with tempfile.TemporaryDirectory(prefix="eev-train-adv-") as tmp:
            model_path = os.path.join(tmp, "model.json")
            export.save_model(net, model_path)
            adv = x.clone()
            found = 0
            for i in range(min(len(x), config.verifier_adv_max_per_epoch)):
                img_path = os.path.join(tmp, "img.npy")
                out_path = os.path.join(tmp, "out.json")
                h, w, c = net.input_shape
                np.save(img_path, x[i].detach().cpu().numpy().reshape(c, h, w)
                        .transpose(1, 2, 0))
                res = subprocess.run(
                    [config.verifier_cli, "verify", "-m", model_path,
                     "-i", img_path, "--label", str(int(y[i])),
                     "--eps", str(eps), "--timeout", "5",
                     "--json", out_path],
                    capture_output=True, timeout=30)
                if res.returncode != 10:
                    continue
                with open(out_path) as fh:
                    payload = json.load(fh)
                q = np.asarray(payload["counterexample"]["input_q"],
                               dtype=np.float64) * net.quant_step
                adv[i] = torch.from_numpy(
                    q.reshape(h, w, c).transpose(2, 0, 1)).to(adv.dtype)
                found += 1
            return adv, found
    except (OSError, subprocess.SubprocessError, KeyError, ValueError):
        return x, 0


def train(config: TrainConfig, arch: str, input_shape, train_images,
          train_labels, test_images, test_labels, num_classes=10,
          verbose=False):
    """Full schedule; returns (net, history). Deterministic given the seed."""
    config.validate()
    torch.manual_seed(config.seed)
    net = build_model(arch, input_shape, config.quant_step,
                      num_classes=num_classes, init_std=config.init_std)
    if config.ternary_threshold is not None:
        set_ternary_mode(net, config.ternary_threshold)
    if config.grad_mode == "hard":
        set_grad_cancel(net, alpha=1.0, mode="hard")
    else:
        set_grad_cancel(net, alpha=1.0, mode="tanh")
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    loss_fn = nn.CrossEntropyLoss()
    gen = torch.Generator().manual_seed(config.seed)
    history = []
    snapshots = []
    alpha = None
    for epoch in range(config.epochs):
        for group in opt.param_groups:
            group["lr"] = config.lr * (0.5 if epoch >= config.lr_halve_epoch
                                       else 1.0)
        eps_t = _ramp(config.eps, epoch, config.eps_ramp_epochs)
        steps_t = int(round(_ramp(config.pgd_steps, epoch,
                                  config.pgd_steps_ramp_epochs)))
        attack_on = eps_t > 0 and steps_t > 0
        if attack_on and config.grad_mode == "adaptive":
            probe = _first_batches(train_images, train_labels,
                                   config.batch_size,
                                   config.alpha_minibatches)
            alpha = pgd.select_alpha(net, probe, eps_t, steps_t,
                                     config.alpha_grid)
        net.train()
        total_loss = 0.0
        total_hit = 0
        total_n = 0
        last_epochs = epoch >= config.epochs - config.verifier_adv_epochs
        for x, y in _epoch_batches(train_images, train_labels,
                                   config.batch_size, gen):
            if attack_on:
                x_adv = pgd.pgd_attack(net, x, y, eps_t, steps_t)
                if config.verifier_adv and last_epochs:
                    with torch.no_grad():
                        net.eval()
                        missed = net(x_adv).argmax(dim=1) == y
                        net.train()
                    if bool(missed.any()):
                        x_v, found = _verifier_counterexamples(
                            net, x[missed], y[missed], eps_t, config)
                        if found:
                            x_adv = x_adv.clone()
                            x_adv[missed] = x_v
            else:
                x_adv = x
            net.train()
            logits = net(x_adv)
            loss = loss_fn(logits, y) \
                + bounds.cbd_loss(net, config.cbd_tau, config.cbd_eta) \
                + mask_decay_loss(net, config.mask_weight_decay)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * len(y)
            total_hit += int((logits.argmax(dim=1) == y).sum())
            total_n += len(y)
        history.append(EpochStats(
            epoch=epoch, loss=total_loss / total_n,
            train_accuracy=total_hit / total_n, alpha=alpha,
            eps=eps_t, pgd_steps=steps_t))
        if verbose:
            h = history[-1]
            print(f"epoch {h.epoch:3d} loss {h.loss:.4f} "
                  f"acc {h.train_accuracy:.3f} eps {h.eps:.3f} "
                  f"steps {h.pgd_steps} alpha {h.alpha}")
        if epoch >= config.epochs - config.select_last:
            snapshots.append((epoch, copy.deepcopy(net.state_dict())))

    # model selection over the last few epochs: PGD accuracy on the first
    # training minibatches when adversarial, natural test accuracy otherwise
    best_state = None
    best_metric = -1.0
    probe = _first_batches(train_images, train_labels, config.batch_size,
                           config.alpha_minibatches)
    for epoch, state in snapshots:
        net.load_state_dict(state)
        if config.eps > 0:
            metric = np.mean([
                pgd.pgd_accuracy(net, x, y, config.eps, config.pgd_steps)
                for x, y in probe])
        else:
            metric = export.accuracy(net, test_images, test_labels)
        if metric > best_metric:
            best_metric = metric
            best_state = state
    net.load_state_dict(best_state)
    recompute_bn_stats(net, train_images)
    return net, history
