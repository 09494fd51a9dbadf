"""Projected-gradient adversary with selectable gradient cancelling."""

from __future__ import annotations

import torch
from torch import nn

from .layers import set_grad_cancel

ALPHA_GRID = (0.6, 1.0, 1.4, 1.8, 2.2, 2.6, 3.0)


def pgd_attack(net, x, y, eps: float, steps: int, step_size=None):
    """L-inf PGD from the clean input; gradients use the net's current
    cancelling mode. Inputs pass through the quantization layer on every
    forward, so the attack optimizes what the verifier actually sees."""
    if steps <= 0 or eps <= 0:
        return x
    if step_size is None:
        step_size = 2.5 * eps / steps
    was_training = net.training
    net.eval()
    delta = torch.zeros_like(x, requires_grad=True)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(steps):
        adv = torch.clamp(x + delta, 0.0, 1.0)
        loss = loss_fn(net(adv), y)
        (grad,) = torch.autograd.grad(loss, delta)
        with torch.no_grad():
            delta += step_size * grad.sign()
            delta.clamp_(-eps, eps)
    if was_training:
        net.train()
    return torch.clamp(x + delta.detach(), 0.0, 1.0)


@torch.no_grad()
def _accuracy_on(net, x, y) -> float:
    was_training = net.training
    net.eval()
    acc = float((net(x).argmax(dim=1) == y).double().mean())
    if was_training:
        net.train()
    return acc


def attack_success_rate(net, batches, eps: float, steps: int) -> float:
    """Fraction of inputs misclassified after the attack."""
    hit = 0
    total = 0
    for x, y in batches:
        adv = pgd_attack(net, x, y, eps, steps)
        was_training = net.training
        net.eval()
        preds = net(adv).argmax(dim=1)
        if was_training:
            net.train()
        hit += int((preds != y).sum())
        total += len(y)
    return hit / total if total else 0.0


def select_alpha(net, batches, eps: float, steps: int,
                 grid=ALPHA_GRID) -> float:
    """The cancelling strength maximizing PGD success; ties take the
    smallest candidate. Evaluated with mode "tanh" windows at each alpha."""
    grid = tuple(grid)
    if len(grid) == 1:
        return grid[0]
    best_alpha = grid[0]
    best_rate = -1.0
    for alpha in grid:
        set_grad_cancel(net, alpha=alpha, mode="tanh")
        rate = attack_success_rate(net, batches, eps, steps)
        if rate > best_rate:
            best_rate = rate
            best_alpha = alpha
    set_grad_cancel(net, alpha=best_alpha, mode="tanh")
    return best_alpha


def pgd_accuracy(net, x, y, eps: float, steps: int) -> float:
    """Accuracy under attack (1 - success rate on this batch set)."""
    adv = pgd_attack(net, x, y, eps, steps)
    return _accuracy_on(net, adv, y)
