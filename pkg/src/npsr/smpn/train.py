"""Adam training of the mask network on dice loss."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..dpsr import SolverConfig, dpsr_backward, dpsr_forward, mse_loss
from ..errors import InvalidInputError, TrainingDivergedError
from .unet import UNetParams, dice_loss, unet_backward, unet_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    max_steps: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")


class Adam:
    """Bias-corrected Adam over a dict of arrays, updated in place."""

    def __init__(self, params: dict, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(p.dtype)


def batch_dice(prob, masks):
    """Mean per-sample dice loss over a batch and its gradient."""
    losses, grads = zip(*(dice_loss(p, m) for p, m in zip(prob, masks)))
    n = len(losses)
    return float(np.mean(losses)), np.stack(grads) / n


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield np.sort(order[i : i + batch_size])


def train(dataset, cfg: TrainConfig, net: UNetParams, callback=None):
    """Minimize dice loss over ``dataset`` (a list of ``(chi, mask)`` pairs).

    ``net`` is copied, not modified.  Returns ``(trained_net, losses)`` with
    one loss per step.
    """
    if not dataset:
        raise InvalidInputError("training needs at least one example")
    net = net.copy()
    dtype = net.params["head.weight"].dtype
    chis = np.stack([np.asarray(c) for c, _ in dataset]).astype(dtype)
    masks = np.stack([np.asarray(m, dtype=bool) for _, m in dataset]).astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(len(dataset), min(cfg.batch_size, len(dataset)), rng)
    opt = Adam(net.params, cfg.learning_rate, cfg.betas, cfg.eps)
    losses = []
    for step in range(cfg.max_steps):
        idx = next(batches)
        prob, cache = unet_forward(chis[idx], net, train=True)
        loss, dprob = batch_dice(prob, masks[idx])
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}")
        grads, _ = unet_backward(dprob.astype(dtype), cache, net)
        opt.step(net.params, grads)
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if step % 50 == 0:
            log.debug("step %d dice %.5f", step, loss)
    return net, losses


def joint_loss_and_grads(cloud, gt_chi, gt_mask, net: UNetParams, solver_cfg: SolverConfig, train_mode: bool = False):
    """Total loss ``mse(chi, gt_chi) + dice(net(chi), gt_mask)`` with gradients.

    The dice term is backpropagated through the network into the indicator
    grid and on through the Poisson solver into the point cloud.  Returns
    ``(loss, param_grads, grad_positions, grad_normals)``.
    """
    if net.config.resolution != solver_cfg.resolution:
        raise InvalidInputError("network and solver resolutions differ")
    chi, tape = dpsr_forward(cloud, solver_cfg)
    l_dpsr, g_chi = mse_loss(chi, gt_chi)
    prob, cache = unet_forward(chi, net, train=train_mode, update_stats=False)
    l_dice, g_prob = dice_loss(prob[0], gt_mask)
    grads, g_in = unet_backward(g_prob[None], cache, net)
    grad_positions, grad_normals = dpsr_backward(tape, g_chi + g_in[0])
    return l_dpsr + l_dice, grads, grad_positions, grad_normals
