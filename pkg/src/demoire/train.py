"""Deterministic training loop: AdamW, cosine schedule, smoothed-L1 loss.

The loss is a smoothed L1 on the sRGB output plus lambda_aux times the
same penalty on the auxiliary guidance-domain output; the raw-only
variant has no guidance target, so its auxiliary weight is forced to
zero. Everything random (weight init, data order, crop/flip draws)
derives from the config seed, so two runs with the same config and data
are bitwise identical.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import replace

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_from_network, save_checkpoint
from .config import TrainConfig, config_to_text
from .data import GUIDANCE_SPACES, batch_tensors, load_pairs, sample_crop
from .evaluate import evaluate_network
from .network import DsdNet, DsdNetConfig
from .optim import AdamW, LrSchedule, cosine_lr
from .report import RunReport, SKIPPED

__all__ = ["TrainingDiverged", "TrainResult", "train", "l1_loss",
           "recon_loss", "tiny_net", "small_net", "overfit_preset",
           "desk_preset"]


class TrainingDiverged(RuntimeError):
    """Raised when the loss or an activation goes non-finite."""


def l1_loss(pred, target):
    return T.mean_all(T.abs_(pred - target))


def recon_loss(pred, target, eps=1e-3):
    # Smoothed L1: same scale as mean absolute error, but the gradient
    # decays with the residual so late training keeps contracting instead
    # of oscillating on the |x| kink.
    return T.mean_all(T.smooth_abs(pred - target, eps))


def tiny_net():
    """Smallest config that still exercises every block type; used by the
    overfit check and the gradient suite."""
    return DsdNetConfig(base_channels=24, n_scales=2, blocks_per_scale=1,
                        heads=(1, 2), ssm_state_dim=4)


def small_net():
    """Desk-scale config for the restoration-signal and ablation checks."""
    return DsdNetConfig(base_channels=16, n_scales=3, blocks_per_scale=1,
                        heads=(1, 2, 4), ssm_state_dim=4)


def overfit_preset(data_dir, **overrides):
    """8-pair memorization run: tiny net, 2000 steps, no augmentation."""
    cfg = TrainConfig(net=tiny_net(), total_steps=2000, batch_size=2,
                      crop_size=64, lr_init=5e-3, lr_min=1e-5,
                      lambda_aux=0.6, augment=False, seed=0,
                      data_dir=data_dir)
    return replace(cfg, **overrides) if overrides else cfg


def desk_preset(data_dir, **overrides):
    """Desk-scale training run used by the restoration-signal check."""
    cfg = TrainConfig(net=small_net(), total_steps=10_000, batch_size=1,
                      crop_size=64, lr_init=1e-3, lr_min=1e-5,
                      augment=True, seed=0, data_dir=data_dir)
    return replace(cfg, **overrides) if overrides else cfg


class _Sampler:
    """Epoch-shuffled pair order with a fixed draw pattern per step."""

    def __init__(self, n_pairs, seed):
        self.order_rng = np.random.default_rng(
            np.random.SeedSequence([seed, 7]))
        self.crop_rng = np.random.default_rng(
            np.random.SeedSequence([seed, 11]))
        self.n = n_pairs
        self.queue = []

    def next_indices(self, count):
        out = []
        while len(out) < count:
            if not self.queue:
                self.queue = list(self.order_rng.permutation(self.n))
            out.append(self.queue.pop(0))
        return out


def train(cfg, out_dir=None, net=None):
    """Run the configured training; returns a TrainResult.

    The final model is evaluated on cfg.eval_dir when set, else on the
    training pairs. When out_dir is given, the final checkpoint, the
    per-step loss log, and periodic checkpoints are written there. A
    prebuilt net may be injected for surgery in tests; by default the
    network is built from cfg.net with cfg.seed.
    """
    pairs = load_pairs(cfg.data_dir)
    space = GUIDANCE_SPACES.get(cfg.ablation_variant, "ycc")
    lambda_aux = 0.0 if cfg.ablation_variant == "no_ycc" else cfg.lambda_aux

    if net is None:
        net = DsdNet(cfg.net, variant=cfg.ablation_variant, seed=cfg.seed)
        net.assign_names()
    params = [p for _, p in net.named_parameters()]
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    sched = LrSchedule(cfg.lr_init, cfg.lr_min, cfg.total_steps)
    sampler = _Sampler(len(pairs), cfg.seed)
    config_text = config_to_text(cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    losses, lrs = [], []
    start = time.perf_counter()
    for step in range(cfg.total_steps):
        lr = cosine_lr(step, sched)
        crops = [sample_crop(sampler.crop_rng, pairs[i], cfg.crop_size,
                             cfg.augment)
                 for i in sampler.next_indices(cfg.batch_size)]
        raw, guide, gt, aux_t = batch_tensors(crops, space)
        opt.zero_grad()
        try:
            srgb, aux = net(raw, guide)
            loss = recon_loss(srgb, gt)
            if lambda_aux > 0.0:
                loss = loss + T.scale(recon_loss(aux, aux_t), lambda_aux)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise T.NonFiniteError("loss is non-finite")
            T.backward(loss)
        except T.NonFiniteError as err:
            raise TrainingDiverged(
                f"non-finite value at step {step} "
                f"(lr={lr:.4e}, grad_norm={opt.grad_norm():.4e}): {err}"
            ) from err
        opt.step(lr)
        losses.append(loss_value)
        lrs.append(lr)
        if (out_dir is not None and cfg.checkpoint_every
                and (step + 1) % cfg.checkpoint_every == 0
                and step + 1 < cfg.total_steps):
            ckpt = checkpoint_from_network(net, config_text, step + 1,
                                           opt.state)
            save_checkpoint(os.path.join(out_dir,
                                         f"step_{step + 1}.ckpt"), ckpt)
    train_seconds = time.perf_counter() - start

    ckpt = checkpoint_from_network(net, config_text, cfg.total_steps,
                                   opt.state)
    eval_pairs = load_pairs(cfg.eval_dir) if cfg.eval_dir else pairs
    eval_start = time.perf_counter()
    _, restored, baseline, _ = evaluate_network(net, eval_pairs,
                                                cfg.ablation_variant)
    eval_seconds = time.perf_counter() - eval_start
    h, w = eval_pairs[0].mosaic.shape
    report = RunReport(
        label=f"train[{cfg.ablation_variant}]",
        params=net.count_params(),
        flops=net.estimate_flops(h // 2, w // 2),
        metrics=restored, input_metrics=baseline,
        train_seconds=train_seconds, eval_seconds=eval_seconds,
        steps=cfg.total_steps,
        final_loss=losses[-1] if losses else SKIPPED,
        notes="training skipped" if cfg.total_steps == 0 else "")

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), ckpt)
        with open(os.path.join(out_dir, "losses.csv"), "w") as fh:
            fh.write("step,loss,lr\n")
            for i, (lv, lr) in enumerate(zip(losses, lrs)):
                fh.write(f"{i},{lv:.8f},{lr:.8e}\n")
    return TrainResult(checkpoint=ckpt, report=report, losses=losses,
                       lrs=lrs, net=net)


class TrainResult:
    """Bundle returned by train(); attribute access only."""

    def __init__(self, checkpoint, report, losses, lrs, net):
        self.checkpoint = checkpoint
        self.report = report
        self.losses = losses
        self.lrs = lrs
        self.net = net
