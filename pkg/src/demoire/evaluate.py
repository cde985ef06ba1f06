"""Evaluation: run a restoration function over a dataset and report metrics.

The model's output is always compared against the stored sRGB target; the
naively demosaicked input is measured alongside it as the degradation
baseline, so every report carries both "how good is the restoration" and
"how bad was the input" on the same images.
"""

from __future__ import annotations

import os
import time

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, restore_network
from .color import demosaic_bilinear, save_srgb_png
from .config import config_from_text
from .data import GUIDANCE_SPACES, load_pairs, pair_tensors
from .metrics import measure_pair, mean_report
from .network import DsdNet
from .report import RunReport, write_per_image_csv

__all__ = ["network_restorer", "input_baseline", "evaluate_pairs",
           "evaluate_network", "evaluate"]


def network_restorer(net, space="ycc"):
    """Wrap a network as mosaic -> sRGB restoration function."""

    def restore(mosaic):
        packed, guide, _, _ = pair_tensors(
            mosaic, np.zeros((3,) + mosaic.shape, np.float32), space)
        with T.no_grad():
            srgb, _ = net(T.Tensor(packed[None]), T.Tensor(guide[None]))
        return np.clip(srgb.data[0], 0.0, 1.0)

    return restore


def input_baseline(mosaic):
    """The degraded-input reference: naive demosaicking of the mosaic."""
    return demosaic_bilinear(mosaic)


def evaluate_pairs(restore, pairs):
    """Apply a restoration function to every pair.

    Returns (per-image rows, mean restored report, mean input report,
    restored images); rows match report.PER_IMAGE_COLUMNS.
    """
    rows, restored_reports, input_reports, outputs = [], [], [], []
    for pair in pairs:
        out = restore(pair.mosaic)
        rep = measure_pair(out, pair.gt_srgb)
        base = measure_pair(input_baseline(pair.mosaic), pair.gt_srgb)
        restored_reports.append(rep)
        input_reports.append(base)
        outputs.append(out)
        rows.append({
            "index": pair.index,
            "psnr_db": f"{rep.psnr_db:.4f}",
            "y_psnr_db": f"{rep.y_psnr_db:.4f}",
            "ssim": f"{rep.ssim:.6f}",
            "delta_e": f"{rep.delta_e:.4f}",
            "input_psnr_db": f"{base.psnr_db:.4f}",
            "input_y_psnr_db": f"{base.y_psnr_db:.4f}",
            "input_ssim": f"{base.ssim:.6f}",
            "input_delta_e": f"{base.delta_e:.4f}",
        })
    return rows, mean_report(restored_reports), mean_report(input_reports), \
        outputs


def evaluate_network(net, pairs, variant="full"):
    space = GUIDANCE_SPACES.get(variant, "ycc")
    return evaluate_pairs(network_restorer(net, space), pairs)


def evaluate(ckpt, data_dir, out_dir=None, dump_images=False, label="eval"):
    """Evaluate a checkpoint (path or object) over a pair directory.

    The network is rebuilt from the checkpoint's config snapshot, so a
    mismatched hand-built network can never sneak in. Writes a per-image
    CSV (and optionally restored PNGs) when out_dir is given.
    """
    if isinstance(ckpt, str):
        ckpt = load_checkpoint(ckpt)
    if not ckpt.config_text:
        raise ValueError("checkpoint carries no config snapshot")
    cfg = config_from_text(ckpt.config_text)
    net = DsdNet(cfg.net, variant=cfg.ablation_variant, seed=cfg.seed)
    net.assign_names()
    restore_network(ckpt, net, expect_config=ckpt.config_text)

    pairs = load_pairs(data_dir)
    start = time.perf_counter()
    rows, restored, baseline, outputs = evaluate_network(
        net, pairs, cfg.ablation_variant)
    eval_seconds = time.perf_counter() - start

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_per_image_csv(os.path.join(out_dir, "per_image.csv"), rows)
        if dump_images:
            for pair, out in zip(pairs, outputs):
                save_srgb_png(os.path.join(out_dir,
                                           f"restored_{pair.index}.png"),
                              out)
    h, w = pairs[0].mosaic.shape
    return RunReport(label=label, params=net.count_params(),
                     flops=net.estimate_flops(h // 2, w // 2),
                     metrics=restored, input_metrics=baseline,
                     eval_seconds=eval_seconds, steps=ckpt.step,
                     notes=f"variant={cfg.ablation_variant}")
