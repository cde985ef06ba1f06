"""Inference benchmarking: wall-clock latency plus the analytic cost model.

Latency is measured on tape-free forward passes after mandatory warmup.
The run asserts the single-stage contract: each benchmarked image costs
exactly one network invocation, with no intermediate image-domain
hand-off between sub-networks (the architecture has none to invoke).
"""

from __future__ import annotations

import statistics
import time

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, restore_network
from .config import config_from_text
from .network import DsdNet
from .report import RunReport

__all__ = ["bench_network", "bench_inference", "synthetic_input"]


def synthetic_input(size, seed=0):
    """Random packed mosaic and guidance tensors for a size x size image
    (mosaic resolution; the network runs at half that)."""
    if size % 2:
        raise ValueError("benchmark size must be even")
    half = size // 2
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, (1, 4, half, half)).astype(np.float32)
    guide = np.empty((1, 3, half, half), dtype=np.float32)
    guide[:, 0] = rng.uniform(0.0, 1.0, (1, half, half))
    guide[:, 1:] = rng.uniform(-0.5, 0.5, (1, 2, half, half))
    return T.Tensor(raw), T.Tensor(guide)


def bench_network(net, size=256, repeats=10, warmup=3, seed=0):
    """Median/p95 forward latency in ms plus the analytic FLOPs estimate."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    warmup = max(3, warmup)
    raw, guide = synthetic_input(size, seed=seed)
    times = []
    with T.no_grad():
        for _ in range(warmup):
            net(raw, guide)
        for _ in range(repeats):
            before = net.invocations
            start = time.perf_counter()
            net(raw, guide)
            times.append((time.perf_counter() - start) * 1000.0)
            if net.invocations != before + 1:
                raise AssertionError(
                    "single-stage contract broken: one benchmarked image "
                    f"cost {net.invocations - before} network invocations")
    half = size // 2
    return RunReport(
        label=f"bench[{size}x{size}]",
        params=net.count_params(),
        flops=net.estimate_flops(half, half),
        ms_per_image=statistics.median(times),
        p95_ms=float(np.percentile(times, 95)),
        notes=f"repeats={repeats} warmup={warmup}")


def bench_inference(ckpt, size=256, repeats=10, warmup=3, seed=0):
    """Benchmark a checkpoint (path or object) at the given mosaic size."""
    if isinstance(ckpt, str):
        ckpt = load_checkpoint(ckpt)
    if not ckpt.config_text:
        raise ValueError("checkpoint carries no config snapshot")
    cfg = config_from_text(ckpt.config_text)
    net = DsdNet(cfg.net, variant=cfg.ablation_variant, seed=cfg.seed)
    net.assign_names()
    restore_network(ckpt, net, expect_config=ckpt.config_text)
    return bench_network(net, size=size, repeats=repeats, warmup=warmup,
                         seed=seed)
