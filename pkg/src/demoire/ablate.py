"""Ablation matrix: train and evaluate each architecture variant.

Every variant runs the same preset (same seed, same data, same step
budget), so rows differ only in architecture. The CSV mirrors the report
column layout with one row per variant.
"""

from __future__ import annotations

import os
from dataclasses import replace

from .report import write_report_csv
from .train import train

__all__ = ["ablate"]


def ablate(base_cfg, variants, out_dir=None):
    """One report per variant, trained with a shared seed and data."""
    reports = []
    for variant in variants:
        cfg = replace(base_cfg, ablation_variant=variant)
        run_dir = None
        if out_dir is not None:
            run_dir = os.path.join(out_dir, variant)
        result = train(cfg, out_dir=run_dir)
        result.report.label = variant
        reports.append(result.report)
    if out_dir is not None:
        write_report_csv(os.path.join(out_dir, "ablation.csv"), reports)
    return reports
