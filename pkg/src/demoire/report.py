"""Run reports and their CSV serialization.

A RunReport captures one train/eval/bench outcome. Fields that a given
phase does not produce carry the SKIPPED marker rather than being left
ambiguous; the CSV writer prints that marker verbatim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .metrics import MetricReport

__all__ = ["SKIPPED", "RunReport", "REPORT_COLUMNS", "write_report_csv",
           "write_per_image_csv"]

SKIPPED = "skipped"

REPORT_COLUMNS = [
    "label", "params", "flops", "psnr_db", "y_psnr_db", "ssim", "delta_e",
    "input_psnr_db", "input_y_psnr_db", "input_ssim", "input_delta_e",
    "train_seconds", "eval_seconds", "ms_per_image", "p95_ms", "steps",
    "final_loss", "notes",
]


@dataclass
class RunReport:
    """One run's numbers; every field is a value or the SKIPPED marker."""

    label: str
    params: object = SKIPPED
    flops: object = SKIPPED
    metrics: object = SKIPPED
    input_metrics: object = SKIPPED
    train_seconds: object = SKIPPED
    eval_seconds: object = SKIPPED
    ms_per_image: object = SKIPPED
    p95_ms: object = SKIPPED
    steps: object = SKIPPED
    final_loss: object = SKIPPED
    notes: str = ""

    def as_row(self):
        def cell(value, fmt="{:.6g}"):
            if isinstance(value, str):
                return value
            return fmt.format(value)

        def metric_cells(report):
            if not isinstance(report, MetricReport):
                return [SKIPPED] * 4
            return [f"{report.psnr_db:.4f}", f"{report.y_psnr_db:.4f}",
                    f"{report.ssim:.6f}", f"{report.delta_e:.4f}"]

        row = [self.label, cell(self.params, "{:d}"),
               cell(self.flops, "{:.6e}")]
        row += metric_cells(self.metrics)
        row += metric_cells(self.input_metrics)
        row += [cell(self.train_seconds, "{:.3f}"),
                cell(self.eval_seconds, "{:.3f}"),
                cell(self.ms_per_image, "{:.3f}"),
                cell(self.p95_ms, "{:.3f}"),
                cell(self.steps, "{:d}"),
                cell(self.final_loss, "{:.8f}"),
                self.notes]
        return dict(zip(REPORT_COLUMNS, row))


def write_report_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.as_row())


PER_IMAGE_COLUMNS = ["index", "psnr_db", "y_psnr_db", "ssim", "delta_e",
                     "input_psnr_db", "input_y_psnr_db", "input_ssim",
                     "input_delta_e"]


def write_per_image_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PER_IMAGE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
