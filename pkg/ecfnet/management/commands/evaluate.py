from __future__ import annotations

import csv
import math

from ecfnet.checkpoint import load
from ecfnet.data import load_pair_dir
from ecfnet.management.base import BaseCommand
from ecfnet.metrics import mae
from ecfnet.metrics import psnr
from ecfnet.metrics import ssim
from ecfnet.parallel import ordered_map

HEADER = ("name", "psnr", "ssim", "mae")


def format_metric(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"


def score_pairs(model, pairs):
    def score(pair):
        restored = model.restore(pair.degraded)
        return psnr(restored, pair.clean), ssim(restored, pair.clean), mae(restored, pair.clean)

    return ordered_map(score, pairs)


class Command(BaseCommand):
    help = "Score a checkpoint on a pair directory (input/ and target/ PPM files) with PSNR, SSIM and MAE"

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Checkpoint written by ecfnet train.")
        parser.add_argument("--pairs", required=True, help="Directory with input/ and target/ subdirectories.")
        parser.add_argument("--output", default="metrics.csv", help="CSV file for the metrics table.")

    def handle(self, **options):
        model = load(options["model"])
        names, pairs = load_pair_dir(options["pairs"])
        scores = score_pairs(model, pairs)
        mean = tuple(sum(column) / len(column) for column in zip(*scores))
        rows = [(name, *(format_metric(value) for value in values)) for name, values in zip(names, scores)]
        rows.append(("mean", *(format_metric(value) for value in mean)))

        with open(options["output"], "w", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(HEADER)
            writer.writerows(rows)

        width = max(len(name) for name, *_ in rows)
        self.write(f"{'name':<{width}}  {'psnr':>9}  {'ssim':>7}  {'mae':>7}")
        for name, psnr_cell, ssim_cell, mae_cell in rows:
            self.write(f"{name:<{width}}  {psnr_cell:>9}  {ssim_cell:>7}  {mae_cell:>7}")
