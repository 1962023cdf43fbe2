from __future__ import annotations

import dataclasses
import os

from ecfnet.checkpoint import save
from ecfnet.config import RunConfig
from ecfnet.management.base import BaseCommand
from ecfnet.model import build
from ecfnet.ppm import save_ppm
from ecfnet.train import sample_grid
from ecfnet.train import train_loop

SAMPLE_ROWS = 4


class Command(BaseCommand):
    help = "Train a model from a JSON run config; writes model.ecfn, loss.csv and samples.ppm into out_dir"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="JSON run config with model, train, data and out_dir.")
        parser.add_argument("--seed", type=int, default=None, help="Override train.seed from the config.")

    def handle(self, **options):
        run = RunConfig.load(options["config"])
        config = run.train
        if options["seed"] is not None:
            config = dataclasses.replace(config, seed=options["seed"])

        dataset = run.data.dataset()
        model = build(run.model, seed=config.seed)
        model, log = train_loop(model, dataset, config)

        os.makedirs(run.out_dir, exist_ok=True)
        checkpoint = os.path.join(run.out_dir, "model.ecfn")
        save(model, checkpoint)
        log.to_csv(os.path.join(run.out_dir, "loss.csv"))
        save_ppm(sample_grid(model, dataset.heldout[:SAMPLE_ROWS]), os.path.join(run.out_dir, "samples.ppm"))

        final = f"{log.losses[-1]:.6f}" if len(log) else "n/a"
        self.write(f"trained {len(log)} steps, final loss {final}, checkpoint {checkpoint}")
