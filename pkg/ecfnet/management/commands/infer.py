from __future__ import annotations

from ecfnet.checkpoint import load
from ecfnet.management.base import BaseCommand
from ecfnet.ppm import load_ppm
from ecfnet.ppm import save_ppm


class Command(BaseCommand):
    help = "Restore one PPM image with a trained checkpoint"

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Checkpoint written by ecfnet train.")
        parser.add_argument("--input", required=True, help="Degraded P6 PPM image; sides must be multiples of 16.")
        parser.add_argument("--output", required=True, help="Where to write the restored P6 PPM image.")

    def handle(self, **options):
        model = load(options["model"])
        restored = model.restore(load_ppm(options["input"]))
        save_ppm(restored, options["output"])
        self.write(f"wrote {options['output']}")
