from __future__ import annotations

from ecfnet.data import DEGRADATION_KINDS
from ecfnet.data import DegradationSpec
from ecfnet.data import Stream
from ecfnet.data import degrade
from ecfnet.data import make_rng
from ecfnet.exceptions import DegradationError
from ecfnet.management.base import BaseCommand
from ecfnet.ppm import load_ppm
from ecfnet.ppm import save_ppm


def parse_value(text):
    if "," in text:
        return tuple(float(part) for part in text.split(","))
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_params(pairs):
    params = {}
    for pair in pairs:
        key, separator, value = pair.partition("=")
        if not separator or not key:
            raise DegradationError(f"expected key=value, got {pair!r}")
        try:
            params[key] = parse_value(value)
        except ValueError as error:
            raise DegradationError(f"{key} has a non-numeric value {value!r}") from error
    return params


class Command(BaseCommand):
    help = "Apply a synthetic haze, blur or snow degradation to a PPM image"

    def add_arguments(self, parser):
        parser.add_argument("--kind", required=True, choices=DEGRADATION_KINDS, help="Degradation to apply.")
        parser.add_argument(
            "--params",
            nargs="*",
            default=[],
            metavar="KEY=VALUE",
            help="Degradation parameters, e.g. transmission=0.5 airlight=0.9,0.9,0.9 sigma=2 flakes=60.",
        )
        parser.add_argument("--input", required=True, help="Clean P6 PPM image.")
        parser.add_argument("--output", required=True, help="Where to write the degraded P6 PPM image.")
        parser.add_argument("--seed", type=int, default=0, help="Seed of the degradation random stream.")

    def handle(self, **options):
        params = parse_params(options["params"])
        if "kind" in params:
            raise DegradationError("pass the kind with --kind, not --params")
        try:
            spec = DegradationSpec(kind=options["kind"], **params)
        except TypeError as error:
            raise DegradationError(str(error)) from error
        degraded = degrade(load_ppm(options["input"]), spec, make_rng(options["seed"], Stream.DEGRADE))
        save_ppm(degraded, options["output"])
        self.write(f"wrote {options['output']}")
