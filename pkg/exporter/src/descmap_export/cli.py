"""Command line interface for the descriptor map exporter.

Exit codes: 0 success, 2 usage errors (including unknown model names),
4 image problems, 5 weights problems, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ImageError, UsageError, WeightsError
from .export import export_hpatches, export_image, load_network
from .models import MODELS


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True,
                        help="network to run (see `models`)")
    parser.add_argument("--weights-dir", default=None,
                        help="directory holding checkpoint files "
                        "(default: $DESCMAP_WEIGHTS_DIR or ./weights)")
    parser.add_argument("--random-init", action="store_true",
                        help="skip checkpoint loading; use seeded random "
                        "weights (for pipeline tests)")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for --random-init weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descmap-export",
        description="Export dense descriptor maps from pretrained networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="export one image")
    _add_model_flags(p_exp)
    p_exp.add_argument("--image", required=True, help="input image path")
    p_exp.add_argument("--out", required=True, help="output .npy path")
    p_exp.add_argument("--scores", default=None,
                       help="also write a score map .npy (models that "
                       "produce one)")

    p_hp = sub.add_parser("export-hpatches",
                          help="export every sequence under a dataset root")
    _add_model_flags(p_hp)
    p_hp.add_argument("--root", required=True,
                      help="directory of i_*/v_* sequence folders")
    p_hp.add_argument("--out", required=True, help="output directory")

    sub.add_parser("models", help="list available models")
    return parser


def _lookup_model(name: str):
    if name not in MODELS:
        known = ", ".join(sorted(MODELS))
        raise UsageError(f"unknown model {name!r} (available: {known})")
    return MODELS[name]


def _cmd_export(args) -> int:
    spec = _lookup_model(args.model)
    module = load_network(spec, random_init=args.random_init,
                          seed=args.seed, weights_dir=args.weights_dir)
    score_path = Path(args.scores) if args.scores else None
    info = export_image(spec, module, Path(args.image), Path(args.out),
                        score_path=score_path)
    print(f"{args.model}: {info['image']} -> {args.out} "
          f"grid {info['grid'][0]}x{info['grid'][1]}")
    return 0


def _cmd_export_hpatches(args) -> int:
    spec = _lookup_model(args.model)
    module = load_network(spec, random_init=args.random_init,
                          seed=args.seed, weights_dir=args.weights_dir)
    manifest = export_hpatches(spec, module, Path(args.root), Path(args.out))
    print(f"{args.model}: exported {len(manifest['sequences'])} sequences, "
          f"{len(manifest['pairs'])} pairs -> {args.out}")
    return 0


def _cmd_models(_args) -> int:
    for name in sorted(MODELS):
        spec = MODELS[name]
        scores = "descriptors+scores" if spec.emits_scores else "descriptors"
        print(f"{name}: {spec.channels}d, stride {spec.stride}, "
              f"offset {spec.offset}, rf {spec.receptive_field}, {scores}")
    return 0


_COMMANDS = {
    "export": _cmd_export,
    "export-hpatches": _cmd_export_hpatches,
    "models": _cmd_models,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except WeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
