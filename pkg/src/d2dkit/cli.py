"""Command-line entry point wiring all modules together.

Subcommands: describe, detect, match, eval-hpatches, ablate, sweep-rrs,
repeatability, heatmap, bench. Every run with identical inputs and flags
produces byte-identical output files at any --threads setting; the only
exception is the wall-clock columns of `bench`.

Exit codes: 0 success, 2 usage, then one distinct code per failure class
(see EXIT_CODES), 1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .detect import extract_topk, save_keypoints
from .errors import (
    D2DKitError,
    DataError,
    DegenerateInputError,
    FormatError,
    NotFoundError,
    PreconditionError,
    ValidationError,
)
from .evaluation import ablation_run, evaluate_sequences, repeatability_table
from .match import mutual_nn, save_matches
from .refdesc import DESCRIPTOR_NAME, describe_dense
from .saliency import (
    RsWindow,
    absolute_saliency,
    absolute_saliency_naive,
    compute_score_map,
    d2d_score,
    relative_saliency,
    relative_saliency_naive,
)
from .tensor_io import (
    GridGeometry,
    DescriptorMap,
    list_hpatches_sequences,
    load_descriptor_map,
    load_hpatches_sequence,
    load_image,
    save_descriptor_map,
    to_grayscale,
)
from .viz import render_heatmaps

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CODES = {
    FormatError: 3,
    ValidationError: 4,
    DataError: 5,
    NotFoundError: 6,
    PreconditionError: 7,
    DegenerateInputError: 8,
}

SCORE_MODES = ("as", "rs", "both")
BENCH_CSV_HEADER = (
    "kernel grid_h grid_w channels radius step"
    " naive_ms optimized_ms speedup max_abs_diff checksum"
)
ABLATE_CSV_HEADER = "mode mean_mma pairs_used excluded_pairs degenerate_pairs"
SWEEP_CSV_HEADER = "r mean_mma"


def _add_window_flags(p: argparse.ArgumentParser):
    p.add_argument("--r-rs", dest="r_rs", type=int, default=5,
                   help="neighbourhood radius of the relative score (default 5)")
    p.add_argument("--step", type=int, default=2,
                   help="neighbour sampling step (default 2)")


def _add_mode_flag(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=SCORE_MODES, default="both",
                   help="score to detect on (default both)")


def _window(args) -> RsWindow:
    return RsWindow(radius=args.r_rs, sample_step=args.step)


def _descriptor_source(desc_dir):
    """Return descriptor_for(sequence, index0) reading NPY files or running
    the reference descriptor on the sequence images."""
    if desc_dir is None:
        return lambda seq, i: describe_dense(to_grayscale(seq.images[i]))
    base = Path(desc_dir)

    def from_files(seq, i):
        return load_descriptor_map(base / seq.name / f"{i + 1}.npy")

    return from_files


def _load_sequences(root):
    return [load_hpatches_sequence(d) for d in list_hpatches_sequences(root)]


def _collect_map_pairs(root, desc_dir):
    """All (1, k) descriptor-map pairs with homographies across the root."""
    source = _descriptor_source(desc_dir)
    pairs = []
    for seq in _load_sequences(root):
        maps = [source(seq, i) for i in range(6)]
        for pair_k in range(2, 7):
            pairs.append((maps[0], maps[pair_k - 1], seq.homographies[pair_k - 2]))
    return pairs


def cmd_describe(args) -> None:
    gray = to_grayscale(load_image(args.image))
    dmap = describe_dense(gray)
    save_descriptor_map(dmap, args.out)
    hf, wf = dmap.grid_shape
    print(f"wrote {args.out}: {hf}x{wf} grid, {dmap.channels} channels")


def cmd_detect(args) -> None:
    dmap = load_descriptor_map(args.desc)
    smap = compute_score_map(dmap, args.mode, _window(args))
    kps = extract_topk(smap, dmap, args.k)
    save_keypoints(kps, args.out, desc_path=args.descriptors)
    print(f"wrote {args.out}: {len(kps)} keypoints ({args.mode} score)")


def cmd_match(args) -> None:
    window = _window(args)
    sets = []
    for path in (args.desc_a, args.desc_b):
        dmap = load_descriptor_map(path)
        smap = compute_score_map(dmap, args.mode, window)
        sets.append(extract_topk(smap, dmap, args.k))
    matches = mutual_nn(sets[0], sets[1])
    save_matches(matches, args.out)
    print(f"wrote {args.out}: {len(matches)} mutual matches "
          f"from {len(sets[0])}/{len(sets[1])} keypoints")


def cmd_eval_hpatches(args) -> None:
    sequences = _load_sequences(args.root)
    parameters = {
        "r_rs": args.r_rs,
        "step": args.step,
        "descriptors": "precomputed" if args.desc_dir else DESCRIPTOR_NAME,
    }
    report = evaluate_sequences(
        sequences,
        _descriptor_source(args.desc_dir),
        args.mode,
        args.k,
        _window(args),
        threads=args.threads,
        parameters=parameters,
    )
    report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    overall = report.scope("overall")
    print(f"wrote {args.out}: {overall['pairs']} pairs, "
          f"mean MMA {overall['mean_mma']:.4f}")


def cmd_ablate(args) -> None:
    pairs = _collect_map_pairs(args.root, args.desc_dir)
    window = _window(args)
    lines = [ABLATE_CSV_HEADER]
    for mode in SCORE_MODES:
        res = ablation_run(pairs, mode, args.k, window)
        lines.append(
            f"{mode} {res.mean_mma!r} {res.pairs_used}"
            f" {res.excluded_pairs} {res.degenerate_pairs}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(pairs)} pairs x {len(SCORE_MODES)} modes")


def _parse_radii(text: str) -> list[int]:
    try:
        radii = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(f"--r expects comma-separated integers, got {text!r}")
    if not radii or any(r < 1 for r in radii):
        raise ValidationError(f"radii must be positive integers, got {text!r}")
    return radii


def cmd_sweep_rrs(args) -> None:
    radii = _parse_radii(args.r)
    pairs = _collect_map_pairs(args.root, args.desc_dir)
    lines = [SWEEP_CSV_HEADER]
    for r in radii:
        window = RsWindow(radius=r, sample_step=args.step)
        res = ablation_run(pairs, "rs", args.k, window)
        lines.append(f"{r} {res.mean_mma!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}: radii {','.join(str(r) for r in radii)}")


def cmd_repeatability(args) -> None:
    window = _window(args)
    detector_outputs = {mode: [] for mode in SCORE_MODES}
    homographies = []
    image_sizes = []
    source = _descriptor_source(args.desc_dir)
    for seq in _load_sequences(args.root):
        maps = [source(seq, i) for i in range(6)]
        per_mode = {mode: [] for mode in SCORE_MODES}
        for dmap in maps:
            as_map = absolute_saliency(dmap)
            rs_map = relative_saliency(dmap, window)
            per_mode["as"].append(extract_topk(as_map, None, args.k))
            per_mode["rs"].append(extract_topk(rs_map, None, args.k))
            per_mode["both"].append(extract_topk(d2d_score(as_map, rs_map), None, args.k))
        for pair_k in range(2, 7):
            homographies.append(seq.homographies[pair_k - 2])
            image_sizes.append(maps[pair_k - 1].source_image_size)
            for mode in SCORE_MODES:
                detector_outputs[mode].append(
                    (per_mode[mode][0], per_mode[mode][pair_k - 1])
                )
    table = repeatability_table(
        detector_outputs, homographies, eps=args.eps, image_sizes=image_sizes
    )
    payload = table.to_json_dict()
    payload["eps"] = args.eps
    payload["k"] = args.k
    payload["pairs"] = len(homographies)
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}: {len(homographies)} pairs, "
          f"detectors {','.join(SCORE_MODES)}")


def cmd_heatmap(args) -> None:
    dmap = load_descriptor_map(args.desc)
    as_map = absolute_saliency(dmap)
    rs_map = relative_saliency(dmap, _window(args))
    paths = render_heatmaps(as_map, rs_map, args.out_prefix, fmt=args.format)
    print(f"wrote {len(paths)} heatmaps under {args.out_prefix}_*.{args.format}")


def _median_ms(fn, fn_args, repeats: int):
    """Median wall time in ms over `repeats` calls, plus the last result."""
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*fn_args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1000.0, result


def cmd_bench(args) -> None:
    if args.repeats < 1:
        raise ValidationError(f"--repeats must be >= 1, got {args.repeats}")
    rng = np.random.default_rng(args.seed)
    data = rng.standard_normal(
        (args.grid_h, args.grid_w, args.channels)
    ).astype(np.float32)
    dmap = DescriptorMap(
        data, GridGeometry(1, 0, 1), False, (args.grid_h, args.grid_w)
    )
    window = _window(args)
    kernels = [
        ("as", absolute_saliency, absolute_saliency_naive, (dmap,)),
        ("rs", relative_saliency, relative_saliency_naive, (dmap, window)),
    ]
    lines = [BENCH_CSV_HEADER]
    for name, fast, naive, fn_args in kernels:
        fast_ms, fast_out = _median_ms(fast, fn_args, args.repeats)
        naive_ms, naive_out = _median_ms(naive, fn_args, args.repeats)
        diff = float(np.abs(fast_out.values - naive_out.values).max())
        checksum = hashlib.sha256(fast_out.values.tobytes()).hexdigest()[:16]
        lines.append(
            f"{name} {args.grid_h} {args.grid_w} {args.channels}"
            f" {args.r_rs} {args.step}"
            f" {naive_ms!r} {fast_ms!r} {naive_ms / fast_ms!r}"
            f" {diff!r} {checksum}"
        )
        print(f"{name}: optimized {fast_ms:.2f} ms, naive {naive_ms:.2f} ms,"
              f" speedup {naive_ms / fast_ms:.1f}x")
    Path(args.out).write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2dkit",
        description="Keypoint detection on dense descriptor maps, plus "
        "matching and homography-based evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"d2dkit {__version__}")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for commands that parallelize (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("describe", help="dense reference descriptors for an image")
    p.add_argument("--image", required=True, help="input image (PGM/PNG/PPM)")
    p.add_argument("--out", required=True, help="output descriptor NPY (+ JSON sidecar)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("detect", help="top-K keypoints from a descriptor map")
    p.add_argument("--desc", required=True, help="descriptor map NPY")
    p.add_argument("--k", type=int, required=True, help="number of keypoints")
    _add_window_flags(p)
    _add_mode_flag(p)
    p.add_argument("--out", required=True, help="output keypoint CSV")
    p.add_argument("--descriptors", default=None,
                   help="optional NPY for the keypoint descriptors")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("match", help="detect in two maps and match mutually")
    p.add_argument("--desc-a", required=True, help="descriptor map NPY, image a")
    p.add_argument("--desc-b", required=True, help="descriptor map NPY, image b")
    p.add_argument("--k", type=int, required=True, help="keypoints per image")
    _add_window_flags(p)
    _add_mode_flag(p)
    p.add_argument("--out", required=True, help="output match CSV")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval-hpatches", help="MMA report over a sequence root")
    p.add_argument("--root", required=True, help="root holding v_*/i_* sequences")
    p.add_argument("--desc-dir", default=None,
                   help="precomputed maps <dir>/<seq>/<1..6>.npy (default: "
                   "run the reference descriptor)")
    p.add_argument("--k", type=int, required=True, help="keypoints per image")
    _add_window_flags(p)
    _add_mode_flag(p)
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--csv", default=None, help="optional MMA-curve CSV")
    p.set_defaults(func=cmd_eval_hpatches)

    p = sub.add_parser("ablate", help="mean MMA for as/rs/both score modes")
    p.add_argument("--root", required=True)
    p.add_argument("--desc-dir", default=None)
    p.add_argument("--k", type=int, required=True)
    _add_window_flags(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-rrs", help="relative-score radius sweep")
    p.add_argument("--root", required=True)
    p.add_argument("--desc-dir", default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r", default="5", help="comma-separated radii (default 5)")
    p.add_argument("--step", type=int, default=2)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_sweep_rrs)

    p = sub.add_parser("repeatability",
                       help="cross-detector normalized repeatability table")
    p.add_argument("--root", required=True)
    p.add_argument("--desc-dir", default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--eps", type=float, default=3.0,
                   help="pixel tolerance (default 3)")
    _add_window_flags(p)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=cmd_repeatability)

    p = sub.add_parser("heatmap", help="saliency heatmap images for a map")
    p.add_argument("--desc", required=True, help="descriptor map NPY")
    _add_window_flags(p)
    p.add_argument("--out-prefix", required=True,
                   help="files written as <prefix>_<view>.<fmt>")
    p.add_argument("--format", choices=("pgm", "png"), default="pgm")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("bench", help="time saliency kernels vs naive twins")
    p.add_argument("--grid-h", type=int, default=57)
    p.add_argument("--grid-w", type=int, default=57)
    p.add_argument("--channels", type=int, default=128)
    _add_window_flags(p)
    p.add_argument("--repeats", type=int, default=11,
                   help="median over this many runs (default 11)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/version
        return int(exc.code or 0)
    try:
        args.func(args)
    except D2DKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
