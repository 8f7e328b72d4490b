"""Command-line entry point: synth, batch, serve, eval.

Exit codes: 0 full success, 1 any per-record/runtime failure, 2 usage or
configuration error. Every randomized behavior is controlled by --seed
(fallback: the HAZEFORGE_SEED environment variable); identical flags plus
identical inputs give bit-identical outputs.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import HazeParams
from .dataset import (
    MODE_BASELINE,
    MixPolicy,
    SampleRecord,
    discover_samples,
    run_batch,
    synthesize_one,
)
from .depth_io import NormalizationPolicy
from .errors import HazeforgeError, ParameterError
from .evaluation import evaluate, render_table, report_json
from .image_io import write_png
from .sampling import SamplerConfig, derive_image_seed, sample_params
from .stream import StreamSettings, serve

SEED_ENV = "HAZEFORGE_SEED"
ENDPOINT_ENV = "HAZEFORGE_ENDPOINT"

_CONFIG_KEYS = {
    "seed", "workers", "beta_range", "airlight_range",
    "clip_percentile", "target_max", "disparity_epsilon", "disparity",
    "mix", "baseline_random_t", "depth_kind",
    "iou_threshold", "confidence_threshold", "interpolation",
    "mix_probability", "resample_per_epoch", "endpoint",
}


def _add_seed_flag(parser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help=f"64-bit global seed driving all randomness (default: 0, or ${SEED_ENV} if set)",
    )
    parser.add_argument(
        "--config", type=Path, default=None, metavar="PATH",
        help="JSON config file; explicit flags always win over its values",
    )


def _add_sampler_flags(parser) -> None:
    parser.add_argument(
        "--beta-range", type=float, nargs=2, metavar=("LO", "HI"), default=(1.0, 3.0),
        help="scattering coefficient draw range, 1/depth-unit (default: 1.0 3.0)",
    )
    parser.add_argument(
        "--airlight-range", type=float, nargs=2, metavar=("LO", "HI"), default=(150.0, 255.0),
        help="airlight draw range, intensity in [0, 255] (default: 150 255)",
    )


def _add_depth_flags(parser) -> None:
    parser.add_argument(
        "--disparity", action="store_true",
        help="treat depth files as disparity (inverse depth) and invert them (default: off)",
    )
    parser.add_argument(
        "--clip-percentile", type=float, default=99.9,
        help="depth normalization clip percentile, in (50, 100] (default: 99.9)",
    )
    parser.add_argument(
        "--target-max", type=float, default=1.0,
        help="normalized depth maximum, depth-units (default: 1.0)",
    )
    parser.add_argument(
        "--disparity-epsilon", type=float, default=1e-6,
        help="floor applied to disparity before inversion (default: 1e-6)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hazeforge",
        description="Physically based haze synthesis and detection-metrics toolkit.",
    )
    parser.add_argument("--version", action="version", version="hazeforge 0.1.0")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_synth = sub.add_parser(
        "synth", help="synthesize one hazy image from an image + depth pair"
    )
    p_synth.add_argument("--image", type=Path, required=True, help="clean input image (RGB)")
    p_synth.add_argument("--depth", type=Path, default=None,
                         help="depth file (.pfm, .png 16-bit, .f32); optional with --baseline-random-t")
    p_synth.add_argument("--depth-kind", choices=("pfm", "png16", "rawf32"), default=None,
                         help="override the format inferred from the depth file extension")
    p_synth.add_argument("--out", type=Path, required=True, help="output PNG path")
    p_synth.add_argument("--beta", type=float, default=None,
                         help="scattering coefficient, 1/depth-unit, > 0 (default: sampled from --beta-range)")
    p_synth.add_argument("--airlight", type=float, default=None,
                         help="airlight intensity in [0, 255] (default: sampled from --airlight-range)")
    p_synth.add_argument("--baseline-random-t", action="store_true",
                         help="use the depth-free flat-transmission baseline instead of depth (default: off)")
    _add_sampler_flags(p_synth)
    _add_depth_flags(p_synth)
    _add_seed_flag(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_batch = sub.add_parser(
        "batch", help="synthesize a hazy counterpart dataset offline"
    )
    p_batch.add_argument("--images", type=Path, required=True, help="clean image directory")
    p_batch.add_argument("--depths", type=Path, required=True, help="depth directory (matched by relative stem)")
    p_batch.add_argument("--labels", type=Path, default=None, help="YOLO label directory (optional)")
    p_batch.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p_batch.add_argument("--mix", type=str, default="combined",
                         help="clean copies policy: hazy-only | combined | ratio=R (default: combined)")
    p_batch.add_argument("--workers", type=int, default=None,
                         help="parallel workers (default: logical CPU count)")
    p_batch.add_argument("--baseline-random-t", action="store_true",
                         help="synthesize with the flat-transmission baseline (default: off)")
    _add_sampler_flags(p_batch)
    _add_depth_flags(p_batch)
    _add_seed_flag(p_batch)
    p_batch.set_defaults(func=cmd_batch)

    p_serve = sub.add_parser(
        "serve", help="run the online augmentation service for a training loop"
    )
    p_serve.add_argument("--images", type=Path, required=True, help="clean image directory")
    p_serve.add_argument("--depths", type=Path, required=True, help="depth directory")
    p_serve.add_argument("--endpoint", type=str, default=None,
                         help=f"HOST:PORT to bind (default: 127.0.0.1:0, or ${ENDPOINT_ENV} if set; port 0 picks a free port)")
    p_serve.add_argument("--mix-probability", type=float, default=0.5,
                         help="probability a request is answered hazy rather than clean, in [0, 1] (default: 0.5)")
    p_serve.add_argument("--resample-per-epoch", choices=("on", "off"), default="on",
                         help="draw new haze parameters each epoch (default: on)")
    p_serve.add_argument("--workers", type=int, default=None,
                         help="max concurrent syntheses (default: logical CPU count)")
    _add_sampler_flags(p_serve)
    _add_depth_flags(p_serve)
    _add_seed_flag(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_eval = sub.add_parser(
        "eval", help="score detections against ground truth (mAP, precision, recall)"
    )
    p_eval.add_argument("--detections", type=Path, required=True,
                        help="detections file: sample_id class xmin ymin xmax ymax confidence")
    p_eval.add_argument("--truths", type=Path, required=True,
                        help="ground-truth file: sample_id class xmin ymin xmax ymax")
    p_eval.add_argument("--iou-threshold", type=float, default=0.5,
                        help="IoU needed for a match, in (0, 1] (default: 0.5)")
    p_eval.add_argument("--confidence-threshold", type=float, default=0.25,
                        help="operating point for precision/recall, in [0, 1] (default: 0.25)")
    p_eval.add_argument("--interpolation", choices=("all", "11point"), default="all",
                        help="AP interpolation rule (default: all)")
    p_eval.add_argument("--out", type=Path, default=None,
                        help="write the JSON report here instead of stdout")
    _add_seed_flag(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def _scan_config_path(argv) -> Path | None:
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if arg.startswith("--config="):
            return Path(arg[len("--config="):])
    return None


def _load_config_defaults(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ParameterError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise ParameterError(f"unknown config keys in {path}: {unknown}")
    if "resample_per_epoch" in data and isinstance(data["resample_per_epoch"], bool):
        data["resample_per_epoch"] = "on" if data["resample_per_epoch"] else "off"
    return data


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ParameterError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _sampler_config(args, seed: int) -> SamplerConfig:
    return SamplerConfig(
        beta_range=tuple(args.beta_range),
        airlight_range=tuple(args.airlight_range),
        global_seed=seed,
    )


def _normalization_policy(args) -> NormalizationPolicy:
    return NormalizationPolicy(
        clip_percentile=args.clip_percentile,
        target_max=args.target_max,
        disparity_epsilon=args.disparity_epsilon,
    )


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ParameterError(f"endpoint must look like HOST:PORT, got {text!r}")
    try:
        return (host or "127.0.0.1", int(port))
    except ValueError:
        raise ParameterError(f"bad port in endpoint {text!r}") from None


def cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    config = _sampler_config(args, seed)
    policy = _normalization_policy(args)
    if not args.baseline_random_t and args.depth is None:
        raise ParameterError("--depth is required unless --baseline-random-t is given")

    sample_id = args.image.name
    record = SampleRecord(
        sample_id=sample_id,
        image_path=args.image,
        depth_path=args.depth,
        label_path=None,
        image_seed=derive_image_seed(seed, sample_id),
        mode=MODE_BASELINE if args.baseline_random_t else "depth_based",
    )
    override = None
    if args.beta is not None or args.airlight is not None:
        sampled = sample_params(config, record.image_seed)
        override = HazeParams(
            beta=args.beta if args.beta is not None else sampled.beta,
            airlight=args.airlight if args.airlight is not None else sampled.airlight,
        )
    image, applied_params = synthesize_one(
        record, config, policy,
        disparity=args.disparity, params_override=override, depth_kind=args.depth_kind,
    )
    applied = applied_params.to_dict()
    write_png(image, args.out)
    print(json.dumps({"sample_id": sample_id, "out": str(args.out), "mode": record.mode,
                      "image_seed": record.image_seed, "applied_params": applied}))
    return 0


def cmd_batch(args) -> int:
    seed = _resolve_seed(args)
    config = _sampler_config(args, seed)
    policy = _normalization_policy(args)
    mix = MixPolicy.parse(args.mix)
    if args.workers is not None and args.workers < 1:
        raise ParameterError(f"workers must be >= 1, got {args.workers}")

    records, skipped = discover_samples(args.images, args.depths, args.labels, seed)
    if args.baseline_random_t:
        records = [replace(rec, mode=MODE_BASELINE) for rec in records]
    manifest = run_batch(
        records, config, policy, mix,
        out_dir=args.out, workers=args.workers,
        disparity=args.disparity, skipped=skipped,
    )
    ok = len(manifest.records) - len(manifest.failed)
    print(f"batch: {ok}/{len(manifest.records)} outputs written to {args.out}"
          f" ({len(skipped)} samples skipped, no depth)")
    for failure in manifest.failed:
        print(f"failed: {failure['sample_id']} ({failure['mode']}): {failure['error']}",
              file=sys.stderr)
    return 1 if manifest.failed else 0


def cmd_serve(args) -> int:
    seed = _resolve_seed(args)
    config = _sampler_config(args, seed)
    policy = _normalization_policy(args)
    endpoint_text = args.endpoint or os.environ.get(ENDPOINT_ENV) or "127.0.0.1:0"
    endpoint = _parse_endpoint(endpoint_text)
    settings = StreamSettings(
        mix_probability=args.mix_probability,
        resample_per_epoch=args.resample_per_epoch == "on",
        disparity=args.disparity,
        workers=args.workers or 0,
    )
    records, skipped = discover_samples(args.images, args.depths, None, seed)
    if skipped:
        print(f"serve: {len(skipped)} samples have no depth and will not be served",
              file=sys.stderr)
    serve(records, config, policy, settings, endpoint)
    return 0


def cmd_eval(args) -> int:
    report = evaluate(
        args.detections, args.truths,
        iou_threshold=args.iou_threshold,
        confidence_threshold=args.confidence_threshold,
        interpolation=args.interpolation,
    )
    text = report_json(report)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
        print(render_table(report))
    else:
        print(text)
        print(render_table(report), file=sys.stderr)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_path = _scan_config_path(argv)
        if config_path is not None:
            parser.set_defaults(**_load_config_defaults(config_path))
        args = parser.parse_args(argv)
        return args.func(args)
    except ParameterError as exc:
        print(f"hazeforge: error: {exc}", file=sys.stderr)
        return 2
    except HazeforgeError as exc:
        print(f"hazeforge: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"hazeforge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
