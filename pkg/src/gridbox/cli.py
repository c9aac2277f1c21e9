"""Command-line interface.

One binary, seven subcommands: synthesize, anchors, encode-check,
loss-check, decode, eval, visualize.  A JSON config file (``--config``
or ``$GRIDBOX_CONFIG``) may hold one section of flag defaults per
subcommand; explicit flags always win.  Exit codes: 0 success, 1
validation failure or a failed check, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from . import augment, check, evaluate, rawio, visualize
from .anchors import ClusterConfig, kmeans_iou, read_anchors, split_by_scale, write_anchors
from .decode import decode_predictions, nms
from .manifest import read_manifest

CONFIG_ENV = "GRIDBOX_CONFIG"

log = logging.getLogger("gridbox")


class _Parser(argparse.ArgumentParser):
    # bad flags are validation failures: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _comma_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(","))


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="gridbox", description=__doc__)
    parser.add_argument("--config", default=os.environ.get(CONFIG_ENV),
                        help=f"JSON config file with per-command defaults "
                             f"(default: ${CONFIG_ENV})")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker pool size for parallel commands")
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = commands["synthesize"] = sub.add_parser(
        "synthesize", help="generate copy-paste artificial images")
    p.add_argument("--source-manifest", required=True)
    p.add_argument("--backgrounds", required=True, help="directory of background images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=100, help="images to generate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coverage", type=float, default=0.4,
                   help="target fraction of background area to fill")
    p.add_argument("--objects-per-round", type=int, default=8)
    p.add_argument("--images-per-round", type=int, default=4)
    p.add_argument("--image-root", default=None,
                   help="directory source image paths are relative to "
                        "(default: the manifest's directory)")
    p.set_defaults(func=cmd_synthesize)

    p = commands["anchors"] = sub.add_parser(
        "anchors", help="cluster dataset box sizes into anchors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--centroid", choices=["median", "mean"], default="median")
    p.add_argument("--image-size", type=int, default=0,
                   help="letterbox target size for box rescaling (0 = native pixels)")
    p.add_argument("--out", required=True, help="anchors file to write")
    p.set_defaults(func=cmd_anchors)

    p = commands["encode-check"] = sub.add_parser(
        "encode-check", help="encode a manifest and verify the decode round trip")
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--classes", type=int, default=0,
                   help="class count (0 = infer from the manifest)")
    p.add_argument("--image-size", type=int, default=416)
    p.add_argument("--strides", type=_comma_ints, default=(8, 16, 32))
    p.add_argument("--tolerance", type=float, default=1e-4, help="max error, pixels")
    p.set_defaults(func=cmd_encode_check)

    p = commands["loss-check"] = sub.add_parser(
        "loss-check", help="compare the analytic loss gradient with finite differences")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5, help="max relative error")
    p.add_argument("--grid-max", type=int, default=4)
    p.set_defaults(func=cmd_loss_check)

    p = commands["decode"] = sub.add_parser(
        "decode", help="decode raw tensor files into a detection dump")
    p.add_argument("--raw", nargs="+", required=True, help="raw tensor file per scale")
    p.add_argument("--anchors", required=True)
    p.add_argument("--image-id", default="image")
    p.add_argument("--conf", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--no-nms", action="store_true", help="keep all detections")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = commands["eval"] = sub.add_parser(
        "eval", help="score a detection dump against a ground-truth manifest")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=list(evaluate.PROTOCOLS), default="voc11")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--class-names", default=None, help="comma-separated names")
    p.add_argument("--out", default=None, help="write a JSON (+ .txt) report here")
    p.set_defaults(func=cmd_eval)

    p = commands["visualize"] = sub.add_parser(
        "visualize", help="draw detections or annotations onto an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--detections", default=None, help="detection dump to draw")
    p.add_argument("--manifest", default=None, help="draw this manifest's annotations")
    p.add_argument("--image-id", default=None)
    p.add_argument("--side-by-side", action="store_true",
                   help="render pre- and post-suppression panes")
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.add_argument("--no-labels", action="store_true")
    p.add_argument("--line-width", type=int, default=1)
    p.add_argument("--class-names", default=None)
    p.set_defaults(func=cmd_visualize)

    return parser, commands


def _apply_config(parser, commands, argv) -> None:
    """Install config-file values as per-subcommand defaults (flags win)."""
    path = os.environ.get(CONFIG_ENV)
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if not path:
        return
    with open(path, "r", encoding="utf-8") as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(config, dict):
        raise ValueError(f"config file {path} must hold an object of command sections")
    for section, values in config.items():
        if section not in commands:
            raise ValueError(f"config section {section!r} is not a known command")
        commands[section].set_defaults(
            **{key.replace("-", "_"): value for key, value in values.items()}
        )


def cmd_synthesize(args) -> int:
    records = read_manifest(args.source_manifest)
    image_root = args.image_root or str(Path(args.source_manifest).parent)
    cfg = augment.SynthesisConfig(
        objects_per_round=args.objects_per_round,
        images_per_round=args.images_per_round,
        coverage_target=args.coverage,
        seed=args.seed,
        output_count=args.count,
    )
    out = augment.synthesize_dataset(
        cfg, records, args.backgrounds, args.out, image_root, jobs=args.jobs
    )
    hist = augment.class_histogram(out)
    print(f"wrote {len(out)} images to {args.out}")
    print("class counts: " + ", ".join(f"{k}:{v}" for k, v in sorted(hist.items())))
    return 0


def cmd_anchors(args) -> int:
    records = read_manifest(args.manifest)
    sizes = []
    for r in records:
        scale = 1.0
        if args.image_size:
            scale = min(args.image_size / r.width, args.image_size / r.height)
        sizes.extend((a.box.w * scale, a.box.h * scale) for a in r.annotations)
    cfg = ClusterConfig(k=args.k, seed=args.seed, max_iters=args.max_iters,
                        tol=args.tol, centroid=args.centroid)
    result = kmeans_iou(sizes, cfg)
    write_anchors(result.anchors, args.out)
    flag = "" if result.converged else "  (not converged, best effort)"
    print(f"mean best-IoU {result.mean_iou:.4f} after {result.iterations} iterations{flag}")
    print("anchors: " + ", ".join(f"{a.w:.1f}x{a.h:.1f}" for a in result.anchors))
    return 0


def cmd_encode_check(args) -> int:
    records = read_manifest(args.manifest)
    anchors = read_anchors(args.anchors)
    classes = args.classes or 1 + max(
        (a.class_id for r in records for a in r.annotations), default=0
    )
    report = check.roundtrip_records(
        records, anchors, classes, args.image_size, args.strides, args.tolerance
    )
    print(report.to_text())
    return 1 if report.failures else 0


def cmd_loss_check(args) -> int:
    worst = check.gradient_check(args.instances, args.seed, args.h, args.grid_max)
    status = "ok" if worst <= args.tolerance else "FAIL"
    print(f"max relative gradient error over {args.instances} instances: "
          f"{worst:.3e}  [{status}, tolerance {args.tolerance:g}]")
    return 0 if worst <= args.tolerance else 1


def cmd_decode(args) -> int:
    raws = [rawio.read_raw_tensor(path) for path in args.raw]
    raws.sort(key=lambda r: r.grid.cell_w)
    anchors = read_anchors(args.anchors)
    groups = split_by_scale(anchors, len(raws))
    detections = []
    for raw, group in zip(raws, groups):
        detections.extend(decode_predictions(raw, group, args.conf, args.beta))
    if not args.no_nms:
        detections = nms(detections, args.nms_iou)
    rawio.write_detections({args.image_id: detections}, args.out)
    print(f"wrote {len(detections)} detections to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dets = rawio.read_detections(args.detections)
    gts = evaluate.gts_from_records(read_manifest(args.manifest))
    cfg = evaluate.EvalConfig(iou_threshold=args.iou, protocol=args.protocol)
    report = evaluate.evaluate_detections(dets, gts, cfg)
    names = args.class_names.split(",") if args.class_names else None
    print(report.to_text(names))
    if args.out:
        evaluate.write_report(report, args.out, names)
    return 0


def cmd_visualize(args) -> int:
    if bool(args.detections) == bool(args.manifest):
        raise ValueError("pass exactly one of --detections or --manifest")
    try:
        image = Image.open(args.image).convert("RGB")
    except UnidentifiedImageError as e:
        raise ValueError(f"cannot read image {args.image}: {e}") from e
    names = args.class_names.split(",") if args.class_names else None
    show_labels = not args.no_labels

    if args.manifest:
        records = read_manifest(args.manifest)
        wanted = args.image_id
        matches = [r for r in records if wanted in (None, r.image)] or records
        rendered = visualize.render(image, matches[0].annotations, names,
                                    show_labels, args.line_width)
    else:
        dets_by_image = rawio.read_detections(args.detections)
        if args.image_id is not None:
            dets = dets_by_image.get(args.image_id, [])
        elif len(dets_by_image) == 1:
            dets = next(iter(dets_by_image.values()))
        else:
            raise ValueError("--image-id is required when the dump holds several images")
        if args.side_by_side:
            rendered = visualize.render_suppression_pair(
                image, dets, nms(dets, args.nms_iou), names, show_labels, args.line_width
            )
        else:
            rendered = visualize.render(image, dets, names, show_labels, args.line_width)
    rendered.save(args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        _apply_config(parser, commands, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper())
        return args.func(args)
    except (ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
