"""``sssdet`` command line: inspect, bench, detect, train, eval, tile, split, anchors."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_cfg(path):
    from .netdef import load_config, reference_config

    p = Path(path)
    if p.exists():
        return load_config(p)
    try:
        return reference_config(path)
    except (FileNotFoundError, OSError):
        raise DataError(f"{path}: config not found") from None


def _names(path, defn):
    if path:
        return [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]
    return [str(i) for i in range(defn.region.classes)]


def _params(args, defn):
    from .weights import init_weights, load_weights

    if getattr(args, "weights", None):
        return load_weights(defn, args.weights)
    return init_weights(defn, args.seed)


def cmd_inspect(args):
    from .netdef import summarize

    defn = _load_cfg(args.cfg)
    sys.stdout.write(summarize(defn, csv=args.csv))
    return EXIT_OK


def cmd_bench(args):
    from .bench import benchmark

    if args.iterations < 1:
        raise DataError("--iterations must be >= 1")
    defn = _load_cfg(args.cfg)
    params = _params(args, defn)
    rep = benchmark(defn, params, args.iterations, args.warmup, args.threads, args.seed)
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_detect(args):
    from .inference import detect, format_detections, read_image, write_eval_detections, write_records
    from .tensor import thread_limit

    defn = _load_cfg(args.cfg)
    params = _params(args, defn)
    names = _names(args.names, defn)
    with thread_limit(args.threads):
        dets = detect(args.image, defn, params, args.conf, args.nms)
    sys.stdout.write(format_detections(dets, names))
    if args.records:
        write_records(args.records, dets, names)
    if args.eval_out:
        _, h, w = read_image(args.image).shape
        write_eval_detections(args.eval_out, dets, w, h)
    return EXIT_OK


def cmd_train(args):
    from .tensor import thread_limit
    from .training import TrainConfig, train

    defn = _load_cfg(args.cfg)
    overrides = {}
    for key, attr in (("max_iter", "max_iterations"), ("lr", "learning_rate"),
                      ("burn_in", "burn_in"), ("checkpoint_every", "checkpoint_every")):
        value = getattr(args, key)
        if value is not None:
            overrides[attr] = value
    config = TrainConfig.from_netdef(defn, **overrides)
    init = _params(args, defn) if args.weights else None
    with thread_limit(args.threads):
        result = train(args.manifest, defn, config, seed=args.seed, out_dir=args.out, params=init)
    last = result.state.running_loss
    print(f"iterations: {result.state.iteration}")
    if last is not None:
        print(f"running loss: {last:.4f}")
    print(f"weights: {Path(args.out) / 'final.weights'}")
    return EXIT_OK


def cmd_eval(args):
    from .evaluation import EvalConfig, evaluate

    names = None
    if args.names:
        names = tuple(l.strip() for l in Path(args.names).read_text().splitlines() if l.strip())
    config = EvalConfig(tuple(args.iou), names, "all" if args.all_point else "11point")
    report = evaluate(args.gt, args.det, config, out_dir=args.curves)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_tile(args):
    from .tiling import TileSpec, write_tiles

    spec = TileSpec(args.rows, args.cols, args.overlap, args.min_fraction)
    labels = args.labels or Path(args.image).with_suffix(".txt")
    paths = write_tiles(args.image, labels, args.out, spec)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_split(args):
    from .tiling import split_manifest

    entries = [l.strip() for l in Path(args.manifest).read_text().splitlines() if l.strip()]
    train, test = split_manifest(entries, args.ratio, args.seed)
    Path(args.train_out).write_text("".join(p + "\n" for p in train))
    Path(args.test_out).write_text("".join(p + "\n" for p in test))
    print(f"train: {len(train)}  test: {len(test)}")
    return EXIT_OK


def cmd_anchors(args):
    from .training import kmeans_anchors, label_path, read_labels, read_manifest

    defn = _load_cfg(args.cfg)
    sizes = [(b.w, b.h) for p in read_manifest(args.manifest) for b in read_labels(label_path(p))]
    anchors = kmeans_anchors(sizes, defn.grid_size, k=args.k, seed=args.seed)
    print("anchors=" + ", ".join(f"{w:.2f},{h:.2f}" for w, h in anchors))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="sssdet", description="SSSDet CPU detector engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("inspect", help="layer table, parameters, FLOPs, model size")
    s.add_argument("cfg")
    s.add_argument("--csv", action="store_true")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("bench", help="time forward passes on synthetic input")
    s.add_argument("--cfg", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--weights")
    g.add_argument("--random", action="store_true", help="random initialization (default)")
    s.add_argument("--iterations", type=int, default=5)
    s.add_argument("--warmup", type=int, default=1)
    s.add_argument("--threads", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("detect", help="run detection on one image")
    s.add_argument("--cfg", required=True)
    s.add_argument("--weights")
    s.add_argument("--image", required=True)
    s.add_argument("--conf", type=float, default=0.25)
    s.add_argument("--nms", type=float, default=0.6)
    s.add_argument("--names")
    s.add_argument("--records", help="write JSON-lines detection records here")
    s.add_argument("--eval-out", help="write normalized detections for `eval` here")
    s.add_argument("--threads", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("train", help="train from scratch on a manifest")
    s.add_argument("--cfg", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--weights", help="start from these weights instead of random init")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-class AP and mAP")
    s.add_argument("--gt", required=True, help="directory of label files")
    s.add_argument("--det", required=True, help="directory of detection files")
    s.add_argument("--iou", type=float, nargs="+", default=[0.5])
    s.add_argument("--names")
    s.add_argument("--curves", help="write PR-curve CSVs here")
    s.add_argument("--all-point", action="store_true", help="all-point instead of 11-point AP")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("tile", help="cut an image and its labels into a grid of tiles")
    s.add_argument("--image", required=True)
    s.add_argument("--labels")
    s.add_argument("--out", required=True)
    s.add_argument("--rows", type=int, default=4)
    s.add_argument("--cols", type=int, default=4)
    s.add_argument("--overlap", type=int, default=0)
    s.add_argument("--min-fraction", type=float, default=0.3)
    s.set_defaults(func=cmd_tile)

    s = sub.add_parser("split", help="seeded train/test split of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratio", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-out", required=True)
    s.add_argument("--test-out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("anchors", help="k-means (1 - IoU) anchor priors from labels")
    s.add_argument("--cfg", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("-k", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_anchors)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        # ConfigError and DataError are ValueErrors too
        print(f"sssdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc, (ConfigError, DataError)) else EXIT_USAGE
    except OSError as exc:
        print(f"sssdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
