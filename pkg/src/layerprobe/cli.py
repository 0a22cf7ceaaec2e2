"""Command-line entry point: ``layerprobe {train,extract,probe,boundary}``.

Exit codes: 0 success, 1 usage/config/data error, 2 numerical divergence.
"""

import argparse
import logging
from pathlib import Path
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .checkpoint import load_checkpoint
from .config import describe, load_run_config
from .errors import LayerProbeError, TrainingDivergedError
from .network import NUM_LAYERS

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2

log = logging.getLogger("layerprobe")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def parse_depths(text):
    """'0,3,13' or '0-13' or a mix such as '0-4,13'."""
    depths = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            values = range(int(lo), int(hi) + 1) if sep else [int(lo)]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid depth list {text!r}") from None
        depths.update(values)
    bad = [d for d in depths if not 0 <= d <= NUM_LAYERS]
    if bad or not depths:
        raise argparse.ArgumentTypeError(f"depths must lie in 0..{NUM_LAYERS}, got {text!r}")
    return sorted(depths)


def build_parser():
    epilog = "config keys (JSON, unknown keys rejected) and defaults:\n" + "\n".join(describe()) + (
        "\n\nA top-level 'seed' (or --seed) overrides net.seed, train.seed and data.seed."
    )
    parser = _Parser(
        prog="layerprobe",
        description="Train the 13-layer bias-free CNN and analyze its layerwise feature geometry.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
        p.add_argument("--output", type=Path, help="output directory (default: output.directory)")
        p.add_argument("--threads", type=int, default=1, help="BLAS worker threads; 1 is bit-reproducible")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    fmt = argparse.RawDescriptionHelpFormatter
    common(sub.add_parser("train", help="train and write checkpoints + training log", epilog=epilog,
                          formatter_class=fmt))
    p = common(sub.add_parser("extract", help="write per-depth feature stores", epilog=epilog, formatter_class=fmt))
    p.add_argument("--checkpoint", type=Path, help="checkpoint (default: OUTPUT/checkpoint.bpnc)")
    p.add_argument("--depths", type=parse_depths, help="e.g. 0-13 or 0,6,13 (default: probes.depths)")
    for name, text in (("probe", "k-NN / SVM accuracy, PCA spectra, intra-class distances"),
                       ("boundary", "support vectors, margins, boundary complexity")):
        p = common(sub.add_parser(name, help=text, epilog=epilog, formatter_class=fmt))
        p.add_argument("--features", type=Path, help="feature-store directory (default: OUTPUT)")
        p.add_argument("--depths", type=parse_depths, help="default: probes.depths")
        p.add_argument("--checkpoint", type=Path, help="accepted for uniformity; unused")
    return parser


def _check_checkpoint(ckpt_net, cfg_net):
    for key in ("width", "nonlinearity", "degree", "classes", "input_channels"):
        a, b = getattr(ckpt_net, key), getattr(cfg_net, key)
        if a != b:
            raise LayerProbeError(f"checkpoint {key} {a!r} does not match config {key} {b!r}")


def run(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.apply_seed(args.seed)
    out_dir = args.output or Path(cfg.output.directory)
    depths = getattr(args, "depths", None) or sorted(set(cfg.probes.depths))
    if args.command == "train":
        _, rows = pipeline.run_train(cfg, out_dir)
        if rows:
            last = rows[-1]
            log.info("iteration %d: loss %.4f, batch accuracy %.3f", last["iteration"], last["loss"],
                     last["batch_accuracy"])
    elif args.command == "extract":
        ckpt = args.checkpoint or out_dir / "checkpoint.bpnc"
        ckpt_net, params = load_checkpoint(ckpt)
        _check_checkpoint(ckpt_net, cfg.net)
        cfg.net = ckpt_net
        paths = pipeline.run_extract(cfg, params, out_dir, depths)
        log.info("wrote %d feature stores to %s", len(paths), out_dir)
    elif args.command == "probe":
        pipeline.run_probe(cfg, args.features or out_dir, out_dir, depths)
    elif args.command == "boundary":
        pipeline.run_boundary(cfg, args.features or out_dir, out_dir, depths)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            run(args)
    except TrainingDivergedError as exc:
        print(f"layerprobe: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (LayerProbeError, OSError) as exc:
        print(f"layerprobe: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
