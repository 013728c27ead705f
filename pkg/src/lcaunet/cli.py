"""Command line entry point: train, eval, predict, bench-attn, make-synth."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig, parse_config
from .windows import ConfigurationError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("lcaunet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML/JSON config file")
    p.add_argument("--preset", default="desk", help="desk (default) or full")
    group = p.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=f.name.upper())


def _config_from_args(args) -> TrainConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return parse_config(args.config, overrides, preset=args.preset)


def cmd_train(args) -> int:
    from .train import train

    cfg = _config_from_args(args)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out_dir) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    result = train(cfg)
    print(json.dumps({"best_val_dice": result.best_val_dice,
                      "best_checkpoint": str(result.best_checkpoint),
                      "epochs": len(result.history)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_isic_dir
    from .train import evaluate, load_checkpoint

    samples = None
    if args.data_dir:
        _, cfg, _ = load_checkpoint(args.checkpoint)
        samples = load_isic_dir(args.data_dir, seed=cfg.seed, size=cfg.img_size,
                                gray_world=cfg.gray_world).splits[args.split]
    res = evaluate(args.checkpoint, samples, split=args.split, out_dir=args.out_dir)
    print(json.dumps(res["aggregate"]))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train import predict

    status = predict(args.checkpoint, args.images, args.out_dir, save_edges=args.edges,
                     overlay=args.overlay, gt_dir=args.gt_dir)
    failed = {k: v for k, v in status.items() if v != "ok"}
    for k, v in failed.items():
        print(f"{k}: {v}", file=sys.stderr)
    print(json.dumps({"written": len(status) - len(failed), "failed": len(failed)}))
    return EXIT_RUNTIME if failed and len(failed) == len(status) else EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_attention, growth_exponent, write_csv

    rows = bench_attention(args.grids, args.dim, args.window, args.heads, args.reps, args.seed)
    path = write_csv(rows, Path(args.out_dir) / "bench_attention.csv")
    tokens = [r["tokens"] for r in rows]
    summary = {"csv": str(path)}
    if len(rows) > 1:
        summary["exponent_global"] = growth_exponent(tokens, [r["time_global_s"] for r in rows])
        summary["exponent_local"] = growth_exponent(tokens, [r["time_local_s"] for r in rows])
    print(json.dumps(summary))
    return EXIT_OK


def cmd_make_synth(args) -> int:
    from .data import synth_lesion_sample, write_sample_png

    for i in range(args.n):
        write_sample_png(synth_lesion_sample(args.seed + i, args.size, args.size), args.out_dir)
    print(json.dumps({"written": args.n, "out_dir": str(args.out_dir)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lcaunet", description="Edge/body fusion lesion segmentation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data-dir", type=Path, help="image/mask directory (default: checkpoint's data)")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--out-dir", type=Path, default=Path("eval"))
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write predicted masks")
    pr.add_argument("--checkpoint", required=True, type=Path)
    pr.add_argument("--out-dir", type=Path, default=Path("predictions"))
    pr.add_argument("--edges", action="store_true", help="also write the 4 edge maps")
    pr.add_argument("--overlay", action="store_true", help="write GT/prediction contour overlays")
    pr.add_argument("--gt-dir", type=Path, help="where <stem>_segmentation.png masks live")
    pr.add_argument("images", nargs="+", type=Path)
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench-attn", help="global vs local cross-attention cost table")
    b.add_argument("--grids", type=int, nargs="+", default=[14, 28, 56, 112])
    b.add_argument("--dim", type=int, default=32)
    b.add_argument("--window", type=int, default=7)
    b.add_argument("--heads", type=int, default=1)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out-dir", type=Path, default=Path("bench"))
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("make-synth", help="write a synthetic PNG dataset")
    m.add_argument("--n", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--size", type=int, default=224)
    m.add_argument("--out-dir", type=Path, default=Path("synth"))
    m.set_defaults(func=cmd_make_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
