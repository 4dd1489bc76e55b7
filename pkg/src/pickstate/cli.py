"""``pickstate`` command line."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .io import default_out_root, write_json


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="pipeline config JSON; flags override its fields")
    p.add_argument("--seed", type=int, help="master seed (default 42)")
    p.add_argument("--out", required=out_required, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pickstate", description="Pick-state classification on synthetic gripper data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic corpus")
    _common(p)
    p.add_argument("--n-success", type=int)
    p.add_argument("--n-fail", type=int)
    p.add_argument("--hard", action="store_true", default=None, help="triple the sensor noise")

    p = sub.add_parser("prep", help="preprocess and label a corpus")
    _common(p)
    p.add_argument("--in", dest="src", required=True)

    p = sub.add_parser("build", help="split, augment and window a preprocessed corpus")
    _common(p)
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("model", choices=("rf", "mlp"))
    _common(p, out_required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--split", help="split manifest; required for mlp")

    p = sub.add_parser("eval", help="evaluate trained models on the test split")
    _common(p)
    p.add_argument("--model", action="append", required=True, help="model JSON (repeatable)")
    p.add_argument("--windows", required=True)
    p.add_argument("--trials", required=True, help="preprocessed trial directory")
    p.add_argument("--split", help="split manifest; test ids are taken from it")
    p.add_argument("--svg", action="store_true", help="also write SVG timelines")

    p = sub.add_parser("ablate", help="retrain on sensor-group subsets")
    _common(p)
    p.add_argument("--in", dest="src", required=True, help="preprocessed trial directory")
    p.add_argument("--subsets", nargs="+", help='e.g. force pressure+flex all (default: each group and all)')

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p)
    p.add_argument("--n-success", type=int)
    p.add_argument("--n-fail", type=int)
    p.add_argument("--hard", action="store_true", default=None)
    p.add_argument("--alpha", type=float)
    p.add_argument("--svg", action="store_true")
    return parser


def _config(args) -> pl.PipelineConfig:
    return pl.load_config(
        args.config,
        seed=args.seed,
        n_success=getattr(args, "n_success", None),
        n_fail=getattr(args, "n_fail", None),
        hard=getattr(args, "hard", None),
        alpha=getattr(args, "alpha", None),
    )


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else default_out_root() / default


def run(args) -> None:
    cfg = _config(args)
    cmd = args.command
    if cmd == "simulate":
        trials = pl.stage_simulate(cfg, _out(args, "raw"))
        print(f"wrote {len(trials)} trials")
    elif cmd == "prep":
        prepped, _ = pl.stage_prep(cfg, args.src, _out(args, "prepped"))
        print(f"preprocessed {len(prepped)} trials")
    elif cmd == "build":
        table, split = pl.stage_build(cfg, args.src, _out(args, "windows"))
        print(f"{len(table)} windows; split {len(split.train)}/{len(split.val)}/{len(split.test)}")
    elif cmd == "train":
        if args.model == "rf":
            pl.stage_train_rf(cfg, args.windows, args.out, args.split)
        else:
            if not args.split:
                raise SystemExit("train mlp needs --split")
            pl.stage_train_mlp(cfg, args.windows, args.split, args.out)
        print(f"wrote {args.out}")
    elif cmd == "eval":
        reports = pl.stage_eval(cfg, args.model, args.windows, args.trials, args.split)
        out = pl.emit_report(reports, _out(args, "report"), cfg, args.svg)
        for kind, r in sorted(reports.items()):
            print(f"{kind}: accuracy {r.accuracy:.3f}, event error {r.event_time['mean_abs_error_s']}")
        print(f"wrote {out}")
    elif cmd == "ablate":
        subsets = pl.parse_subsets(args.subsets) if args.subsets else pl.DEFAULT_SUBSETS
        rows = pl.stage_ablate(cfg, args.src, subsets)
        out = pl.write_ablation(rows, _out(args, "ablation"), cfg)
        for r in rows:
            print(f"{r['subset']:>24} {r['model']:>3}  acc {r['accuracy']:.3f}  "
                  f"pre-failure recall {r['prefailure_recall']}  picked recall {r['picked_recall']}")
        print(f"wrote {out}")
    elif cmd == "pipeline":
        out = _out(args, "")
        rf, mlp = pl.run_pipeline(cfg, out, args.svg)
        write_json(out / "config.json", {**cfg.to_dict(), **cfg.stamp()})
        for r in (rf, mlp):
            print(f"{r.model_kind}: accuracy {r.accuracy:.3f}, event error {r.event_time['mean_abs_error_s']}")
        print(f"wrote {out / 'report'}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
