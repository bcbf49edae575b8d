"""Command-line entry point: ``siamtrack {synth,train,track,eval,gradcheck,bench}``.

The dataset root comes from ``--data`` or the ``SIAMTRACK_DATA`` environment
variable. It may be a KITTI tracking root (``label_02/`` present) or a
directory of tracklet directories as written by ``synth``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointFormatError
from .config import TOY, Config, ConfigError
from .data import DataFormatError, load_kitti_tracking, load_tracklet_dir, save_tracklet, synthetic_set
from .metrics import EvalReport, MetricError, evaluate_records, one_pass_eval, oracle_predictor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DATA_ENV = "SIAMTRACK_DATA"
CHECKPOINT_NAME = "model.ckpt"
CONFIG_NAME = "config.cfg"
LOSS_NAME = "loss.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--category", help="object category filter (default: config category)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--data", type=Path, help=f"dataset root (default: ${DATA_ENV})")
    data.add_argument("--split", default=None, help="KITTI split: train, val or test")

    p = _Parser(prog="siamtrack", description="Siamese point-transformer 3D single-object tracker")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write synthetic tracklets to a directory")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--frames", type=int, default=10)

    t = sub.add_parser("train", parents=[common, data], help="train a model; writes checkpoint and loss curve")
    t.add_argument("--out", type=Path, required=True, help="output directory")
    t.add_argument("--steps", type=int, help="overrides the config step count")
    t.add_argument("--toy", action="store_true", help="start from the reduced toy config")

    k = sub.add_parser("track", parents=[common, data], help="run the tracker; writes per-frame results")
    k.add_argument("--checkpoint", type=Path, required=True)
    k.add_argument("--out", type=Path, required=True, help="result file (one JSON record per line)")
    k.add_argument("--timings", action="store_true", help="include per-stage timings in the records")

    e = sub.add_parser("eval", parents=[common, data], help="Success/Precision from results or end to end")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--results", type=Path, nargs="+", help="result files written by track")
    src.add_argument("--checkpoint", type=Path, help="track the dataset with this checkpoint, then score")
    src.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    src.add_argument("--constant", action="store_true", help="score the frame-0 box held fixed")
    e.add_argument("--out", type=Path, help="also write the report (JSON lines) here")

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference suite; exit 3 on any failure")
    g.add_argument("--quiet", action="store_true", help="only print failures and the summary")

    b = sub.add_parser("bench", parents=[common], help="time kernels and forward stages per backend")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--backend", action="append", help="restrict to a backend (repeatable)")
    b.add_argument("--dtype", default="float32")
    b.add_argument("--out", type=Path, help="also write the table here")
    return p


# -- helpers -----------------------------------------------------------------


def _config(args, base: Config | None = None) -> Config:
    path = args.config
    if path is None and getattr(args, "checkpoint", None) is not None:
        beside = args.checkpoint.parent / CONFIG_NAME
        path = beside if beside.is_file() else None
    cfg = Config.load(path, base) if path is not None else (base or Config())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.category:
        cfg = cfg.replace(category=args.category)
    return cfg


def _dataset(args, cfg: Config, default_split: str):
    root = args.data or (Path(os.environ[DATA_ENV]) if os.environ.get(DATA_ENV) else None)
    if root is None:
        raise UsageError(f"no dataset: pass --data or set {DATA_ENV}")
    if (root / "label_02").is_dir():
        tracklets = load_kitti_tracking(root, args.split or default_split, cfg.category)
    else:
        tracklets = load_tracklet_dir(root, cfg.category)
    if not tracklets:
        raise DataFormatError(f"{root}: no {cfg.category} tracklets found")
    return tracklets


def _load_model(args, cfg: Config):
    from .model import TrackerModel

    if not args.checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    return TrackerModel.load(args.checkpoint, cfg)


def _print_report(report: EvalReport, out: Path | None) -> None:
    for name, c in sorted(report.categories.items()):
        print(f"{name}: Success {c.success:.1f} / Precision {c.precision:.1f} ({c.frames} frames, {c.flagged} flagged)")
    if out is not None:
        out.write_text(report.to_text())


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.count < 1 or args.frames < 2:
        raise UsageError("need --count >= 1 and --frames >= 2")
    args.out.mkdir(parents=True, exist_ok=True)
    for tr in synthetic_set(args.count, args.frames, seed=cfg.seed):
        tr.category = cfg.category
        save_tracklet(tr, args.out / tr.identifier)
    print(f"wrote {args.count} tracklets of {args.frames} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import TrackerModel
    from .training import train

    cfg = _config(args, base=TOY if args.toy else None)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    tracklets = _dataset(args, cfg, "train")
    args.out.mkdir(parents=True, exist_ok=True)
    model = TrackerModel(cfg)
    t0 = time.perf_counter()
    result = train(tracklets, model, config=cfg)
    model.save(args.out / CHECKPOINT_NAME)
    cfg.save(args.out / CONFIG_NAME)
    (args.out / LOSS_NAME).write_text("".join(f"{i} {v!r}\n" for i, v in enumerate(result.losses)))
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {cfg.steps} steps in {time.perf_counter() - t0:.1f}s on {len(tracklets)} tracklets "
          f"(final loss {final:.4f}, {result.skipped} samples skipped); wrote {args.out}")
    return EXIT_OK


def cmd_track(args) -> int:
    from .tracker import result_record, track, write_results

    cfg = _config(args)
    tracklets = _dataset(args, cfg, "test")
    model = _load_model(args, cfg)
    digits = 3 if args.timings else None
    records = [result_record(tr, r, digits) for tr in tracklets for r in track(tr, model, cfg.seed)]
    write_results(args.out, records)
    print(f"tracked {len(tracklets)} tracklets ({len(records)} frames); wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import constant_predictor
    from .tracker import read_results

    cfg = _config(args)
    if args.results:
        records = [rec for path in args.results for rec in read_results(path)]
        report = evaluate_records(records)
    else:
        tracklets = _dataset(args, cfg, "test")
        if args.checkpoint is not None:
            report = one_pass_eval(tracklets, _load_model(args, cfg), cfg.seed)
        else:
            report = one_pass_eval(tracklets, predictor=oracle_predictor if args.oracle else constant_predictor)
    _print_report(report, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import gradient_suite

    cfg = _config(args)
    t0 = time.perf_counter()
    failed = total = 0
    for res in gradient_suite(cfg.seed):
        total += 1
        failed += not res.ok
        if not args.quiet or not res.ok:
            print(res.line(), flush=True)
    print(f"{total - failed}/{total} gradient checks passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_bench
    from .kernels import BACKEND

    cfg = _config(args).replace(dtype=args.dtype)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    try:
        report = run_bench(cfg, args.repeats, args.backend, cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = report.to_text() + f"\nimport-time backend: {BACKEND}"
    print(text)
    if args.out is not None:
        args.out.write_text(text + "\n")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"siamtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataFormatError, CheckpointFormatError, MetricError) as exc:
        print(f"siamtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # malformed result files and tracklet records surface as plain ValueError
        print(f"siamtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
