"""Command-line entry point: ``windowed-conv <command> --config PATH --out DIR``.

Exit codes: 0 success, 1 a validation threshold was missed, 2 bad
config or arguments, 3 filesystem error, 4 pipeline failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import _accel
from .config import (
    ConfigError,
    bound_run,
    dump,
    image_run,
    mid_eval_run,
    mid_train_run,
    parse_json,
)
from .conv_net import load_checkpoint, save_checkpoint
from .errors import CheckpointFormatError, InvalidConfigError, TrainingDivergedError
from .mid import OracleReplay, evaluate_zero_shot, train_mid
from .rasterize import PositionSet, extract_positions, rasterize, read_pgm, write_pgm
from .reporting import read_csv, write_csv
from .seeding import rng_for
from .training import verify_bound

log = logging.getLogger("windowed_conv")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_FS, EXIT_PIPELINE = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_FS) from None
    return parse_json(text)


def _out_dir(path: str) -> Path:
    out = Path(path)
    if not out.is_dir():
        raise CliError(f"output directory {out} does not exist", EXIT_FS)
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory {out} is not writable", EXIT_FS)
    return out


def _with_seed(data: dict, seed: int | None) -> dict:
    if seed is not None:
        data = dict(data, seed=seed)
    return data


def bound_seeds(root: int, count: int) -> list[int]:
    return [int(rng_for(root, "bound-seed", i).integers(0, 2**31)) for i in range(count)]


def cmd_bound(args) -> int:
    run = bound_run(_with_seed(_load_config(args.config), args.seed))
    out = _out_dir(args.out)
    (out / "effective_config.json").write_text(dump(run.echo()))
    report = verify_bound(
        run.pair, run.arch, run.train, run.eval_width, run.trials,
        bound_seeds(run.seed, run.num_seeds), run.heldout_windows,
    )
    report.write_csv(out / "bound.csv")
    frac = report.holds_fraction
    log.info("bound holds for %d/%d seeds", sum(r.holds for r in report.rows), len(report.rows))
    return EXIT_OK if frac >= run.holds_threshold else EXIT_VALIDATION


def _prior_steps(curve_path: Path) -> list[tuple[int, float]]:
    if not curve_path.exists():
        return []
    _, rows = read_csv(curve_path)
    return [(int(s), float(v)) for s, v in rows]


def cmd_mid_train(args) -> int:
    run = mid_train_run(_with_seed(_load_config(args.config), args.seed))
    out = _out_dir(args.out)
    (out / "effective_config.json").write_text(dump(run.echo()))
    cfg = replace(run.mid_train, seed=run.seed)
    model, prior = run.arch.build(rng_for(run.seed, "mid-init")), []
    if args.resume:
        model = load_checkpoint(args.resume)
        prior = _prior_steps(Path(args.resume).parent / "loss_curve.csv")
    start = prior[-1][0] + 1 if prior else 0
    ckpt, curve_path = out / "model.ckpt", out / "loss_curve.csv"
    try:
        model, curve = train_mid(cfg, model=model, start_step=start)
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        save_checkpoint(exc.model if exc.model is not None else model, f"{ckpt}.partial")
        rows = prior + [(start + i, v) for i, v in enumerate(exc.curve)]
        write_csv(f"{curve_path}.partial", ("step", "loss"), rows)
        return EXIT_PIPELINE
    rows = prior + [(start + i, v) for i, v in enumerate(curve)]
    write_csv(curve_path, ("step", "loss"), rows)
    save_checkpoint(model, ckpt)
    final = curve[-1] if curve else float("nan")
    log.info("final loss %.6g (threshold %.6g)", final, run.loss_threshold)
    return EXIT_OK if curve and final <= run.loss_threshold else EXIT_VALIDATION


def cmd_mid_eval(args) -> int:
    run = mid_eval_run(_with_seed(_load_config(args.config), args.seed))
    out = _out_dir(args.out)
    if run.predictor == "cnn":
        if not args.checkpoint:
            raise CliError("--checkpoint is required for the cnn predictor", EXIT_CONFIG)
        predictor = load_checkpoint(args.checkpoint)
    else:
        predictor = OracleReplay(run.spacing_d)
    (out / "effective_config.json").write_text(dump(run.echo()))
    report = evaluate_zero_shot(
        predictor, run.raster, run.extraction, run.channel, run.widths, run.trials,
        run.seed, run.base_count, render=run.trials if args.render else 0,
    )
    report.write_csv(out / "power_report.csv")
    report.write_box_csv(out / "power_box.csv")
    if run.detail:
        report.write_detail_csv(out / "power_detail.csv")
    if args.render:
        renders = out / "renders"
        renders.mkdir(exist_ok=True)
        for rec in report.records:
            stem = f"w{rec.width_m:g}_t{rec.trial:03d}"
            wrc = run.raster.with_width(rec.width_m)
            write_pgm(renders / f"{stem}_input.pgm", rec.images[0], wrc)
            write_pgm(renders / f"{stem}_output.pgm", rec.images[1], wrc)
    return EXIT_OK


def cmd_rasterize(args) -> int:
    run = image_run(_load_config(args.config))
    out = _out_dir(args.out)
    if not args.positions:
        raise CliError("--positions CSV is required", EXIT_CONFIG)
    ps = PositionSet.from_csv(args.positions)
    write_pgm(out / "image.pgm", rasterize(ps, run.raster), run.raster)
    return EXIT_OK


def cmd_extract(args) -> int:
    run = image_run(_load_config(args.config))
    out = _out_dir(args.out)
    if not args.image:
        raise CliError("--image PGM is required", EXIT_CONFIG)
    img, rc = read_pgm(args.image)
    extract_positions(img, rc, run.extraction).to_csv(out / "positions.csv")
    return EXIT_OK


COMMANDS = {
    "bound": cmd_bound,
    "mid-train": cmd_mid_train,
    "mid-eval": cmd_mid_eval,
    "rasterize": cmd_rasterize,
    "extract": cmd_extract,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windowed-conv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="existing output directory")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--threads", type=int, help="kernel threads (env WINDOWED_CONV_THREADS)")
        if name == "mid-train":
            p.add_argument("--resume", help="checkpoint to continue training from")
        if name == "mid-eval":
            p.add_argument("--checkpoint", help="trained model checkpoint")
            p.add_argument("--render", action="store_true", help="write input/output PGM pairs")
        if name == "rasterize":
            p.add_argument("--positions", help="CSV of x_m,y_m")
        if name == "extract":
            p.add_argument("--image", help="16-bit PGM with .txt sidecar")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        _accel.set_num_threads(args.threads)
        return COMMANDS[args.command](args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (ConfigError, InvalidConfigError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except CheckpointFormatError as exc:
        log.error("checkpoint error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("filesystem error: %s", exc)
        return EXIT_FS
    except ValueError as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
