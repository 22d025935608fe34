"""Command-line interface: pretrain, distill, ablate, dump-samples.

Exit codes are 0 on success, 2 for usage, configuration or checkpoint
problems, and 3 when training diverges. Every file is written atomically.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import engine
from .config import RunConfig
from .data import Dataset, IdxParseError, dataset_arrays, dataset_from_arrays
from .io import atomic_write_bytes, atomic_write_text, csv_text
from .nn import CheckpointError, ConfigError, NumericalError, build_teacher, load_checkpoint, save_checkpoint
from .pgm import to_bytes, write_pgm

log = logging.getLogger("ssdkd")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
METRICS_HEADER = ["run_id", "epoch", "phase", "metric", "value", "seed"]
SEED_ENV = "SSDKD_SEED"


class UsageFailure(Exception):
    pass


def load_config(path: str) -> RunConfig:
    cfg = config_mod.load(path)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        cfg = cfg.replace(engine={"seed": seed})
    return cfg


def run_id(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode("utf-8")).hexdigest()[:12]


def metrics_rows(rid: str, seed: int, reports, extra=()) -> list[list]:
    rows = [[rid, epoch, phase, metric, float(value), seed] for epoch, phase, metric, value in extra]
    for r in reports:
        rows.extend([rid, r.epoch, phase, metric, float(value), seed] for phase, metric, value in r.metrics())
    return rows


def _load_teacher(path: str, cfg: RunConfig, train):
    arrays = load_checkpoint(path)
    teacher = build_teacher(train.dim, train.classes, np.random.default_rng(0),
                            cfg.teacher.hidden, cfg.teacher.depth)
    teacher.load_state_dict(arrays)
    return teacher.eval()


# -- commands ----------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    train, test = engine.load_datasets(cfg)
    result = engine.pretrain_teacher(cfg, train, test, engine.rng_streams(cfg.engine.seed))
    out = Path(args.out)
    save_checkpoint(out, result.network.state_dict())
    rid, seed = run_id(cfg), cfg.engine.seed
    rows = [[rid, h["epoch"], "pretrain", k, float(h[k]), seed]
            for h in result.history for k in ("loss", "lr", "accuracy") if k in h]
    rows.append([rid, cfg.teacher.epochs, "pretrain", "final_accuracy", result.accuracy, seed])
    atomic_write_text(out.with_name(out.name + ".metrics.csv"), csv_text(METRICS_HEADER, rows))
    if args.cache_data:
        save_checkpoint(out.with_name(out.name + ".data"), dataset_arrays(train))
    log.info("teacher accuracy %.4f -> %s", result.accuracy, out)
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    train, test = engine.load_datasets(cfg)
    teacher = _load_teacher(args.teacher, cfg, train)
    result = engine.run(cfg, train, test, teacher=teacher)
    out = Path(args.out)
    rid, seed = run_id(cfg), cfg.engine.seed
    extra = [(-1, "eval", "teacher_accuracy", result.teacher_accuracy),
             (-1, "eval", "accuracy", result.initial_accuracy),
             (-1, "monitor", "original_forwards", result.monitor.original_forwards)]
    atomic_write_text(out / "metrics.csv", csv_text(METRICS_HEADER, metrics_rows(rid, seed, result.reports, extra)))
    save_checkpoint(out / "student.ckpt", result.student.state_dict())
    atomic_write_text(out / "buffer.csv", result.buffer.dump_csv())
    hist = [{"epoch": r.epoch, "bins": r.p_hist, "census": {str(c): n for c, n in enumerate(r.census)}}
            for r in result.reports]
    atomic_write_text(out / "histograms.json", json.dumps(hist, indent=1) + "\n")
    if len(result.buffer):
        c_T = np.array([e.teacher_pred.c_T for e in result.buffer.entries], dtype=np.int64)
        buffered = Dataset(result.buffer.samples(), c_T, train.classes, train.mean, train.std,
                           train.spatial_shape)
        save_checkpoint(out / "samples.ckpt", dataset_arrays(buffered))
    log.info("student accuracy %.4f (teacher %.4f) -> %s", result.final_accuracy,
             result.teacher_accuracy, out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.seeds < 1:
        raise UsageFailure("--seeds must be >= 1")
    cfg = load_config(args.config)
    seeds = [cfg.engine.seed + k for k in range(args.seeds)]
    rows = engine.ablate(cfg, seeds)
    text = csv_text(engine.ABLATION_HEADER, [r.csv_row() for r in rows])
    atomic_write_text(Path(args.out) / "ablation.csv", text)
    return EXIT_OK


def cmd_dump_samples(args) -> int:
    src = Path(args.student_dir) / "samples.ckpt"
    if not src.exists():
        raise UsageFailure(f"{src} not found; run distill first")
    ds = dataset_from_arrays(load_checkpoint(src))
    if args.count < 0:
        raise UsageFailure("--count must be non-negative")
    n = args.count
    if n > len(ds):
        print(f"warning: requested {n} samples but the buffer holds {len(ds)}; writing all",
              file=sys.stderr)
        n = len(ds)
    raw = ds.denormalize(ds.samples[:n])
    out = Path(args.out)
    if ds.spatial_shape is not None and raw.shape[1] == ds.spatial_shape[0] * ds.spatial_shape[1]:
        for i, row in enumerate(raw):
            image = to_bytes(row.reshape(ds.spatial_shape))
            atomic_write_bytes(out / f"sample_{i:04d}_class{ds.labels[i]}.pgm", write_pgm(image))
        return EXIT_OK
    print("note: samples have no spatial shape; writing a 2-D scatter CSV instead of images",
          file=sys.stderr)
    atomic_write_text(out / "scatter.csv", csv_text(["index", "c_T", "x", "y"],
                      ([i, int(ds.labels[i]), float(a), float(b)]
                       for i, (a, b) in enumerate(project_2d(raw)))))
    return EXIT_OK


def project_2d(x: np.ndarray) -> np.ndarray:
    """First two principal components (zero-padded when dim < 2)."""
    if len(x) == 0:
        return np.zeros((0, 2))
    centred = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    coords = centred @ vt[:2].T
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    # fix the sign so the projection does not depend on the SVD routine
    signs = np.where(coords[np.abs(coords).argmax(axis=0), [0, 1]] < 0, -1.0, 1.0)
    return coords * signs


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssdkd", description="Data-free distillation with prioritized replay")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="train the teacher on labelled data")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="teacher checkpoint path")
    s.add_argument("--cache-data", action="store_true", help="also cache the training set next to it")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("distill", help="data-free distillation from a teacher checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--teacher", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("ablate", help="all six toggle combinations over K seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("dump-samples", help="export buffer samples as PGM images or a scatter CSV")
    s.add_argument("--student-dir", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dump_samples)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CheckpointError, IdxParseError, UsageFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
