"""Command-line entry point: ``pdanet <subcommand> ...``.

Exit status: 0 success, 2 configuration / input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import data as D
from .backbone import load_feature_map
from .config import ABLATIONS, RunConfig, apply_overrides, load_config, parse_pairs
from .errors import ContractError, PdanetError, TrainingError
from .evaluation import export_attention
from .experiment import (
    evaluate,
    history_csv,
    lambda_search,
    lambda_table_csv,
    model_from_checkpoint,
    parse_grid,
    run_training,
)
from .gradsuite import format_report, run_suite
from .losses import DEFAULT_LAMBDA_GRID
from .trainer import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("pdanet")


class NumericalFailure(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--ablation", choices=list(ABLATIONS), help="shorthand for mode + loss")
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = {}
    if args.ablation:
        pairs["ablation"] = args.ablation
    for item in args.set:
        pairs.update(parse_pairs(item))
    for f in fields(RunConfig):
        v = getattr(args, f"cfg_{f.name}")
        if v is not None:
            pairs[f.name] = v
    cfg = apply_overrides(cfg, pairs)
    return cfg.validate()


def _write_config(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return out


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    samples = D.synth_generate(args.count, args.seed, args.image_size)
    rows = []
    for s in samples:
        rel = f"images/{s.id}.ppm"
        D.save_image(s.image, out / rel)
        rows.append((rel, tuple(float(x) for x in s.label)))
    (out / "manifest.csv").write_text(D.format_manifest(rows), encoding="utf-8")
    labels = np.stack([s.label for s in samples])
    print(f"wrote {len(samples)} images and manifest to {out}")
    for name, col in zip(D.LABEL_NAMES, labels.T):
        print(f"  {name:<9} mean {col.mean():.4f}  min {col.min():.4f}  max {col.max():.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _write_config(cfg)
    try:
        outcome = run_training(cfg)
    except TrainingError as exc:
        raise NumericalFailure(str(exc)) from exc
    save_checkpoint(outcome.checkpoint, out / "checkpoint.pdck")
    (out / "history.csv").write_text(history_csv(outcome.result.history), encoding="utf-8")
    (out / "report.txt").write_text(outcome.report.to_table(), encoding="utf-8")
    (out / "report.kv").write_text(outcome.report.to_kv(), encoding="utf-8")
    print(f"final train loss {outcome.result.history[-1]['train_loss']:.6f}")
    print(outcome.report.to_table(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    samples = D.load_samples(args.manifest)
    if not samples:
        raise ContractError(f"manifest {args.manifest} is empty")
    model = model_from_checkpoint(ck, samples)
    report = evaluate(model, samples)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "eval_report.kv").write_text(report.to_kv(), encoding="utf-8")
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_lambda_search(args) -> int:
    cfg = _run_config(args)
    out = _write_config(cfg)
    grid = parse_grid(args.grid)
    try:
        best, table = lambda_search(cfg, grid, workers=args.workers)
    except TrainingError as exc:
        raise NumericalFailure(str(exc)) from exc
    text = lambda_table_csv(table)
    (out / "lambda_search.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"chosen lambda {best!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    print(format_report(results), end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_export_attention(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    path = Path(args.input)
    if path.suffix.lower() == ".pdaf":
        sample = D.Sample(path.name, np.zeros(3), features=load_feature_map(path).data.values)
        x = sample.features
    else:
        sample = D.Sample(path.name, np.zeros(3), image=D.load_image(path, channels=3))
        x = sample.image
    model = model_from_checkpoint(ck, [sample])
    if model.mode == "CW":
        raise PdanetError("mode CW has no spatial attention to export")
    out = model.forward(np.asarray(x, dtype=model.dtype)[None])
    fm = model.features(np.asarray(x, dtype=model.dtype)[None])
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    export_attention(
        out.A_S.values[0], fm.h, fm.w,
        heatmap_sink=prefix.with_suffix(".pgm"), csv_sink=prefix.with_suffix(".csv"),
        upsample=args.upsample,
    )
    v, a, d = out.prediction.values[0]
    print(f"heatmap {prefix.with_suffix('.pgm')} ({fm.h}x{fm.w}), grid {prefix.with_suffix('.csv')}")
    print(f"prediction V={v:.4f} A={a:.4f} D={d:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdanet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and report test metrics")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lambda-search", help="select the PCR penalty on the validation split")
    _add_run_flags(p)
    p.add_argument("--grid", default=",".join(str(x) for x in DEFAULT_LAMBDA_GRID))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_lambda_search)

    p = sub.add_parser("gradcheck", help="finite-difference check of every adjoint")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-attention", help="write the spatial attention of one input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PPM/PGM image or .pdaf feature map")
    p.add_argument("--out", required=True, help="output prefix; .pgm and .csv are appended")
    p.add_argument("--upsample", type=int, default=1)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PdanetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
