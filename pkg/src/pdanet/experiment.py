"""Glue between a RunConfig and the data / model / trainer modules."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import ABLATIONS, RunConfig, config_from_text
from .data import Sample, SplitSpec, load_samples, split, synth_generate
from .errors import ConfigurationError, FormatError
from .evaluation import MetricReport, polarity_match_rate
from .losses import PcrConfig, median_threshold
from .model import Model, build_model
from .trainer import (
    Checkpoint,
    TrainResult,
    checkpoint_from_training,
    restore,
    sample_inputs,
    sample_labels,
    select_lambda,
    train,
)


def load_dataset(cfg: RunConfig) -> List[Sample]:
    if cfg.manifest is not None:
        return load_samples(cfg.manifest)
    return synth_generate(cfg.synth_count, cfg.synth_seed, cfg.image_size)


def splits_for(cfg: RunConfig, samples: Sequence[Sample]):
    return split(samples, SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed))


def model_for(cfg: RunConfig, samples: Sequence[Sample]) -> Model:
    """Fresh model matching the data: backbone for images, head-only for feature maps."""
    if not samples:
        raise ConfigurationError("no samples to size the model from")
    first = samples[0]
    if first.features is not None:
        return build_model(cfg.mode, cfg.seed, cfg.precision, use_backbone=False, feature_shape=first.features.shape)
    side = first.image.shape[-1]
    if first.image.shape != (3, side, side):
        raise FormatError(f"expected square 3-channel images, got {first.image.shape}")
    return build_model(cfg.mode, cfg.seed, cfg.precision, image_size=side)


def pcr_for(cfg: RunConfig, train_set: Sequence[Sample]) -> PcrConfig:
    threshold = cfg.threshold
    if cfg.threshold_rule == "median":
        threshold = median_threshold(sample_labels(train_set))
    return PcrConfig(cfg.lam, threshold)


@dataclass
class RunOutcome:
    model: Model
    result: TrainResult
    report: MetricReport
    checkpoint: Checkpoint
    splits: tuple


def run_training(cfg: RunConfig, samples: Optional[Sequence[Sample]] = None) -> RunOutcome:
    cfg.validate()
    samples = load_dataset(cfg) if samples is None else samples
    train_set, val_set, test_set = splits_for(cfg, samples)
    model = model_for(cfg, samples)
    result = train(model, train_set, val_set, cfg.loss, cfg.optim(), pcr_for(cfg, train_set))
    report = evaluate(model, test_set)
    ck = checkpoint_from_training(model, result.state, cfg.to_text())
    return RunOutcome(model, result, report, ck, (train_set, val_set, test_set))


def evaluate(model: Model, samples: Sequence[Sample]) -> MetricReport:
    if not samples:
        raise ConfigurationError("cannot evaluate on an empty sample list")
    return MetricReport.from_predictions(model.predict(sample_inputs(samples)), sample_labels(samples))


def model_from_checkpoint(ck: Checkpoint, samples: Sequence[Sample]) -> Model:
    cfg = config_from_text(ck.config) if ck.config else RunConfig()
    model = model_for(cfg, samples)
    restore(model, ck)
    return model


def lambda_search(cfg: RunConfig, grid: Sequence[float], samples: Optional[Sequence[Sample]] = None, workers: int = 1):
    cfg.validate()
    samples = load_dataset(cfg) if samples is None else samples
    train_set, val_set, _ = splits_for(cfg, samples)
    factory = _Factory(cfg, samples[:1])
    threshold = pcr_for(cfg, train_set).threshold
    return select_lambda(factory, train_set, val_set, grid, cfg.optim(), threshold, workers)


class _Factory:
    """Picklable zero-argument model factory."""

    def __init__(self, cfg: RunConfig, probe: Sequence[Sample]):
        self.cfg, self.probe = cfg, list(probe)

    def __call__(self) -> Model:
        return model_for(self.cfg, self.probe)


def history_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    cols = ["epoch", "train_loss", "val_loss", "lr_backbone", "lr_head"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in history:
        writer.writerow([repr(row[c]) if isinstance(row.get(c), float) else row.get(c, "") for c in cols])
    return buf.getvalue()


def lambda_table_csv(table) -> str:
    return "lambda,val_mse\n" + "".join(f"{lam!r},{mse!r}\n" for lam, mse in table)


def parse_grid(text: str) -> List[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse lambda grid {text!r}") from None
    if not values:
        raise ConfigurationError("lambda grid is empty")
    return values


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    name: str
    seed: int
    lam: Optional[float]
    test_mse: float
    test_r2: float
    polarity_match: float


def run_ablation(
    cfg: RunConfig,
    seeds: Sequence[int],
    grid: Sequence[float],
    samples: Optional[Sequence[Sample]] = None,
    on_row=None,
) -> List[AblationRow]:
    """Train the four ablation rows per seed; the PCR row uses the lambda picked by ``lambda_search``."""
    samples = load_dataset(cfg) if samples is None else samples
    rows = []
    for seed in seeds:
        base = replace(cfg, seed=int(seed))
        for name, (mode, loss) in ABLATIONS.items():
            run_cfg = replace(base, mode=mode, loss=loss)
            lam = None
            if loss == "pcr":
                lam, _ = lambda_search(run_cfg, grid, samples)
                run_cfg = replace(run_cfg, lam=lam)
            outcome = run_training(run_cfg, samples)
            test = outcome.splits[2]
            preds = outcome.model.predict(sample_inputs(test))
            row = AblationRow(
                name, int(seed), lam, outcome.report.mse["mean"], outcome.report.r2["mean"],
                polarity_match_rate(preds, sample_labels(test), pcr_for(run_cfg, outcome.splits[0]).threshold),
            )
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def summarize_ablation(rows: Sequence[AblationRow]) -> Dict[str, Dict[str, float]]:
    """Seed-averaged test MSE, R^2 and polarity-match rate per ablation row."""
    out = {}
    for name in ABLATIONS:
        sel = [r for r in rows if r.name == name]
        if sel:
            out[name] = {
                "test_mse": float(np.mean([r.test_mse for r in sel])),
                "test_r2": float(np.mean([r.test_r2 for r in sel])),
                "polarity_match": float(np.mean([r.polarity_match for r in sel])),
            }
    return out


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'row':<10}{'test MSE':>12}{'test R2':>12}{'polarity':>12}"]
    for name, s in summarize_ablation(rows).items():
        lines.append(f"{name:<10}{s['test_mse']:>12.6f}{s['test_r2']:>12.4f}{s['polarity_match']:>12.4f}")
    return "\n".join(lines) + "\n"
