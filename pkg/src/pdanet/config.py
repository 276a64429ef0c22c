"""Flat ``key=value`` run configuration with typed fields and strict key checking."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional

from .errors import ConfigurationError, ParseError
from .head import normalize_mode
from .losses import PcrConfig
from .trainer import OptimConfig

# ablation rows -> (mode, loss)
ABLATIONS = {
    "S": ("S", "mse"),
    "CW": ("CW", "mse"),
    "S+CW": ("S_CW", "mse"),
    "S+CW+PCR": ("S_CW", "pcr"),
}


@dataclass(frozen=True)
class RunConfig:
    mode: str = "S_CW"
    loss: str = "mse"
    lam: float = 1.0
    threshold: float = 0.5
    threshold_rule: str = "fixed"  # fixed | median (median of training labels)
    lr_backbone: float = 0.01
    lr_head: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 200
    drop_factor: float = 10.0
    drop_at_epoch: Optional[int] = None
    batch_size: int = 8
    augment: bool = True
    manifest: Optional[str] = None
    synth_count: int = 512
    synth_seed: int = 42
    image_size: int = 64
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    precision: str = "float32"
    out_dir: str = "run"
    seed: int = 42

    def validate(self, check_paths: bool = True) -> "RunConfig":
        normalize_mode(self.mode)
        if self.loss not in ("mse", "pcr"):
            raise ConfigurationError(f"loss must be 'mse' or 'pcr', got {self.loss!r}")
        if self.threshold_rule not in ("fixed", "median"):
            raise ConfigurationError(f"threshold_rule must be 'fixed' or 'median', got {self.threshold_rule!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"precision must be float32 or float64, got {self.precision!r}")
        PcrConfig(self.lam, self.threshold)
        self.optim()
        if self.manifest is None and self.synth_count < 3:
            raise ConfigurationError("synthetic data needs synth_count >= 3")
        if check_paths and self.manifest is not None and not Path(self.manifest).is_file():
            raise ConfigurationError(f"manifest {self.manifest!r} does not exist")
        return self

    def optim(self) -> OptimConfig:
        return OptimConfig(
            lr_backbone=self.lr_backbone, lr_head=self.lr_head, momentum=self.momentum,
            weight_decay=self.weight_decay, epochs=self.epochs, drop_factor=self.drop_factor,
            drop_at_epoch=self.drop_at_epoch, batch_size=self.batch_size, seed=self.seed,
            augment=self.augment,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={_format(v)}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    optional = kind.startswith("Optional")
    if optional and raw.lower() in ("none", ""):
        return None
    base = kind[len("Optional["):-1] if optional else kind
    try:
        if base == "bool":
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {base}") from None
    return raw


def parse_pairs(text: str) -> Dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", line=lineno)
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def apply_overrides(cfg: RunConfig, pairs: Dict[str, str]) -> RunConfig:
    unknown = sorted(k for k in pairs if k not in _TYPES and k != "ablation")
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    updates = {}
    if "ablation" in pairs:
        name = pairs["ablation"]
        if name not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {name!r}; expected one of {list(ABLATIONS)}")
        updates["mode"], updates["loss"] = ABLATIONS[name]
    for k, v in pairs.items():
        if k != "ablation":
            updates[k] = _convert(k, v)
    if "mode" in updates:
        updates["mode"] = normalize_mode(updates["mode"])
    return replace(cfg, **updates)


def config_from_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    return apply_overrides(base or RunConfig(), parse_pairs(text))


def load_config(path) -> RunConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))
