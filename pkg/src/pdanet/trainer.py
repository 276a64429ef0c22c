"""SGD with momentum and weight decay, stepped learning rates, lambda search, checkpoints."""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Sample, flip_augment
from .engine import Tensor, backward
from .errors import ConfigurationError, ContractError, DimensionError, FormatError, TrainingError
from .evaluation import mse_metric
from .losses import PcrConfig, regression_loss
from .model import Model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    lr_backbone: float = 0.001
    lr_head: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 200
    drop_factor: float = 10.0
    drop_at_epoch: Optional[int] = None  # default: last sixth of the run
    batch_size: int = 8
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs <= 0:
            raise ConfigurationError(f"epochs must be a positive integer, got {self.epochs}")
        if self.lr_backbone < 0 or self.lr_head < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight decay must be non-negative, got {self.weight_decay}")
        if not self.drop_factor > 0:
            raise ConfigurationError(f"drop factor must be positive, got {self.drop_factor}")
        if self.batch_size <= 0:
            raise ConfigurationError(f"batch size must be positive, got {self.batch_size}")
        if self.drop_at_epoch is not None and not self.drop_at_epoch < self.epochs:
            raise ConfigurationError(
                f"drop_at_epoch ({self.drop_at_epoch}) must be < epochs ({self.epochs})"
            )

    @property
    def drop_epoch(self) -> int:
        if self.drop_at_epoch is not None:
            return self.drop_at_epoch
        return self.epochs - max(1, self.epochs // 6) if self.epochs > 1 else 0


def sgd_step(param, grad, velocity, lr, momentum, weight_decay):
    """v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v."""
    param, grad, velocity = (np.asarray(x) for x in (param, grad, velocity))
    if not param.shape == grad.shape == velocity.shape:
        raise DimensionError(
            f"sgd_step: shapes differ (param {param.shape}, grad {grad.shape}, velocity {velocity.shape})"
        )
    v = momentum * velocity + grad + weight_decay * param
    return param - lr * v, v


def lr_at(epoch: int, cfg: OptimConfig) -> Tuple[float, float]:
    """(backbone, head) learning rates; both divided by drop_factor from the drop epoch on."""
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch >= cfg.drop_epoch:
        return cfg.lr_backbone / cfg.drop_factor, cfg.lr_head / cfg.drop_factor
    return cfg.lr_backbone, cfg.lr_head


def sample_inputs(samples: Sequence[Sample]) -> np.ndarray:
    first = samples[0]
    key = "image" if first.image is not None else "features"
    return np.stack([getattr(s, key) for s in samples])


def sample_labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.label for s in samples])


@dataclass
class TrainState:
    """Mutable optimizer state carried between epochs (and through checkpoints)."""

    velocities: Dict[str, np.ndarray]
    epoch: int = 0


@dataclass
class TrainResult:
    model: Model
    history: List[dict]
    state: TrainState


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # independent of how many epochs ran before, so resumed runs replay exactly
    return np.random.default_rng([seed, epoch])


def dataset_loss(model: Model, inputs, labels, loss: str = "mse", pcr: Optional[PcrConfig] = None, batch_size: int = 64) -> float:
    preds = model.predict(inputs, batch_size=batch_size)
    return regression_loss(Tensor(preds), Tensor(labels), loss, pcr).item()


def train(
    model: Model,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample] = (),
    loss: str = "mse",
    cfg: OptimConfig = OptimConfig(),
    pcr: Optional[PcrConfig] = None,
    state: Optional[TrainState] = None,
    stop_epoch: Optional[int] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Run epochs ``state.epoch .. stop_epoch`` (default: to ``cfg.epochs``).

    Each epoch shuffles with a generator seeded by ``(cfg.seed, epoch)`` and
    keeps the final short batch.  History rows hold the sample-weighted mean
    batch loss and, when a validation set is given, the validation loss at
    the end of the epoch.
    """
    if len(train_set) == 0:
        raise ContractError("training split is empty")
    if loss not in ("mse", "pcr"):
        raise ConfigurationError(f"unknown loss {loss!r}")
    pcr = pcr or PcrConfig()
    params = model.named_parameters()
    if state is None:
        state = TrainState({k: np.zeros_like(p.values) for k, p in params.items()}, 0)
    stop = cfg.epochs if stop_epoch is None else stop_epoch
    if not state.epoch <= stop <= cfg.epochs:
        raise ConfigurationError(f"cannot train epochs {state.epoch}..{stop} of {cfg.epochs}")

    dtype = model.dtype
    inputs = sample_inputs(train_set).astype(dtype)
    labels = sample_labels(train_set).astype(dtype)
    val_inputs = sample_inputs(val_set).astype(dtype) if len(val_set) else None
    val_labels = sample_labels(val_set) if len(val_set) else None
    names = list(params)
    history = []
    n = len(inputs)
    # overflow on the way to divergence is reported as TrainingError below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(state.epoch, stop):
            lr_bb, lr_head = lr_at(epoch, cfg)
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(n)
            flips = rng.random(n) < 0.5
            total = 0.0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                x = inputs[idx]
                if cfg.augment:
                    x = np.stack([flip_augment(img, f) for img, f in zip(x, flips[idx])])
                out = model.forward(x)
                value = regression_loss(out.prediction, Tensor(labels[idx]), loss, pcr)
                lv = value.item()
                if not np.isfinite(lv):
                    raise TrainingError("non-finite training loss", epoch=epoch, batch=b)
                tensors = [params[k] for k in names]
                grads = backward(value, tensors)
                for name, t, g in zip(names, tensors, grads):
                    lr = lr_bb if name.startswith("backbone.") else lr_head
                    new, state.velocities[name] = sgd_step(
                        t.values, g, state.velocities[name], lr, cfg.momentum, cfg.weight_decay
                    )
                    t.values = new.astype(dtype, copy=False)
                total += lv * len(idx)
            row = {"epoch": epoch, "train_loss": total / n, "lr_backbone": lr_bb, "lr_head": lr_head}
            if val_inputs is not None:
                row["val_loss"] = dataset_loss(model, val_inputs, val_labels, loss, pcr)
            state.epoch = epoch + 1
            history.append(row)
            if on_epoch is not None:
                on_epoch(row)
            log.debug("epoch %d train %.6f", epoch, row["train_loss"])
    return TrainResult(model, history, state)


# ---------------------------------------------------------------------------
# lambda selection


def _lambda_trial(args):
    factory, train_set, val_set, lam, cfg, threshold = args
    model = factory()
    try:
        train(model, train_set, (), "pcr", cfg, PcrConfig(lam, threshold))
    except TrainingError as exc:
        # a diverging penalty is a bad candidate, not a failed search
        log.warning("lambda %r diverged: %s", lam, exc)
        return float("inf")
    preds = model.predict(sample_inputs(val_set))
    return mse_metric(preds, sample_labels(val_set))["mean"]


def select_lambda(
    factory: Callable[[], Model],
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    grid: Sequence[float],
    cfg: OptimConfig,
    threshold: float = 0.5,
    workers: int = 1,
):
    """Train one fresh model per distinct lambda; pick the lowest validation MSE.

    Returns ``(best_lambda, table)`` with ``table`` a list of
    ``(lambda, val_mse)`` in ascending lambda order.  Ties go to the smaller
    lambda; candidates whose training diverges score ``inf`` and a
    TrainingError is raised only if every candidate diverges.  ``factory`` must be picklable when ``workers > 1``.
    """
    lams = sorted({float(x) for x in grid})
    if not lams:
        raise ConfigurationError("lambda grid is empty")
    if any(x < 0 for x in lams):
        raise ConfigurationError(f"lambda grid has negative values: {lams}")
    if len(val_set) == 0:
        raise ContractError("validation split is empty")
    jobs = [(factory, train_set, val_set, lam, cfg, threshold) for lam in lams]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_lambda_trial, jobs))
    else:
        scores = [_lambda_trial(j) for j in jobs]
    table = list(zip(lams, scores))
    if not any(np.isfinite(sc) for sc in scores):
        raise TrainingError("training diverged for every lambda in the grid")
    best_lam, best = table[0]
    for lam, score in table[1:]:
        if score < best:
            best_lam, best = lam, score
    return best_lam, table


# ---------------------------------------------------------------------------
# checkpoints
#
# b"PDCK" | u16 version | u32 blob count | blobs | u32 config length | config UTF-8
# blob: u16 name length | name | u8 rank | u32 dims... | float64 values (little-endian)

CHECKPOINT_MAGIC = b"PDCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    config: str = ""


def checkpoint_from_training(model: Model, state: Optional[TrainState] = None, config: str = "") -> Checkpoint:
    params = {k: np.array(v.values, dtype=np.float64) for k, v in model.named_parameters().items()}
    vel = {} if state is None else {k: np.asarray(v, dtype=np.float64) for k, v in state.velocities.items()}
    return Checkpoint(params, vel, 0 if state is None else state.epoch, config)


def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    blobs = [(f"param/{k}", v) for k, v in ck.params.items()]
    blobs += [(f"velocity/{k}", v) for k, v in ck.velocities.items()]
    blobs.append(("meta/epoch", np.array(float(ck.epoch))))
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(blobs))]
    for name, arr in blobs:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    cfg = ck.config.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    version, count = r.unpack("<HI", "header")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    ck = Checkpoint({})
    for _ in range(count):
        (nlen,) = r.unpack("<H", "blob name length")
        name = r.take(nlen, "blob name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size, f"values of {name}"), dtype="<f8").reshape(dims).astype(np.float64)
        kind, _, key = name.partition("/")
        target = {"param": ck.params, "velocity": ck.velocities}.get(kind)
        if name == "meta/epoch":
            ck.epoch = int(arr)
        elif target is None:
            raise FormatError(f"unknown blob {name!r}", offset=r.pos)
        elif key in target:
            raise FormatError(f"duplicate blob {name!r}", offset=r.pos)
        else:
            target[key] = arr
    (clen,) = r.unpack("<I", "config length")
    ck.config = r.take(clen, "config").decode("utf-8")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", offset=r.pos)
    return ck


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def restore(model: Model, ck: Checkpoint) -> TrainState:
    """Load parameters (and velocities) into ``model``; every parameter must be present."""
    params = model.named_parameters()
    for name in params:
        if name not in ck.params:
            raise FormatError(f"checkpoint is missing parameter {name!r}")
    extra = sorted(set(ck.params) - set(params))
    if extra:
        raise FormatError(f"checkpoint has unknown parameter {extra[0]!r}")
    dtype = model.dtype
    loaded = {}
    for name, t in params.items():
        arr = ck.params[name]
        if arr.shape != t.shape:
            raise FormatError(f"parameter {name!r} has shape {arr.shape}, model expects {t.shape}")
        loaded[name] = Tensor(arr.astype(dtype), requires_grad=True)
    model.load_parameters(loaded)
    velocities = {}
    for name, t in params.items():
        v = ck.velocities.get(name)
        velocities[name] = np.zeros_like(t.values) if v is None else v.astype(dtype)
    return TrainState(velocities, ck.epoch)
