"""Backbone + attention head bundled as one trainable model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .backbone import DEFAULT_CHANNELS, TinyBackboneParams, backbone_forward, init_backbone
from .engine import Tensor, no_grad
from .errors import ConfigurationError, DimensionError
from .head import AttentionOutputs, FeatureMap, PdanetParams, head_forward, init_params, normalize_mode

DTYPES = {"float64": np.float64, "float32": np.float32}


def resolve_dtype(name) -> type:
    if name in DTYPES.values():
        return name
    try:
        return DTYPES[name]
    except KeyError:
        raise ConfigurationError(f"unknown precision {name!r}; expected one of {sorted(DTYPES)}") from None


@dataclass
class Model:
    head: PdanetParams
    backbone: Optional[TinyBackboneParams]
    mode: str = "S_CW"

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)

    @property
    def dtype(self):
        return self.head.W_S2.dtype

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {}
        if self.backbone is not None:
            out.update({f"backbone.{k}": v for k, v in self.backbone.named().items()})
        out.update({f"head.{k}": v for k, v in self.head.named().items()})
        return out

    def load_parameters(self, tensors: Dict[str, Tensor]) -> None:
        if self.backbone is not None:
            self.backbone.load_named(
                {k[len("backbone."):]: v for k, v in tensors.items() if k.startswith("backbone.")}
            )
        self.head = PdanetParams.from_named(
            {k[len("head."):]: v for k, v in tensors.items() if k.startswith("head.")}
        )

    def features(self, inputs) -> FeatureMap:
        x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=self.dtype))
        if self.backbone is None:
            return FeatureMap(x)
        return backbone_forward(x, self.backbone)

    def forward(self, inputs) -> AttentionOutputs:
        """``inputs`` is an image batch ``(B, C, S, S)`` or a feature batch ``(B, n, h, w)``."""
        return head_forward(self.features(inputs), self.head, self.mode)

    def predict(self, inputs, batch_size: int = 64) -> np.ndarray:
        inputs = np.asarray(inputs)
        out = []
        with no_grad():
            for start in range(0, len(inputs), batch_size):
                out.append(self.forward(inputs[start:start + batch_size]).prediction.values)
        return np.concatenate(out, axis=0).astype(np.float64)


def build_model(
    mode: str = "S_CW",
    seed: int = 0,
    dtype="float64",
    use_backbone: bool = True,
    image_size: int = 64,
    channels: Sequence[int] = DEFAULT_CHANNELS,
    feature_shape: Optional[tuple] = None,
    n_e: int = 3,
) -> Model:
    """Fresh model with seeded initialization.

    Without a backbone the head consumes stored feature maps of
    ``feature_shape = (n, h, w)``.
    """
    dtype = resolve_dtype(dtype)
    rng = np.random.default_rng(seed)
    if use_backbone:
        bb = init_backbone(channels, input_size=image_size, rng=rng, dtype=dtype)
        side = bb.output_size()
        n, h, w = bb.out_channels, side, side
    else:
        if feature_shape is None:
            raise ConfigurationError("a head-only model needs feature_shape=(n, h, w)")
        bb = None
        n, h, w = feature_shape
    if min(n, h, w) <= 0:
        raise DimensionError(f"degenerate feature shape {(n, h, w)}")
    head = init_params(h, w, n, n_e=n_e, rng=rng, dtype=dtype)
    return Model(head=head, backbone=bb, mode=mode)
