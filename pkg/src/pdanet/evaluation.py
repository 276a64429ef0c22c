"""MSE / R^2 metrics per VAD dimension and attention-map export."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .errors import ContractError, DegenerateMetricError, DimensionError

DIMS = ("V", "A", "D")


def _pair(preds, gts) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    if p.ndim != 2 or p.shape != g.shape or p.shape[1] != 3:
        raise ContractError(f"expected two (M, 3) arrays, got {p.shape} and {g.shape}")
    if p.shape[0] == 0:
        raise ContractError("metrics need at least one sample")
    return p, g


def mse_metric(preds, gts) -> Dict[str, float]:
    """Per-dimension mean squared residual over samples, plus their mean ("M")."""
    p, g = _pair(preds, gts)
    per = ((p - g) ** 2).mean(axis=0)
    out = {d: float(v) for d, v in zip(DIMS, per)}
    out["mean"] = float(per.mean())
    return out


def r2_metric(preds, gts) -> Dict[str, float]:
    """1 - MSE / variance of the ground truth, per dimension."""
    p, g = _pair(preds, gts)
    if p.shape[0] < 2:
        raise ContractError("R^2 needs at least two samples")
    mse = ((p - g) ** 2).mean(axis=0)
    var = ((g - g.mean(axis=0)) ** 2).mean(axis=0)
    out = {}
    for d, e, v in zip(DIMS, mse, var):
        if v <= 0:
            raise DegenerateMetricError(f"ground truth of dimension {d} has zero variance", dimension=d)
        out[d] = float(1.0 - e / v)
    out["mean"] = float(np.mean([out[d] for d in DIMS]))
    return out


def polarity_match_rate(preds, gts, threshold: float = 0.5) -> float:
    """Fraction of (sample, dimension) pairs whose predicted polarity matches the label's."""
    p, g = _pair(preds, gts)
    return float(np.mean((p >= threshold) == (g >= threshold)))


@dataclass
class MetricReport:
    mse: Dict[str, float]
    r2: Dict[str, float]
    count: int

    @classmethod
    def from_predictions(cls, preds, gts) -> "MetricReport":
        p, _ = _pair(preds, gts)
        return cls(mse_metric(preds, gts), r2_metric(preds, gts), p.shape[0])

    def as_dict(self) -> Dict[str, float]:
        out = {"count": self.count}
        for d in DIMS:
            out[f"mse_{d}"] = self.mse[d]
        out["mse_M"] = self.mse["mean"]
        for d in DIMS:
            out[f"r2_{d}"] = self.r2[d]
        out["r2_M"] = self.r2["mean"]
        return out

    def to_table(self) -> str:
        """Aligned text table, columns V A D M (unscaled values)."""
        header = f"{'metric':<8}" + "".join(f"{c:>12}" for c in ("V", "A", "D", "M"))
        rows = [header]
        for label, vals in (("MSE", self.mse), ("R2", self.r2)):
            cells = [vals[d] for d in DIMS] + [vals["mean"]]
            rows.append(f"{label:<8}" + "".join(f"{v:>12.6f}" for v in cells))
        rows.append(f"samples {self.count}")
        return "\n".join(rows) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())

    @classmethod
    def from_kv(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = float(v)
        mse = {d: kv[f"mse_{d}"] for d in DIMS}
        mse["mean"] = kv["mse_M"]
        r2 = {d: kv[f"r2_{d}"] for d in DIMS}
        r2["mean"] = kv["r2_M"]
        return cls(mse, r2, int(kv["count"]))


# ---------------------------------------------------------------------------
# attention export


def attention_grid(a_s, h: int, w: int) -> np.ndarray:
    a = np.asarray(a_s, dtype=np.float64).reshape(-1)
    if a.size != h * w:
        raise DimensionError(f"attention has {a.size} entries, expected h*w = {h}*{w}")
    return a.reshape(h, w)


def heatmap_levels(grid: np.ndarray, upsample: int = 1) -> np.ndarray:
    """Min-max scale to 0..255; a constant map becomes all 128.

    ``upsample`` repeats each cell into an ``upsample x upsample`` block
    (nearest neighbour).
    """
    lo, hi = float(grid.min()), float(grid.max())
    if hi == lo:
        levels = np.full(grid.shape, 128, dtype=np.uint8)
    else:
        levels = np.rint((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    if upsample > 1:
        levels = np.repeat(np.repeat(levels, upsample, axis=0), upsample, axis=1)
    return levels


def encode_heatmap(levels: np.ndarray) -> bytes:
    h, w = levels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(levels, dtype=np.uint8).tobytes()


def grid_to_csv(grid: np.ndarray) -> str:
    return "".join(",".join(f"{v:.6g}" for v in row) + "\n" for row in grid)


def grid_from_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    return np.array([[float(x) for x in row.split(",")] for row in rows], dtype=np.float64)


def _write(sink, data) -> None:
    if isinstance(sink, (str, os.PathLike)):
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(sink, mode) as fh:
            fh.write(data)
    else:
        sink.write(data)


def export_attention(a_s, h: int, w: int, heatmap_sink=None, csv_sink=None, upsample: int = 1):
    """Write A_S as a PGM heatmap and a CSV grid; returns ``(levels, grid)``.

    Sinks may be paths or file objects (binary for the heatmap, text for
    the CSV); ``None`` skips that output.
    """
    grid = attention_grid(a_s, h, w)
    levels = heatmap_levels(grid, upsample)
    if heatmap_sink is not None:
        _write(heatmap_sink, encode_heatmap(levels))
    if csv_sink is not None:
        _write(csv_sink, grid_to_csv(grid))
    return levels, grid


def argmax_cell(grid: np.ndarray) -> Tuple[int, int]:
    r, c = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return int(r), int(c)


def cell_hits_box(cell: Tuple[int, int], grid_shape: Tuple[int, int], image_size: int, box) -> bool:
    """True when the image block covered by ``cell`` overlaps the rectangle ``box``.

    ``box`` is ``(top, left, height, width)`` in pixels; the grid is mapped
    onto the image by nearest-neighbour upsampling.
    """
    gh, gw = grid_shape
    r, c = cell
    bh, bw = image_size / gh, image_size / gw
    y0, y1 = r * bh, (r + 1) * bh
    x0, x1 = c * bw, (c + 1) * bw
    top, left, height, width = box
    return y0 < top + height and top < y1 and x0 < left + width and left < x1


def cell_center_in_box(cell: Tuple[int, int], grid_shape: Tuple[int, int], image_size: int, box) -> bool:
    """True when the image-space centre of ``cell`` lies inside ``box`` (stricter than overlap)."""
    gh, gw = grid_shape
    r, c = cell
    cy, cx = (r + 0.5) * image_size / gh, (c + 0.5) * image_size / gw
    top, left, height, width = box
    return top <= cy < top + height and left <= cx < left + width
