"""Dataset ingestion, splitting, flip augmentation and a synthetic affective set."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, FormatError, LabelRangeError, ParseError

LABEL_NAMES = ("valence", "arousal", "dominance")


@dataclass
class Sample:
    """One labelled example; exactly one of ``image`` / ``features`` is set."""

    id: str
    label: np.ndarray
    image: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    # synthetic only: (top, left, height, width) of the label-bearing rectangle
    box: Optional[Tuple[int, int, int, int]] = None

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.label.shape != (3,) or np.any(self.label < 0) or np.any(self.label > 1):
            raise LabelRangeError(f"sample {self.id}: label {self.label} must be three values in [0, 1]")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Tuple[float, float, float]
    line: int


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(not f > 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be positive and sum to 1, got {fr}")


# ---------------------------------------------------------------------------
# manifest


def parse_manifest(text: str) -> List[ManifestEntry]:
    """Parse ``path,v,a,d`` records (no header, LF or CRLF line ends).

    Blank lines are skipped.  Labels must lie in [0, 1].
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4 or not parts[0].strip():
            raise ParseError(f"expected 'path,v,a,d', got {raw!r}", line=lineno)
        try:
            values = tuple(float(x) for x in parts[1:])
        except ValueError:
            raise ParseError(f"non-numeric label in {raw!r}", line=lineno) from None
        for name, v in zip(LABEL_NAMES, values):
            if not 0.0 <= v <= 1.0:
                raise LabelRangeError(f"{name} label {v} outside [0, 1]", line=lineno)
        entries.append(ManifestEntry(parts[0].strip(), values, lineno))
    return entries


def format_manifest(rows: Sequence[Tuple[str, Sequence[float]]]) -> str:
    return "".join(f"{path},{v!r},{a!r},{d!r}\n" for path, (v, a, d) in rows)


def load_samples(manifest_path, channels: int = 3) -> List[Sample]:
    """Load every entry of a manifest; relative paths resolve against its directory."""
    from .backbone import load_feature_map

    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    samples = []
    for e in entries:
        path = Path(e.path) if os.path.isabs(e.path) else base / e.path
        if path.suffix.lower() == ".pdaf":
            fm = load_feature_map(path)
            samples.append(Sample(e.path, e.label, features=fm.data.values))
        else:
            samples.append(Sample(e.path, e.label, image=load_image(path, channels=channels)))
    return samples


# ---------------------------------------------------------------------------
# PNM images

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int):
    """Return ``count`` whitespace-separated header tokens and the offset after them."""
    pos, tokens = 0, []
    while len(tokens) < count:
        m = _TOKEN.match(buf, pos)
        if not m:
            raise FormatError("truncated PNM header", offset=pos)
        tok = m.group(1)
        # a comment can run into the token without whitespace, e.g. "255#x"
        if b"#" in tok:
            tok = tok.split(b"#", 1)[0]
            nl = buf.find(b"\n", m.start(1))
            pos = len(buf) if nl < 0 else nl + 1
        else:
            pos = m.end(1)
        tokens.append(tok)
    return tokens, pos


def decode_pnm(buf: bytes, channels: Optional[int] = None) -> np.ndarray:
    """Decode P2/P3/P5/P6 bytes to a float ``(C, H, W)`` array in [0, 1].

    With ``channels=3`` gray images are replicated to three channels.
    """
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"unsupported image magic {magic!r}", offset=0)
    (_, w_tok, h_tok, max_tok), pos = _header_tokens(buf, 4)
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError:
        raise FormatError("non-integer PNM dimensions", offset=pos) from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"bad PNM dimensions {width}x{height} maxval {maxval}", offset=pos)
    nch = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * nch
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace byte before raster
        itemsize = 1 if maxval < 256 else 2
        raster = buf[pos:pos + count * itemsize]
        if len(raster) < count * itemsize:
            raise FormatError(f"truncated raster: need {count * itemsize} bytes", offset=len(buf))
        arr = np.frombuffer(raster, dtype=np.uint8 if itemsize == 1 else ">u2").astype(np.float64)
    else:
        body = re.sub(rb"#[^\n]*", b"", buf[pos:]).split()
        if len(body) < count:
            raise FormatError(f"truncated raster: need {count} values, got {len(body)}", offset=len(buf))
        try:
            arr = np.array([int(t) for t in body[:count]], dtype=np.float64)
        except ValueError:
            raise FormatError("non-integer sample in plain PNM raster", offset=pos) from None
    if np.any(arr > maxval):
        raise FormatError(f"sample value exceeds maxval {maxval}", offset=pos)
    img = (arr / maxval).reshape(height, width, nch).transpose(2, 0, 1)
    if channels == 3 and nch == 1:
        img = np.repeat(img, 3, axis=0)
    elif channels == 1 and nch == 3:
        img = img.mean(axis=0, keepdims=True)
    return np.ascontiguousarray(img)


def load_image(source, channels: Optional[int] = None) -> np.ndarray:
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        buf = Path(source).read_bytes()
    else:
        buf = source.read()
    return decode_pnm(buf, channels=channels)


def encode_pnm(img: np.ndarray, binary: bool = True) -> bytes:
    """Encode a ``(1|3, H, W)`` array in [0, 1] as 8-bit PGM or PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    nch, h, w = img.shape
    if nch not in (1, 3):
        raise FormatError(f"cannot encode {nch}-channel image as PNM")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = {(1, True): b"P5", (3, True): b"P6", (1, False): b"P2", (3, False): b"P3"}[(nch, binary)]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    if binary:
        return header + q.tobytes()
    rows = [" ".join(str(v) for v in row.reshape(-1)) for row in q]
    return header + ("\n".join(rows) + "\n").encode("ascii")


def save_image(img: np.ndarray, path, binary: bool = True) -> None:
    Path(path).write_bytes(encode_pnm(img, binary=binary))


# ---------------------------------------------------------------------------
# splitting and augmentation


def split(samples: Sequence, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then val/test take floor(N * fraction); the remainder trains."""
    n = len(samples)
    if n < 3:
        raise ConfigurationError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_val = math.floor(n * spec.val + 1e-9)
    n_test = math.floor(n * spec.test + 1e-9)
    n_train = n - n_val - n_test
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


def flip_augment(img: np.ndarray, coin) -> np.ndarray:
    """Mirror the column axis on heads (``True`` or ``"heads"``); identity otherwise."""
    heads = coin == "heads" if isinstance(coin, str) else bool(coin)
    return np.ascontiguousarray(img[..., ::-1]) if heads else img


# ---------------------------------------------------------------------------
# synthetic affective images


@dataclass(frozen=True)
class SynthSpec:
    """Geometry and intensity ranges of the synthetic generator (8-bit units)."""

    image_size: int = 64
    min_side: Optional[int] = None
    max_side: Optional[int] = None
    min_brightness: int = 32
    max_brightness: int = 223
    min_tint: int = 8  # tint at the top image row
    max_tint: int = 32  # tint at the bottom image row
    background: int = 128  # mid-gray
    noise: int = 12  # background texture amplitude

    def __post_init__(self):
        if not 0 < self.min_tint <= self.max_tint:
            raise ConfigurationError("tint range must be positive and ordered")
        if self.min_brightness < self.max_tint or self.max_brightness + self.max_tint > 255:
            raise ConfigurationError("brightness range leaves no room for the tint")
        lo, hi = self.sides
        if not 0 < lo < hi <= self.image_size:
            raise ConfigurationError(f"bad rectangle side range {lo}..{hi} for size {self.image_size}")

    @property
    def sides(self) -> Tuple[int, int]:
        lo = self.min_side if self.min_side is not None else max(2, (3 * self.image_size) // 16)
        hi = self.max_side if self.max_side is not None else (9 * self.image_size) // 16
        return lo, hi

    def area_range(self) -> Tuple[float, float]:
        lo, hi = self.sides
        s2 = float(self.image_size**2)
        return lo * lo / s2, hi * hi / s2

    def tint(self, rows: np.ndarray) -> np.ndarray:
        """Per-row tint, rising linearly from top to bottom."""
        span = max(self.image_size - 1, 1)
        return np.rint(self.min_tint + (self.max_tint - self.min_tint) * rows / span).astype(np.int64)


def synth_labels(brightness: float, height: int, width: int, top: int, spec: Optional[SynthSpec] = None) -> np.ndarray:
    """Closed-form VAD labels of a rectangle.

    valence = mean brightness in [0, 1]; arousal = area fraction rescaled
    over the generator's size range; dominance = vertical centre / image
    height.
    """
    spec = spec or SynthSpec()
    s = spec.image_size
    amin, amax = spec.area_range()
    arousal = (height * width / float(s * s) - amin) / (amax - amin)
    dominance = (top + height / 2.0) / s
    return np.array([brightness, arousal, dominance], dtype=np.float64)


def synth_generate(count: int, seed: int = 0, image_size: int = 64, spec: Optional[SynthSpec] = None) -> List[Sample]:
    """Images with one flat rectangle on a noise-textured mid-gray background.

    Rectangle pixels are ``(b + t, b, b - t)``: the mean brightness is
    exactly ``b`` while the tint ``t`` grows with the pixel row, so the
    rectangle is separable from the gray background and its pixels carry
    their own vertical position.  Values are multiples of 1/255, so PPM
    round trips are lossless.
    """
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    spec = spec or SynthSpec(image_size=image_size)
    s = spec.image_size
    lo, hi = spec.sides
    rng = np.random.default_rng(seed)
    tint = spec.tint(np.arange(s))
    samples = []
    for i in range(count):
        height = int(rng.integers(lo, hi + 1))
        width = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, s - height + 1))
        left = int(rng.integers(0, s - width + 1))
        b = int(rng.integers(spec.min_brightness, spec.max_brightness + 1))
        gray = spec.background + rng.integers(-spec.noise, spec.noise + 1, size=(s, s))
        img = np.repeat(gray[None], 3, axis=0)
        rows, cols = slice(top, top + height), slice(left, left + width)
        t = tint[rows, None]
        img[0, rows, cols] = b + t
        img[1, rows, cols] = b
        img[2, rows, cols] = b - t
        samples.append(
            Sample(
                id=f"synth{seed}_{i:05d}",
                label=synth_labels(b / 255.0, height, width, top, spec),
                image=img.astype(np.float64) / 255.0,
                box=(top, left, height, width),
            )
        )
    return samples


def rectangle_mask(img: np.ndarray) -> np.ndarray:
    """Recover the rectangle's pixels from an emitted synthetic image (the only tinted ones)."""
    q = np.rint(np.asarray(img) * 255.0).astype(np.int64)
    return q[0] != q[2]
