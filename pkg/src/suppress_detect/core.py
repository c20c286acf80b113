"""Geometry and raster types shared by the rest of the package.

Boxes use the (x, y, w, h) convention with a top-left origin, the same
layout VGG Image Annotator writes for rectangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoOverlap


@dataclass(frozen=True, eq=False)
class Image:
    """An RGB raster of shape (height, width, 3), uint8, row-major.

    The array is copied on construction and marked read-only so an Image
    behaves as a value.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_triples(cls, width: int, height: int, triples) -> "Image":
        """Build from a flat row-major sequence of (r, g, b) triples."""
        arr = np.asarray(list(triples), dtype=np.uint8)
        if arr.shape != (width * height, 3):
            raise ValueError(
                f"expected {width * height} triples for {width}x{height}, got {len(arr)}"
            )
        return cls(arr.reshape(height, width, 3))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"box {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    score: float

    def __post_init__(self):
        s = float(self.score)
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {s}")
        object.__setattr__(self, "score", s)


@dataclass(frozen=True)
class Annotation:
    image_id: str
    box: BBox
    tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))

    def tag_value(self, key: str) -> str | None:
        prefix = key + "="
        for t in sorted(self.tags):
            if t.startswith(prefix):
                return t[len(prefix):]
        return None


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def pixel_bounds(img: Image, box: BBox) -> tuple[int, int, int, int]:
    """Integer pixel span (x0, y0, x1, y1) covered by `box`, clamped to `img`."""
    x0 = max(0, math.floor(box.x))
    y0 = max(0, math.floor(box.y))
    x1 = min(img.width, math.ceil(box.x2))
    y1 = min(img.height, math.ceil(box.y2))
    return x0, y0, x1, y1


def crop(img: Image, box: BBox) -> Image:
    x0, y0, x1, y1 = pixel_bounds(img, box)
    if x1 <= x0 or y1 <= y0:
        raise NoOverlap(f"box {box.as_list()} does not overlap a {img.width}x{img.height} image")
    return Image(img.pixels[y0:y1, x0:x1])


def _axis_samples(n_in: int, n_out: int):
    # corner-aligned: output 0 maps to input 0, output n_out-1 to input n_in-1
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    src = img.pixels.astype(np.float64)
    x_lo, x_hi, fx = _axis_samples(img.width, out_w)
    y_lo, y_hi, fy = _axis_samples(img.height, out_h)

    fx = fx[None, :, None]
    top = src[y_lo][:, x_lo] * (1 - fx) + src[y_lo][:, x_hi] * fx
    bottom = src[y_hi][:, x_lo] * (1 - fx) + src[y_hi][:, x_hi] * fx
    fy = fy[:, None, None]
    out = top * (1 - fy) + bottom * fy
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))
