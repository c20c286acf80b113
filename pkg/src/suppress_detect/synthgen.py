"""Seeded synthetic orchard scenes with ground truth and noisy proposals.

Apples are shaded disks on a mottled leaf/bark background, partly hidden
by leaf-shaped ellipses. Each apple yields one jittered high-confidence
proposal; extra proposals are dropped on foliage clutter with a lower,
overlapping score distribution. Scene ``i`` draws from its own RNG stream
``(seed, crc32(prefix), i)`` so scenes can be generated in any order and
differently-prefixed splits never repeat each other.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Annotation, BBox, Detection, Image, iou
from .errors import ConfigError
from .ingest import dump_detections, serialize_via, write_manifest, write_ppm

LIGHTING = {
    # contrast, brightness, mean colour cast (r, g, b)
    "overcast": (0.85, -5.0, (0.0, 0.0, 4.0)),
    "direct": (1.15, 15.0, (6.0, 3.0, -4.0)),
    "back": (0.7, -35.0, (-6.0, 0.0, 10.0)),
}


@dataclass(frozen=True)
class Palette:
    name: str
    skin: tuple            # ((r_lo, r_hi), (g_lo, g_hi), (b_lo, b_hi))
    blush: tuple | None = None
    blush_cover: tuple = (0.0, 0.0)   # fraction of the disk under the blush


GALA = Palette("gala",
               skin=((215, 245), (185, 220), (60, 100)),
               blush=((165, 205), (20, 50), (25, 55)),
               blush_cover=(0.55, 0.9))
BLONDEE = Palette("blondee", skin=((215, 245), (200, 232), (85, 130)))

LEAF_GREENS = ((35, 75), (85, 140), (25, 60))
BARK = ((85, 115), (65, 90), (40, 60))
YELLOW_LEAF = ((140, 180), (160, 195), (45, 80))


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    image_size: tuple = (160, 120)
    n_apples: tuple = (3, 6)
    apple_radius: tuple = (9, 15)
    apple_palette: tuple = (GALA, BLONDEE)
    occlusion_fraction: tuple = (0.0, 0.4)
    lighting: tuple = ("overcast", "direct", "back")
    fp_rate: float = 2.0
    localization_noise: float = 1.5
    true_score: tuple = (8.0, 2.0)       # beta(a, b) for proposals on apples
    spurious_score: tuple = (5.0, 3.0)   # beta(a, b) for foliage proposals

    def validate(self) -> None:
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        for name in ("n_apples", "apple_radius", "occlusion_fraction"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is not ordered: {lo} > {hi}")
        if self.n_apples[0] < 0:
            raise ConfigError("n_apples must be non-negative")
        if self.apple_radius[0] < 2:
            raise ConfigError("apple_radius must be at least 2 pixels")
        if 2 * self.apple_radius[1] + 1 >= min(w, h):
            raise ConfigError(
                f"apple radius {self.apple_radius[1]} too large for a {w}x{h} image")
        lo, hi = self.occlusion_fraction
        if lo < 0 or hi > 1:
            raise ConfigError("occlusion_fraction must lie in [0, 1]")
        if not self.apple_palette:
            raise ConfigError("apple_palette must not be empty")
        if not self.lighting or any(l not in LIGHTING for l in self.lighting):
            raise ConfigError(f"lighting must be drawn from {sorted(LIGHTING)}")
        if self.fp_rate < 0 or self.localization_noise < 0:
            raise ConfigError("fp_rate and localization_noise must be non-negative")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image_id: str
    image: Image
    annotations: tuple
    detections: tuple
    provenance: tuple       # "truth" | "spurious", aligned with detections
    lighting: str
    variety: str
    sources: tuple = field(default=())  # annotation index per detection, -1 if spurious


# ---------------------------------------------------------------------------
# drawing helpers
# ---------------------------------------------------------------------------

def _color(rng, ranges) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for lo, hi in ranges])


def _smooth_field(rng, w, h, cell=12):
    gw, gh = w // cell + 2, h // cell + 2
    coarse = rng.random((gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    return ((c[y0][:, x0] * (1 - fx) + c[y0][:, x0 + 1] * fx) * (1 - fy)
            + (c[y0 + 1][:, x0] * (1 - fx) + c[y0 + 1][:, x0 + 1] * fx) * fy)


def _ellipse_mask(w, h, cx, cy, a, b, angle):
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    ca, sa = math.cos(angle), math.sin(angle)
    u = (dx * ca + dy * sa) / a
    v = (-dx * sa + dy * ca) / b
    return u * u + v * v <= 1.0


def _disk_mask(w, h, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _paint(canvas, mask, color, rng, noise=6.0):
    n = int(mask.sum())
    if n:
        canvas[mask] = color + rng.normal(0.0, noise, (n, 3))


def _background(rng, w, h):
    t = _smooth_field(rng, w, h)[:, :, None]
    green = _color(rng, LEAF_GREENS)
    bark = _color(rng, BARK)
    img = green * (1 - t) + bark * t
    img = img + rng.normal(0.0, 8.0, (h, w, 3))
    # scattered leaves for texture
    for _ in range(int(rng.integers(6, 14))):
        m = _ellipse_mask(w, h, rng.uniform(0, w), rng.uniform(0, h),
                          rng.uniform(4, 10), rng.uniform(2, 5), rng.uniform(0, math.pi))
        _paint(img, m, _color(rng, LEAF_GREENS), rng)
    return img


def _draw_apple(img, rng, cx, cy, r, palette: Palette):
    h, w = img.shape[:2]
    disk = _disk_mask(w, h, cx, cy, r)
    yy, xx = np.mgrid[0:h, 0:w]
    skin = _color(rng, palette.skin)
    col = np.broadcast_to(skin, img.shape).copy()
    if palette.blush is not None:
        cover = rng.uniform(*palette.blush_cover)
        theta = rng.uniform(0, 2 * math.pi)
        # signed distance along a random direction, in radii
        s = ((xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)) / r
        # blush everything above the line that leaves `cover` of the disk red
        cut = 1.0 - 2.0 * cover
        weight = np.clip((s - cut) / 0.35 + 0.5, 0.0, 1.0)[:, :, None]
        col = col * (1 - weight) + _color(rng, palette.blush) * weight
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) / r
    shade = (1.0 - 0.25 * np.clip(dist, 0, 1) ** 2)[:, :, None]
    col = col * shade + rng.normal(0.0, 5.0, img.shape)
    img[disk] = col[disk]
    return disk


def _occlude(img, rng, cx, cy, r, frac, w, h):
    """Place a leaf ellipse so that at most `frac` of the apple disk is hidden."""
    if frac <= 0:
        return
    disk = _disk_mask(w, h, cx, cy, r)
    area = disk.sum()
    theta = rng.uniform(0, 2 * math.pi)
    a, b = r * rng.uniform(0.7, 1.1), r * rng.uniform(0.4, 0.6)
    angle = theta + math.pi / 2 + rng.normal(0, 0.3)
    best = None
    # slide the leaf from outside the apple towards its centre
    for d in np.linspace(2.0 * r, 0.0, 25):
        m = _ellipse_mask(w, h, cx + d * math.cos(theta), cy + d * math.sin(theta),
                          a, b, angle)
        if (m & disk).sum() / area > frac:
            break
        best = m
    if best is not None:
        _paint(img, best, _color(rng, LEAF_GREENS), rng)


def _clutter(img, rng, cx, cy, r, w, h):
    """Foliage clump that a weak detector might mistake for fruit."""
    ranges = YELLOW_LEAF if rng.random() < 0.3 else LEAF_GREENS
    base = _color(rng, ranges)
    for _ in range(int(rng.integers(3, 6))):
        m = _ellipse_mask(w, h, cx + rng.normal(0, r / 3), cy + rng.normal(0, r / 3),
                          r * rng.uniform(0.6, 1.0), r * rng.uniform(0.3, 0.6),
                          rng.uniform(0, math.pi))
        _paint(img, m, base + rng.normal(0, 12, 3), rng)


def _apply_lighting(img, rng, lighting):
    contrast, brightness, cast = LIGHTING[lighting]
    shift = np.asarray(cast) + rng.normal(0.0, 3.0, 3)
    out = (img - 128.0) * contrast + 128.0 + brightness + shift
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _jitter(rng, cx, cy, side, sigma, w, h):
    def n():
        return float(np.clip(rng.normal(0.0, sigma), -2 * sigma, 2 * sigma)) if sigma else 0.0
    bw = max(2.0, side + n())
    bh = max(2.0, side + n())
    x = cx + n() - bw / 2
    y = cy + n() - bh / 2
    # keep at least a sliver inside the image so it can be cropped
    x = min(max(x, 1.0 - bw), w - 1.0)
    y = min(max(y, 1.0 - bh), h - 1.0)
    return BBox(round(x, 3), round(y, 3), round(bw, 3), round(bh, 3))


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

def generate_scene(cfg: SceneConfig, index: int, prefix: str = "img") -> SyntheticScene:
    rng = np.random.default_rng(
        [cfg.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(prefix.encode()), index])
    w, h = cfg.image_size
    image_id = f"{prefix}_{index:05d}"
    lighting = cfg.lighting[int(rng.integers(len(cfg.lighting)))]
    palette = cfg.apple_palette[int(rng.integers(len(cfg.apple_palette)))]
    tags = frozenset({f"variety={palette.name}", f"lighting={lighting}"})

    img = _background(rng, w, h)
    n_apples = int(rng.integers(cfg.n_apples[0], cfg.n_apples[1] + 1))
    apples = []
    for _ in range(n_apples):
        for attempt in range(100):
            r = int(rng.integers(cfg.apple_radius[0], cfg.apple_radius[1] + 1))
            cx = int(rng.integers(r, w - r))
            cy = int(rng.integers(r, h - r))
            if all(math.hypot(cx - ax, cy - ay) >= r + ar for ax, ay, ar in apples):
                break
        apples.append((cx, cy, r))

    annotations = []
    for cx, cy, r in apples:
        _draw_apple(img, rng, cx, cy, r, palette)
        annotations.append(Annotation(image_id, BBox(cx - r, cy - r, 2 * r + 1, 2 * r + 1), tags))
    for cx, cy, r in apples:
        _occlude(img, rng, cx, cy, r, rng.uniform(*cfg.occlusion_fraction), w, h)

    truth_boxes = [a.box for a in annotations]
    clutter = []
    for _ in range(int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate > 0 else 0):
        for attempt in range(50):
            r = int(rng.integers(cfg.apple_radius[0], cfg.apple_radius[1] + 1))
            cx = int(rng.integers(r, w - r))
            cy = int(rng.integers(r, h - r))
            box = BBox(cx - r, cy - r, 2 * r + 1, 2 * r + 1)
            if all(iou(box, t) < 0.1 for t in truth_boxes):
                break
        clutter.append((cx, cy, r))
        _clutter(img, rng, cx, cy, r, w, h)

    pixels = _apply_lighting(img, rng, lighting)

    detections, provenance, sources = [], [], []
    for ai, (cx, cy, r) in enumerate(apples):
        box = _jitter(rng, cx, cy, 2 * r + 1, cfg.localization_noise, w, h)
        if cfg.localization_noise <= r / 4:
            assert iou(box, annotations[ai].box) >= 0.3, (box, annotations[ai].box)
        detections.append(Detection(image_id, box, float(rng.beta(*cfg.true_score))))
        provenance.append("truth")
        sources.append(ai)
    for cx, cy, r in clutter:
        box = _jitter(rng, cx, cy, 2 * r + 1, cfg.localization_noise, w, h)
        detections.append(Detection(image_id, box, float(rng.beta(*cfg.spurious_score))))
        provenance.append("spurious")
        sources.append(-1)

    # detectors emit in no particular order; shuffle so position carries no signal
    order = rng.permutation(len(detections))
    return SyntheticScene(
        image_id, Image(pixels), tuple(annotations),
        tuple(detections[i] for i in order), tuple(provenance[i] for i in order),
        lighting, palette.name, tuple(sources[i] for i in order))


def generate(cfg: SceneConfig, n_scenes: int, prefix: str = "img") -> list[SyntheticScene]:
    cfg.validate()
    if n_scenes < 1:
        raise ConfigError(f"n_scenes must be >= 1, got {n_scenes}")
    return [generate_scene(cfg, i, prefix) for i in range(n_scenes)]


def export(scenes, dir_path, split: str = "train") -> Path:
    """Write PPMs, VIA annotations, detections, provenance and a manifest.

    Returns the manifest path.
    """
    root = Path(dir_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    images, file_tags, detections, provenance = {}, {}, [], []
    for s in scenes:
        rel = f"images/{s.image_id}.ppm"
        write_ppm(root / rel, s.image)
        images[s.image_id] = rel
        file_tags[s.image_id] = {"lighting": s.lighting, "variety": s.variety}
        detections.extend(s.detections)
        provenance.extend(s.provenance)

    annotations = [a for s in scenes for a in s.annotations]
    (root / "annotations.json").write_text(
        serialize_via(annotations, file_tags=file_tags, image_ids=list(images)))
    (root / "detections.json").write_text(dump_detections(detections))
    (root / "provenance.json").write_text(json.dumps(provenance))
    manifest = root / "manifest.json"
    write_manifest(manifest, split, images, "annotations.json", "detections.json")
    return manifest
