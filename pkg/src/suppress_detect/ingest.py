"""Readers and writers for annotations, detections, PPM rasters and manifests."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path, PurePath

import numpy as np

from .core import Annotation, BBox, Detection, Image
from .errors import FormatError, ParseError, ScoreOutOfRange, UnsupportedShape

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# VGG Image Annotator
# ---------------------------------------------------------------------------

def _string_tags(attrs, where: str) -> set[str]:
    if attrs is None:
        return set()
    if not isinstance(attrs, dict):
        raise ParseError(f"{where}: attributes must be an object")
    return {f"{k}={v}" for k, v in attrs.items() if isinstance(v, str)}


def parse_via(json_text: str) -> list[Annotation]:
    """Parse a VIA project export into rectangle annotations.

    Accepts either the bare per-file mapping or a full project file that
    nests it under ``_via_img_metadata``. The image id is the file name
    without its extension. String-valued file and region attributes become
    ``key=value`` tags; anything else (checkbox dicts, numbers) is ignored.
    """
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from e
    if isinstance(doc, dict) and "_via_img_metadata" in doc:
        doc = doc["_via_img_metadata"]
    if not isinstance(doc, dict):
        raise ParseError("VIA export must be a JSON object keyed by file")

    out = []
    for key, entry in doc.items():
        if not isinstance(entry, dict):
            raise ParseError(f"file entry {key!r} is not an object")
        try:
            filename = entry["filename"]
            regions = entry["regions"]
        except KeyError as e:
            raise ParseError(f"file entry {key!r} missing field {e.args[0]!r}") from None
        if isinstance(regions, dict):  # VIA 1.x stored regions keyed by index
            regions = [regions[k] for k in sorted(regions, key=int)]
        if not isinstance(regions, list):
            raise ParseError(f"file {filename!r}: regions must be a list")
        image_id = PurePath(filename).stem
        file_tags = _string_tags(entry.get("file_attributes"), f"file {filename!r}")

        for idx, region in enumerate(regions):
            where = f"file {filename!r} region {idx}"
            try:
                shape = region["shape_attributes"]
                kind = shape["name"]
            except (KeyError, TypeError):
                raise ParseError(f"{where}: missing shape_attributes.name") from None
            if kind != "rect":
                raise UnsupportedShape(f"{where}: unsupported shape {kind!r}")
            try:
                box = BBox(shape["x"], shape["y"], shape["width"], shape["height"])
            except KeyError as e:
                raise ParseError(f"{where}: missing field {e.args[0]!r}") from None
            except (TypeError, ValueError) as e:
                raise ParseError(f"{where}: {e}") from None
            tags = file_tags | _string_tags(region.get("region_attributes"), where)
            out.append(Annotation(image_id, box, frozenset(tags)))
    return out


def _split_tags(tags) -> dict[str, str]:
    d = {}
    for t in sorted(tags):
        k, _, v = t.partition("=")
        d[k] = v
    return d


def _num(v: float):
    return int(v) if float(v).is_integer() else v


def serialize_via(annotations, filenames: dict[str, str] | None = None,
                  file_tags: dict[str, dict[str, str]] | None = None,
                  image_ids=()) -> str:
    """Write annotations back out in the VIA export dialect.

    `filenames` maps image id to the file name recorded in the export
    (default ``<id>.ppm``). Tags go into region attributes unless they are
    listed for that image in `file_tags`. Ids in `image_ids` get an entry
    even when they carry no regions.
    """
    filenames = filenames or {}
    file_tags = file_tags or {}
    by_image: dict[str, list[Annotation]] = {i: [] for i in image_ids}
    for a in annotations:
        by_image.setdefault(a.image_id, []).append(a)

    doc = {}
    for image_id, anns in by_image.items():
        fname = filenames.get(image_id, f"{image_id}.ppm")
        ftags = file_tags.get(image_id, {})
        regions = []
        for a in anns:
            rtags = {k: v for k, v in _split_tags(a.tags).items() if ftags.get(k) != v}
            regions.append({
                "shape_attributes": {
                    "name": "rect",
                    "x": _num(a.box.x), "y": _num(a.box.y),
                    "width": _num(a.box.w), "height": _num(a.box.h),
                },
                "region_attributes": rtags,
            })
        doc[f"{fname}-1"] = {
            "filename": fname,
            "size": -1,
            "regions": regions,
            "file_attributes": dict(ftags),
        }
    return json.dumps(doc, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# Detection JSON
# ---------------------------------------------------------------------------

def parse_detections(json_text: str) -> list[Detection]:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from e
    if not isinstance(doc, list):
        raise ParseError("detections file must be a JSON array")
    out = []
    for i, item in enumerate(doc):
        try:
            image_id = item["image_id"]
            bbox = item["bbox"]
            score = item["score"]
        except (KeyError, TypeError) as e:
            raise ParseError(f"detection {i}: missing field {e}") from None
        if not isinstance(image_id, str):
            raise ParseError(f"detection {i}: image_id must be a string")
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ParseError(f"detection {i}: bbox must be [x, y, w, h]")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ParseError(f"detection {i}: score must be a number")
        if not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(f"detection {i}: score {score} outside [0, 1]")
        try:
            box = BBox(*bbox)
        except (TypeError, ValueError) as e:
            raise ParseError(f"detection {i}: {e}") from None
        out.append(Detection(image_id, box, score))
    return out


def detection_record(d: Detection, **extra) -> dict:
    rec = {"image_id": d.image_id, "bbox": [_num(v) for v in d.box.as_list()],
           "score": d.score}
    rec.update(extra)
    return rec


def dump_detections(detections, extra: list[dict] | None = None) -> str:
    """Serialize detections; `extra` optionally adds per-item fields."""
    recs = []
    for i, d in enumerate(detections):
        recs.append(detection_record(d, **(extra[i] if extra else {})))
    return json.dumps(recs, indent=1)


# ---------------------------------------------------------------------------
# PPM (P6, maxval 255)
# ---------------------------------------------------------------------------

_WS = b" \t\n\r\x0b\x0c"
_DIGITS = re.compile(rb"\d+")


def load_image_ppm(data: bytes) -> Image:
    """Decode a binary PPM. Comments (``#`` to end of line) may appear
    between header tokens; exactly one whitespace byte precedes the raster."""
    if data[:2] != b"P6":
        raise FormatError(f"bad magic {data[:2]!r}, expected b'P6'")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        c = data[pos:pos + 1]
        if c == b"":
            raise FormatError("truncated header")
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated comment in header")
            pos = nl + 1
        elif c in _WS:
            pos += 1
        else:
            if pos == 2:
                raise FormatError("magic must be followed by whitespace")
            m = _DIGITS.match(data, pos)
            if not m:
                raise FormatError(f"unexpected byte {c!r} in header")
            tokens.append(int(m.group()))
            pos = m.end()
    width, height, maxval = tokens
    if data[pos:pos + 1] == b"" or data[pos:pos + 1] not in _WS:
        raise FormatError("missing whitespace after maxval")
    pos += 1
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, only 255")
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}")
    n = width * height * 3
    payload = data[pos:pos + n]
    if len(payload) < n:
        raise FormatError(f"truncated payload: {len(payload)} of {n} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr)


def encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_ppm(path) -> Image:
    return load_image_ppm(Path(path).read_bytes())


def write_ppm(path, img: Image) -> None:
    Path(path).write_bytes(encode_ppm(img))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    images: dict
    annotations: tuple = ()
    detections: tuple = ()
    split: str = "test"
    has_detections: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "images", dict(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "detections", tuple(self.detections))
        for kind, items in (("annotation", self.annotations), ("detection", self.detections)):
            for item in items:
                if item.image_id not in self.images:
                    raise ValueError(f"{kind} references unknown image_id {item.image_id!r}")

    def image_ids(self) -> list[str]:
        return sorted(self.images)

    def annotations_by_image(self) -> dict[str, list[Annotation]]:
        out = {i: [] for i in self.image_ids()}
        for a in self.annotations:
            out[a.image_id].append(a)
        return out

    def detections_by_image(self, detections=None) -> dict[str, list[Detection]]:
        out = {i: [] for i in self.image_ids()}
        for d in self.detections if detections is None else detections:
            if d.image_id not in out:
                raise ValueError(f"detection references unknown image_id {d.image_id!r}")
            out[d.image_id].append(d)
        return out

    def load_image(self, image_id: str) -> Image:
        return read_ppm(self.images[image_id])


def load_manifest(path) -> Dataset:
    """Assemble a Dataset from a manifest file. Relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from e
    base = path.parent
    for key in ("split", "images", "annotations_file"):
        if key not in doc:
            raise ParseError(f"{path}: manifest missing field {key!r}")
    images = {k: str(base / v) for k, v in doc["images"].items()}
    annotations = parse_via((base / doc["annotations_file"]).read_text())
    det_file = doc.get("detections_file")
    detections = parse_detections((base / det_file).read_text()) if det_file else []
    return Dataset(images, annotations, detections, doc["split"],
                   has_detections=det_file is not None)


def write_manifest(path, split: str, images: dict[str, str], annotations_file: str,
                   detections_file: str | None = None) -> None:
    doc = {"split": split, "images": dict(sorted(images.items())),
           "annotations_file": annotations_file}
    if detections_file is not None:
        doc["detections_file"] = detections_file
    Path(path).write_text(json.dumps(doc, indent=1))
