"""Greedy IoU matching and precision / recall / F1 reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .core import iou
from .errors import MixedImages, UnknownTagKey

DEFAULT_IOU = 0.5
TOTAL = "total"
UNTAGGED = "untagged"


@dataclass(frozen=True)
class MatchResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    matches: tuple = ()   # (detection index, annotation index, iou)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        # match indices are per-image and meaningless once summed
        return MatchResult(self.tp + other.tp, self.fp + other.fp,
                           self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    counts: MatchResult = field(default_factory=MatchResult)
    stratum: str | None = None

    def as_dict(self) -> dict:
        return {"stratum": self.stratum, "tp": self.counts.tp, "fp": self.counts.fp,
                "fn": self.counts.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def match(detections, annotations, iou_threshold: float = DEFAULT_IOU) -> MatchResult:
    """Score-ordered greedy matching for a single image.

    Detections are visited by descending score (stable, so equal scores
    keep input order); each takes the still-unmatched annotation with the
    highest IoU at or above the threshold, lower annotation index on ties.
    """
    detections = list(detections)
    annotations = list(annotations)
    ids = {d.image_id for d in detections} | {a.image_id for a in annotations}
    if len(ids) > 1:
        raise MixedImages(f"match() needs a single image, got {sorted(ids)}")
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")

    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    taken = [False] * len(annotations)
    matches = []
    for di in order:
        best, best_iou = -1, iou_threshold
        for ai, a in enumerate(annotations):
            if taken[ai]:
                continue
            v = iou(detections[di].box, a.box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = ai, v
        if best >= 0:
            taken[best] = True
            matches.append((di, best, best_iou))
    tp = len(matches)
    return MatchResult(tp, len(detections) - tp, len(annotations) - tp, 0, tuple(matches))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def metrics(result: MatchResult, stratum: str | None = None) -> MetricsReport:
    p = _ratio(result.tp, result.tp + result.fp)
    r = _ratio(result.tp, result.tp + result.fn)
    return MetricsReport(p, r, f1_score(p, r), result, stratum)


def evaluate(dataset, detections=None, iou_threshold: float = DEFAULT_IOU) -> MetricsReport:
    """Unstratified report over every image in `dataset`."""
    anns = dataset.annotations_by_image()
    dets = dataset.detections_by_image(detections)
    total = MatchResult()
    for image_id in dataset.image_ids():
        total = total + match(dets[image_id], anns[image_id], iou_threshold)
    return metrics(total, TOTAL)


def _image_stratum(anns, key: str) -> str:
    values = [a.tag_value(key) for a in anns]
    values = [v for v in values if v is not None]
    if not values:
        return UNTAGGED
    # most common value, alphabetical on ties
    return min(set(values), key=lambda v: (-values.count(v), v))


def evaluate_stratified(dataset, detections=None, iou_threshold: float = DEFAULT_IOU,
                        group_by: str = "lighting") -> list[MetricsReport]:
    """Per-tag-value reports followed by a ``total`` report.

    True positives and misses are credited to the stratum of the annotation
    involved; false positives go to the image's stratum (its most common
    tag value). Counts are summed before the ratios are taken.
    """
    if not any(a.tag_value(group_by) is not None for a in dataset.annotations):
        raise UnknownTagKey(f"no annotation carries tag key {group_by!r}")
    anns = dataset.annotations_by_image()
    dets = dataset.detections_by_image(detections)

    per: dict[str, MatchResult] = {}
    total = MatchResult()
    for image_id in dataset.image_ids():
        a_list = anns[image_id]
        res = match(dets[image_id], a_list, iou_threshold)
        total = total + res
        matched = {ai for _, ai, _ in res.matches}
        img_stratum = _image_stratum(a_list, group_by)
        for ai, a in enumerate(a_list):
            s = a.tag_value(group_by) or UNTAGGED
            add = MatchResult(tp=1) if ai in matched else MatchResult(fn=1)
            per[s] = per.get(s, MatchResult()) + add
        if res.fp:
            per[img_stratum] = per.get(img_stratum, MatchResult()) + MatchResult(fp=res.fp)
    reports = [metrics(per[s], s) for s in sorted(per)]
    reports.append(metrics(total, TOTAL))
    return reports


def reports_to_json(reports) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=1)


def format_table(reports) -> str:
    header = f"{'stratum':<16}{'tp':>7}{'fp':>7}{'fn':>7}{'precision':>11}{'recall':>9}{'f1':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        c = r.counts
        lines.append(f"{str(r.stratum):<16}{c.tp:>7}{c.fp:>7}{c.fn:>7}"
                     f"{r.precision:>11.3f}{r.recall:>9.3f}{r.f1:>8.3f}")
    return "\n".join(lines)

