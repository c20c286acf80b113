"""Two-threshold sweep over (upstream score, suppressor confidence).

Every (th1, th2) pair is evaluated on a dataset; the non-dominated set in
the precision/recall plane is reported, together with the front point of
best F1 (C1) and the front point of best recall (C2).
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .evaluation import DEFAULT_IOU, MatchResult, MetricsReport, match, metrics
from .errors import EmptyGrid

DEFAULT_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class ThresholdConfig:
    th1: float
    th2: float

    def __post_init__(self):
        for name in ("th1", "th2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SweepResult:
    points: tuple       # (ThresholdConfig, MetricsReport) pairs
    front: tuple        # indices into points, ascending recall
    c1: int
    c2: int

    def rows(self) -> list[dict]:
        on_front = set(self.front)
        out = []
        for i, (cfg, rep) in enumerate(self.points):
            out.append({
                "th1": cfg.th1, "th2": cfg.th2,
                "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                "on_front": i in on_front, "is_c1": i == self.c1, "is_c2": i == self.c2,
            })
        return out

    def to_json(self) -> str:
        return json.dumps(self.rows(), indent=1)

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def apply_thresholds(scored, cfg: ThresholdConfig) -> list:
    """Keep detections whose upstream score >= th1 and suppressor output >= th2."""
    return [d for d, yhat in scored if d.score >= cfg.th1 and yhat >= cfg.th2]


def front_of(points) -> list[int]:
    """Indices of the non-dominated (precision, recall) points, by ascending recall.

    A point is dominated when another is at least as good on both axes and
    strictly better on one, so exact duplicates all stay on the front.
    """
    pts = [(float(p), float(r)) for p, r in points]
    order = sorted(range(len(pts)), key=lambda i: (-pts[i][0], -pts[i][1]))
    front = []
    best_r_above = float("-inf")    # max recall among strictly higher precision
    k = 0
    while k < len(order):
        p = pts[order[k]][0]
        group = []
        while k < len(order) and pts[order[k]][0] == p:
            group.append(order[k])
            k += 1
        group_max = max(pts[i][1] for i in group)
        for i in group:
            r = pts[i][1]
            if r > best_r_above and r == group_max:
                front.append(i)
        best_r_above = max(best_r_above, group_max)
    return sorted(front, key=lambda i: (pts[i][1], i))


def _evaluate_point(cfg, by_image, annotations, iou_threshold) -> MetricsReport:
    total = MatchResult()
    for image_id, scored in by_image.items():
        kept = apply_thresholds(scored, cfg)
        total = total + match(kept, annotations.get(image_id, []), iou_threshold)
    return metrics(total)


def sweep(scored, dataset, grid_th1=DEFAULT_GRID, grid_th2=DEFAULT_GRID,
          iou_threshold: float = DEFAULT_IOU, threads: int = 1) -> SweepResult:
    """Evaluate all (th1, th2) combinations on `dataset`.

    `scored` is a flat list of (Detection, suppressor confidence) pairs, or a
    mapping image_id -> such a list.
    """
    grid_th1, grid_th2 = list(grid_th1), list(grid_th2)
    if not grid_th1 or not grid_th2:
        raise EmptyGrid("threshold grid must be non-empty on both axes")
    configs = [ThresholdConfig(a, b) for a in grid_th1 for b in grid_th2]

    if isinstance(scored, dict):
        scored = [pair for lst in scored.values() for pair in lst]
    by_image = {i: [] for i in dataset.image_ids()}
    for d, yhat in scored:
        by_image.setdefault(d.image_id, []).append((d, yhat))
    annotations = dataset.annotations_by_image()

    def run(cfg):
        return _evaluate_point(cfg, by_image, annotations, iou_threshold)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run, configs))
    else:
        reports = [run(c) for c in configs]

    points = tuple(zip(configs, reports))
    front = front_of([(r.precision, r.recall) for r in reports])

    def tiebreak(i):
        cfg, rep = points[i]
        return (rep.recall, -cfg.th1, -cfg.th2)

    c1 = max(front, key=lambda i: (points[i][1].f1,) + tiebreak(i))
    c2 = max(front, key=tiebreak)
    return SweepResult(points, tuple(front), c1, c2)
