"""Glue between datasets, the weighting stage and the suppressor."""

from __future__ import annotations

from functools import partial

from .core import iou
from .evaluation import DEFAULT_IOU
from .ingest import Dataset
from .net import SuppressorModel, TrainingExample, score, weighted_patches
from .weighting import WeightingConfig


def label_detections(dataset: Dataset, detections=None,
                     iou_threshold: float = DEFAULT_IOU) -> list[int]:
    """1 where a detection overlaps some annotation of its image with IoU >= threshold."""
    anns = dataset.annotations_by_image()
    dets = dataset.detections if detections is None else detections
    labels = []
    for d in dets:
        best = max((iou(d.box, a.box) for a in anns.get(d.image_id, [])), default=0.0)
        labels.append(int(best >= iou_threshold))
    return labels


def image_loaders(dataset: Dataset) -> dict:
    return {i: partial(dataset.load_image, i) for i in dataset.image_ids()}


def training_examples(dataset: Dataset, wcfg: WeightingConfig = WeightingConfig(),
                      iou_threshold: float = DEFAULT_IOU, threads: int = 1):
    labels = label_detections(dataset, iou_threshold=iou_threshold)
    patches = weighted_patches(dataset.detections, image_loaders(dataset), wcfg, threads)
    return [TrainingExample(p, y) for p, y in zip(patches, labels)]


def score_dataset(model: SuppressorModel, dataset: Dataset, detections=None,
                  wcfg: WeightingConfig | None = None, threads: int = 1):
    dets = dataset.detections if detections is None else detections
    return score(model, dets, image_loaders(dataset), wcfg, threads)
