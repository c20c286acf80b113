"""False-positive suppression for fruit detections.

Candidate boxes from any upstream detector are cropped, colour-weighted
with k-means, and re-scored by a small ConvNet; two confidence thresholds
(upstream score and suppressor output) are then tuned on the
precision/recall Pareto front.
"""

from .core import Annotation, BBox, Detection, Image, crop, iou, resize_bilinear
from .evaluation import MatchResult, MetricsReport, evaluate, evaluate_stratified, match, metrics
from .ingest import Dataset, load_image_ppm, load_manifest, parse_detections, parse_via
from .net import SuppressorModel, TrainConfig, forward, load_model, loss, save_model, score, train
from .tuner import ThresholdConfig, apply_thresholds, front_of, sweep
from .weighting import WeightingConfig, kmeans_colors, weight_patch

__version__ = "0.1.0"
