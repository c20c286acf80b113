"""Colour-cluster weighting of candidate patches.

A 36x36 patch is clustered in RGB with k-means; the largest cluster is
taken to be the fruit, everything else is zeroed. Counts of fruit pixels
in the four 18x18 quadrants (a=top-left, b=top-right, c=bottom-left,
d=bottom-right) are kept alongside the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image
from .errors import ShapeMismatch, TooFewPixels

PATCH_SIZE = 36
CELL_SIZE = PATCH_SIZE // 2


@dataclass(frozen=True)
class WeightingConfig:
    n_clusters: int = 3
    max_iters: int = 50
    seed: int = 0
    convergence_eps: float = 1e-6
    n_init: int = 1         # k-means++ restarts; the lowest final inertia wins

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ValueError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.convergence_eps < 0:
            raise ValueError("convergence_eps must be non-negative")
        if self.n_init < 1:
            raise ValueError(f"n_init must be >= 1, got {self.n_init}")


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray      # (n,) int
    centers: np.ndarray     # (k, 3) float64
    inertia: float
    history: tuple          # inertia after each assignment step
    n_iter: int

    def __iter__(self):
        return iter((self.labels, self.centers, self.inertia))


@dataclass(frozen=True, eq=False)
class WeightedPatch:
    masked: Image
    mask: np.ndarray        # (36, 36) bool
    cell_counts: tuple      # (N^a, N^b, N^c, N^d)

    def as_input(self) -> np.ndarray:
        """Network input: (36, 36, 3) float32 in [0, 1]."""
        return self.masked.pixels.astype(np.float32) / np.float32(255.0)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans_colors(pixels, cfg: WeightingConfig, stream: int = 0) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    The RNG is derived from ``(cfg.seed, stream)`` so the call is a pure
    function of its arguments. Iteration stops at a fixed point (labels
    unchanged), when the inertia improvement falls below
    ``cfg.convergence_eps``, or after ``cfg.max_iters`` assignment steps.
    With ``cfg.n_init > 1`` the seeding and iteration are repeated from
    successive draws of the same RNG and the run with the lowest final
    inertia is returned (the earliest on ties). The returned labels are
    always the nearest-center assignment for the returned centers (ties go
    to the lower cluster index).
    """
    points = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    k = cfg.n_clusters
    n = len(points)
    if n < k:
        raise TooFewPixels(f"{n} pixels cannot form {k} clusters")

    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, stream])
    best = None
    for _ in range(cfg.n_init):
        res = _lloyd(points, _kmeanspp(points, k, rng), cfg)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(points: np.ndarray, centers: np.ndarray, cfg: WeightingConfig) -> KMeansResult:
    n, k = len(points), len(centers)
    labels = None
    history = []
    n_iter = 0
    while True:
        d2 = _sq_dists(points, centers)
        new_labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        history.append(inertia)
        n_iter += 1
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        if len(history) > 1 and history[-2] - inertia < cfg.convergence_eps:
            break
        if n_iter >= cfg.max_iters:
            break

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        # empty cluster: move it onto the point worst served by its own center
        own = d2[np.arange(n), labels].copy()
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(own))
            centers[j] = points[far]
            own[far] = -1.0
    return KMeansResult(new_labels, centers, inertia, tuple(history), n_iter)


def dominant_cluster(labels: np.ndarray, k: int) -> int:
    # argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(np.bincount(labels, minlength=k)))


def cell_counts(mask: np.ndarray) -> tuple:
    h, w = mask.shape
    cy, cx = h // 2, w // 2
    return (
        int(mask[:cy, :cx].sum()),
        int(mask[:cy, cx:].sum()),
        int(mask[cy:, :cx].sum()),
        int(mask[cy:, cx:].sum()),
    )


def weight_patch(patch: Image, cfg: WeightingConfig = WeightingConfig(),
                 stream: int = 0) -> WeightedPatch:
    if patch.width != PATCH_SIZE or patch.height != PATCH_SIZE:
        raise ShapeMismatch(
            f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {patch.width}x{patch.height}")
    px = patch.pixels.reshape(-1, 3)
    res = kmeans_colors(px, cfg, stream)
    apple = dominant_cluster(res.labels, cfg.n_clusters)
    mask = (res.labels == apple).reshape(PATCH_SIZE, PATCH_SIZE)
    masked = np.where(mask[:, :, None], patch.pixels, 0).astype(np.uint8)
    mask.setflags(write=False)
    return WeightedPatch(Image(masked), mask, cell_counts(mask))
