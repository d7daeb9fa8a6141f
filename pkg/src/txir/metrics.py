"""Detection quality metrics.

Pixel level: intersection-over-union and F-measure from confusion counts
accumulated over the whole dataset (micro-averaged). Target level:
probability of detection from one-to-one component matching (centroids
within 3 pixels), and false alarm rate as the pixel mass of unmatched
predicted components per image area, conventionally reported in units of
1e-6.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor import Tensor, ShapeError, no_grad

CENTROID_MATCH_RADIUS = 3.0
DEFAULT_THRESHOLD = 0.5


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, other: "ConfusionCounts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn

    def iou(self) -> float:
        denom = self.tp + self.fp + self.fn
        return self.tp / denom if denom else 1.0

    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 1.0


def binarize(prob: np.ndarray | Tensor, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Strict threshold: pixel is foreground iff prob > tau."""
    arr = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    return arr > tau


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def pixel_scores(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    c = confusion(pred, gt)
    return c.iou(), c.f1()


# --------------------------------------------------------------------------
# connected components (8-connectivity, two-pass union-find)
# --------------------------------------------------------------------------

@dataclass
class Component:
    label: int
    pixels: np.ndarray          # (K, 2) row/col indices, row-major order
    centroid: tuple[float, float]

    @property
    def area(self) -> int:
        return len(self.pixels)


def connected_components(mask: np.ndarray) -> list[Component]:
    """Label 8-connected foreground components.

    Labels are assigned by the row-major position of each component's first
    pixel, so the output order is deterministic.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ShapeError(f"component labeling expects a 2-d mask, got {m.shape}")
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent: list[int] = [0]     # union-find over provisional labels; 0 = background

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    rows, cols = np.nonzero(m)          # row-major scan order
    next_label = 1
    for i, j in zip(rows.tolist(), cols.tolist()):
        neighbors = []
        if i > 0:
            if j > 0 and labels[i - 1, j - 1]:
                neighbors.append(labels[i - 1, j - 1])
            if labels[i - 1, j]:
                neighbors.append(labels[i - 1, j])
            if j + 1 < w and labels[i - 1, j + 1]:
                neighbors.append(labels[i - 1, j + 1])
        if j > 0 and labels[i, j - 1]:
            neighbors.append(labels[i, j - 1])
        if not neighbors:
            labels[i, j] = next_label
            parent.append(next_label)
            next_label += 1
        else:
            lead = min(neighbors)
            labels[i, j] = lead
            for n in neighbors:
                union(lead, n)

    # second pass: collapse to roots, then renumber by first-pixel order
    remap: dict[int, int] = {}
    buckets: dict[int, list[tuple[int, int]]] = {}
    for i, j in zip(rows.tolist(), cols.tolist()):
        root = find(labels[i, j])
        if root not in remap:
            remap[root] = len(remap) + 1
        buckets.setdefault(remap[root], []).append((i, j))

    components = []
    for label in sorted(buckets):
        pix = np.array(buckets[label], dtype=np.int64)
        centroid = (float(pix[:, 0].mean()), float(pix[:, 1].mean()))
        components.append(Component(label=label, pixels=pix, centroid=centroid))
    return components


# --------------------------------------------------------------------------
# target-level matching
# --------------------------------------------------------------------------

def match_components(pred: list[Component], gt: list[Component],
                     radius: float = CENTROID_MATCH_RADIUS) -> list[tuple[int, int]]:
    """One-to-one matching of gt to predicted components.

    Pairs whose centroids are within ``radius`` are eligible; among eligible
    assignments the matcher maximizes the number of matched pairs and, among
    those, minimizes the total centroid distance, so every detectable target
    is credited. Returns (gt_index, pred_index) pairs.
    """
    if not pred or not gt:
        return []
    dist = np.zeros((len(gt), len(pred)))
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            dist[i, j] = math.hypot(g.centroid[0] - p.centroid[0],
                                    g.centroid[1] - p.centroid[1])
    # Forbidden pairs get a cost large enough that dropping a feasible match
    # can never pay off; the assignment then maximizes match count first and
    # total distance second.
    penalty = radius * (len(gt) + len(pred) + 1) + 1.0
    cost = np.where(dist <= radius, dist, penalty)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if dist[i, j] <= radius]


@dataclass
class TargetMatch:
    gt_components: list[Component]
    pred_components: list[Component]
    matches: list[tuple[int, int]]

    @property
    def detected(self) -> int:
        return len(self.matches)

    @property
    def false_pixels(self) -> int:
        matched_pred = {j for _, j in self.matches}
        return sum(c.area for idx, c in enumerate(self.pred_components)
                   if idx not in matched_pred)


def pd_fa(pred_components: list[Component], gt_components: list[Component],
          image_area: int) -> tuple[float, float, TargetMatch]:
    """Per-image probability of detection and false alarm rate.

    Pd is NaN when the image has no ground-truth targets (flagged upstream);
    Fa is the unmatched predicted pixel fraction, in 1e-6 units.
    """
    if image_area <= 0:
        raise ShapeError(f"image area must be positive, got {image_area}")
    tm = TargetMatch(gt_components=gt_components, pred_components=pred_components,
                     matches=match_components(pred_components, gt_components))
    pd = tm.detected / len(gt_components) if gt_components else float("nan")
    fa = tm.false_pixels / image_area * 1e6
    return pd, fa, tm


# --------------------------------------------------------------------------
# dataset-level evaluation
# --------------------------------------------------------------------------

@dataclass
class SampleResult:
    sample: str
    iou: float
    f1: float
    pd_hit: int
    gt_targets: int
    false_pixels: int


@dataclass
class EvalReport:
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    rows: list[SampleResult] = field(default_factory=list)
    detected: int = 0
    gt_total: int = 0
    false_pixels: int = 0
    area_total: int = 0

    def add_sample(self, name: str, pred_mask: np.ndarray, gt_mask: np.ndarray) -> None:
        c = confusion(pred_mask, gt_mask)
        pred_c = connected_components(pred_mask)
        gt_c = connected_components(gt_mask)
        _, _, tm = pd_fa(pred_c, gt_c, pred_mask.size)
        self.counts.add(c)
        self.detected += tm.detected
        self.gt_total += len(gt_c)
        self.false_pixels += tm.false_pixels
        self.area_total += pred_mask.size
        self.rows.append(SampleResult(sample=name, iou=c.iou(), f1=c.f1(),
                                      pd_hit=tm.detected, gt_targets=len(gt_c),
                                      false_pixels=tm.false_pixels))

    @property
    def pd_defined(self) -> bool:
        return self.gt_total > 0

    def iou(self) -> float:
        return self.counts.iou()

    def f1(self) -> float:
        return self.counts.f1()

    def pd(self) -> float:
        return self.detected / self.gt_total if self.gt_total else float("nan")

    def fa_e6(self) -> float:
        return self.false_pixels / self.area_total * 1e6 if self.area_total else 0.0

    def summary(self) -> dict:
        return {
            "iou": self.iou(),
            "f1": self.f1(),
            "pd": None if not self.pd_defined else self.pd(),
            "pd_defined": self.pd_defined,
            "fa_e6": self.fa_e6(),
            "samples": len(self.rows),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "iou", "f1", "pd_hit", "gt_targets", "false_pixels"])
            for r in self.rows:
                writer.writerow([r.sample, f"{r.iou:.6f}", f"{r.f1:.6f}",
                                 r.pd_hit, r.gt_targets, r.false_pixels])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def evaluate_dataset(forward_fn, samples, tau: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Run ``forward_fn(image_tensor, name) -> prob ndarray`` over (name, image,
    gt_mask) triples and accumulate all four metrics."""
    report = EvalReport()
    with no_grad():
        for name, image, gt_mask in samples:
            prob = forward_fn(image, name)
            report.add_sample(name, binarize(prob, tau), gt_mask.astype(bool))
    return report
