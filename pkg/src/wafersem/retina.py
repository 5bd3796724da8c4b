"""Single-stage detector mechanics: anchors, assignment, box coding, focal
loss, and dense score-map decoding.

No backbone or training lives here — score maps arrive from fixtures or
plug-ins, and this module supplies the exact geometric and loss arithmetic
around them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import DEFECT_CLASSES, Detection
from .errors import ValidationError
from .geometry import Box, iou, nms

K_CLASSES = len(DEFECT_CLASSES)

# Assignment codes for anchors that match no ground truth.
BACKGROUND = -1
IGNORE = -2

# Focal-loss probability floor: keeps the loss finite at p = 0 so tests are
# deterministic instead of infinite.
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor grid: per-level (stride, base size) with 3 aspects x 3 scales."""

    pyramid_levels: tuple[tuple[int, float], ...] = ((32, 128.0),)
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    scale_multipliers: tuple[float, ...] = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))

    def __post_init__(self) -> None:
        if len(self.aspect_ratios) * len(self.scale_multipliers) != 9:
            raise ValidationError("aspect x scale combinations must total 9 anchors")
        for stride, base in self.pyramid_levels:
            if stride < 1 or base <= 0:
                raise ValidationError("strides must be >= 1 and base sizes > 0")
        if any(a <= 0 for a in self.aspect_ratios) or any(
            s <= 0 for s in self.scale_multipliers
        ):
            raise ValidationError("aspects and scales must be positive")


@dataclass(frozen=True)
class AssignmentConfig:
    """IoU bands: >= positive_iou positive, < ignore_low background, between ignored."""

    positive_iou: float = 0.5
    ignore_low: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 <= self.ignore_low < self.positive_iou <= 1.0:
            raise ValidationError("require 0 <= ignore_low < positive_iou <= 1")


@dataclass(frozen=True)
class FocalLossParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must be in (0, 1]")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")


@dataclass(frozen=True, eq=False)
class ClassScoreMap:
    """Per-anchor class probabilities, columns in DEFECT_CLASSES order."""

    scores: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != K_CLASSES:
            raise ValidationError(f"scores must be (anchors, {K_CLASSES})")
        if not np.isfinite(s).all() or (s < 0).any() or (s > 1).any():
            raise ValidationError("scores must be probabilities in [0,1]")
        object.__setattr__(self, "scores", s)

    @property
    def n_anchors(self) -> int:
        return self.scores.shape[0]


def generate_anchors(config: AnchorConfig, image_size: int) -> list[Box]:
    """Anchors for every grid center, 9 per location, unclipped.

    For each center, width = base·scale·sqrt(aspect) and height =
    base·scale/sqrt(aspect), so area is (base·scale)^2 and w/h = aspect.
    Order: level, then row, then column, then aspect, then scale.
    """
    anchors = []
    for stride, base in config.pyramid_levels:
        if image_size % stride != 0:
            raise ValidationError(f"stride {stride} does not divide image size {image_size}")
        cells = image_size // stride
        for row in range(cells):
            cy = stride * (row + 0.5)
            for col in range(cells):
                cx = stride * (col + 0.5)
                for aspect in config.aspect_ratios:
                    root = math.sqrt(aspect)
                    for scale in config.scale_multipliers:
                        w = base * scale * root
                        h = base * scale / root
                        anchors.append(Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return anchors


def assign_anchors(anchors: list[Box], truth, cfg: AssignmentConfig) -> np.ndarray:
    """Per-anchor assignment: ground-truth index, BACKGROUND, or IGNORE.

    `truth` is a ground-truth record or a plain list of boxes. Each anchor is
    judged by its maximum IoU over the truth boxes; ties on the argmax go to
    the lowest truth index.
    """
    truth_boxes = [d.box for d in truth.defects] if hasattr(truth, "defects") else list(truth)
    out = np.full(len(anchors), BACKGROUND, dtype=np.int64)
    if not truth_boxes:
        return out
    for i, anchor in enumerate(anchors):
        best_iou = 0.0
        best_idx = 0
        for j, t in enumerate(truth_boxes):
            v = iou(anchor, t)
            if v > best_iou:
                best_iou, best_idx = v, j
        if best_iou >= cfg.positive_iou:
            out[i] = best_idx
        elif best_iou >= cfg.ignore_low:
            out[i] = IGNORE
    return out


def encode_box(anchor: Box, target: Box) -> tuple[float, float, float, float]:
    """Log-space regression offsets of target relative to anchor."""
    acx, acy = anchor.center
    tcx, tcy = target.center
    return (
        (tcx - acx) / anchor.width,
        (tcy - acy) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    )


def decode_box(
    anchor: Box,
    offsets: tuple[float, float, float, float],
    image_size: int | None = None,
) -> Box:
    """Exact inverse of encode_box; clipped to bounds when a size is given."""
    tx, ty, tw, th = offsets
    if not all(math.isfinite(v) for v in (tx, ty, tw, th)):
        raise ValidationError("offsets must be finite")
    acx, acy = anchor.center
    cx = acx + tx * anchor.width
    cy = acy + ty * anchor.height
    w = anchor.width * math.exp(tw)
    h = anchor.height * math.exp(th)
    x0, y0, x1, y1 = cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2
    if image_size is not None:
        x0 = min(max(x0, 0.0), float(image_size))
        y0 = min(max(y0, 0.0), float(image_size))
        x1 = min(max(x1, 0.0), float(image_size))
        y1 = min(max(y1, 0.0), float(image_size))
    return Box(x0, y0, x1, y1)


def focal_loss(p: float, params: FocalLossParams = FocalLossParams()) -> float:
    """-alpha·(1-p)^gamma·ln(p) for the true-outcome probability p.

    p below PROB_FLOOR is clamped there so the loss stays finite.
    """
    if not math.isfinite(p) or p > 1.0:
        raise ValidationError(f"p must be a probability <= 1, got {p}")
    p = max(p, PROB_FLOOR)
    return -params.alpha * (1.0 - p) ** params.gamma * math.log(p)


def batch_focal_loss(
    true_probs: np.ndarray,
    assignments: np.ndarray,
    params: FocalLossParams = FocalLossParams(),
) -> float:
    """Mean focal loss over positive and background anchors; ignores excluded.

    `true_probs[i]` is the model's probability for anchor i's ground-truth
    outcome (its assigned class when positive, background when background).
    """
    true_probs = np.asarray(true_probs, dtype=np.float64)
    assignments = np.asarray(assignments)
    if true_probs.shape != assignments.shape:
        raise ValidationError("true_probs and assignments must align")
    included = assignments != IGNORE
    if not included.any():
        raise ValidationError("no positive or background anchors to average over")
    p = np.clip(true_probs[included], PROB_FLOOR, 1.0)
    losses = -params.alpha * (1.0 - p) ** params.gamma * np.log(p)
    return float(losses.mean())


def decode_predictions(
    score_map: ClassScoreMap,
    offsets: np.ndarray,
    anchors: list[Box],
    score_threshold: float = 0.5,
    nms_iou: float = 0.5,
    image_size: int | None = None,
    source: str = "retina",
) -> list[Detection]:
    """Dense scores + offsets -> thresholded, NMS-filtered detections.

    Class = argmax probability (ties to the lowest class index), score = that
    probability; anchors below the score threshold never decode.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (score_map.n_anchors, 4):
        raise ValidationError("offsets must be (anchors, 4)")
    if len(anchors) != score_map.n_anchors:
        raise ValidationError("anchor list must match the score map")
    candidates = []
    for i in range(score_map.n_anchors):
        cls = int(np.argmax(score_map.scores[i]))
        score = float(score_map.scores[i, cls])
        if score < score_threshold:
            continue
        box = decode_box(anchors[i], tuple(offsets[i]), image_size)
        candidates.append(Detection(box, DEFECT_CLASSES[cls], score, source))
    return nms(candidates, nms_iou)


def read_score_map(path: Path | str) -> tuple[ClassScoreMap, np.ndarray]:
    """Load a JSON fixture: {"scores": anchors x K, "offsets": anchors x 4}."""
    data = json.loads(Path(path).read_text())
    try:
        scores = np.asarray(data["scores"], dtype=np.float64)
        offsets = np.asarray(data["offsets"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed score-map file {path}: {exc}") from exc
    score_map = ClassScoreMap(scores)
    if offsets.shape != (score_map.n_anchors, 4):
        raise ValidationError("offsets must be (anchors, 4)")
    return score_map, offsets
