"""Box arithmetic: IoU, overlap tests and greedy non-maximum suppression.

Boxes use the half-open pixel convention [x_min, x_max) x [y_min, y_max),
origin at the top-left with y increasing downward, so
area = (x_max - x_min) * (y_max - y_min) with no +/-1 correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .errors import ValidationError

if TYPE_CHECKING:
    from .datamodel import Detection


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates with strictly positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValidationError(f"box coordinates must be finite, got {self!r}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValidationError(f"box must have positive area, got {self!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def translate(self, dx: float, dy: float) -> Box:
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; symmetric, 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def overlaps(a: Box, b: Box, threshold: float) -> bool:
    """True iff iou(a, b) >= threshold (inclusive at the boundary)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"overlap threshold must be in [0,1], got {threshold}")
    return iou(a, b) >= threshold


def _nms_order_key(det: "Detection"):
    # Descending score with a stable tie-break so output order never depends
    # on input order.
    b = det.box
    return (-det.score, b.x_min, b.y_min, det.label)


def nms(detections: Sequence["Detection"], iou_threshold: float) -> list["Detection"]:
    """Greedy class-aware NMS.

    A detection is kept iff its IoU with every already-kept detection of the
    same class is below `iou_threshold`. Output is ordered by descending
    score (ties by x_min, y_min, class name).
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValidationError(f"nms iou_threshold must be in [0,1], got {iou_threshold}")
    kept: list[Detection] = []
    for det in sorted(detections, key=_nms_order_key):
        if all(
            iou(det.box, other.box) < iou_threshold
            for other in kept
            if other.label == det.label
        ):
            kept.append(det)
    return kept
