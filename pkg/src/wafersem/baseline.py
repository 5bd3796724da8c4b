"""Conventional threshold + failure-size defect detector for L/S patterns.

Binarize the image, XOR against the ideal binarization of the expected
defect-free pattern, group the disagreement pixels into components, and turn
sufficiently large components into classified detections. Classification is
rule-based: extra material in a space is a bridge/microbridge/line_collapse
depending on span and vertical extent; missing material in a line is a gap
when it severs the line, else p_gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .datamodel import Detection
from .errors import ValidationError
from .geometry import Box
from .image import SemImage
from .synthgen import GT_PAD_PX, PatternSpec, render_clean

# Fraction of image height that an extra-material component must span before
# it reads as a collapse rather than a (long) bridge.
COLLAPSE_HEIGHT_FRAC = 0.25

# 1-px allowance when comparing pixel spans against sub-pixel pattern widths.
SPAN_TOLERANCE_PX = 1.0

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BaselineParams:
    """Tuning knobs of the conventional detector."""

    intensity_threshold: float = 0.5
    min_failure_area_px: int = 4
    expected_pattern: PatternSpec = PatternSpec()
    merge_distance_px: int = 2

    def __post_init__(self) -> None:
        p = self.expected_pattern
        if not p.space_intensity < self.intensity_threshold < p.line_intensity:
            raise ValidationError(
                "intensity_threshold must lie strictly between the pattern's "
                "space and line intensities"
            )
        if self.min_failure_area_px < 1:
            raise ValidationError("min_failure_area_px must be >= 1")
        if self.merge_distance_px < 0:
            raise ValidationError("merge_distance_px must be >= 0")


@lru_cache(maxsize=16)
def _ideal_mask(pattern: PatternSpec, threshold: float) -> np.ndarray:
    """Binarized defect-free render of the expected pattern (cached)."""
    image, _ = render_clean(pattern, [])
    mask = image.pixels >= threshold
    mask.setflags(write=False)
    return mask


def detect_conventional(
    image: SemImage, params: BaselineParams, source: str = "baseline"
) -> list[Detection]:
    """Threshold/XOR/component detector; emits standard detections.

    Score is a size proxy: min(1, area / (4·min_failure_area_px)). Boxes get
    the same 2 px pad as generated ground truth so tight defects still clear
    an IoU 0.5 match. `source` tags the emitted detections (useful when
    running several parameterizations as distinct models).
    """
    pattern = params.expected_pattern
    if image.width != pattern.image_size or image.height != pattern.image_size:
        raise ValidationError("image dimensions must match the expected pattern")
    size = pattern.image_size
    binary = image.pixels >= params.intensity_threshold
    ideal = _ideal_mask(pattern, params.intensity_threshold)
    xor = binary ^ ideal
    if not xor.any():
        return []

    if params.merge_distance_px > 0:
        k = 2 * params.merge_distance_px + 1
        merged = ndimage.binary_dilation(xor, structure=np.ones((k, k), dtype=bool))
    else:
        merged = xor
    labels, n_components = ndimage.label(merged, structure=_EIGHT_CONNECTED)

    extra = binary & ~ideal  # material where the ideal pattern has a space
    missing = ideal & ~binary  # space where the ideal pattern has a line
    line_intervals = _line_column_intervals(pattern)

    detections = []
    for idx in range(1, n_components + 1):
        component = (labels == idx) & xor  # original pixels only
        area = int(component.sum())
        if area < params.min_failure_area_px:
            continue
        ys, xs = np.nonzero(component)
        box = Box(
            max(0.0, float(xs.min() - GT_PAD_PX)),
            max(0.0, float(ys.min() - GT_PAD_PX)),
            min(float(size), float(xs.max() + 1 + GT_PAD_PX)),
            min(float(size), float(ys.max() + 1 + GT_PAD_PX)),
        )
        label = _classify(component, extra, missing, binary, pattern, line_intervals)
        score = min(1.0, area / (4.0 * params.min_failure_area_px))
        detections.append(Detection(box, label, score, source))
    detections.sort(key=lambda d: (-d.score, d.box.x_min, d.box.y_min, d.label))
    return detections


def _line_column_intervals(pattern: PatternSpec) -> list[tuple[int, int]]:
    """Integer column ranges [lo, hi) covered by each nominal line."""
    return [
        (int(np.floor(left)), int(np.ceil(right)))
        for left, right in pattern.nominal_edges()
    ]


def _classify(
    component: np.ndarray,
    extra: np.ndarray,
    missing: np.ndarray,
    binary: np.ndarray,
    pattern: PatternSpec,
    line_intervals: list[tuple[int, int]],
) -> str:
    n_extra = int((component & extra).sum())
    n_missing = int((component & missing).sum())
    ys, xs = np.nonzero(component)

    if n_extra >= n_missing:
        # Extra material in a space: collapse, bridge, or microbridge.
        rows = np.unique(ys).size
        if rows >= COLLAPSE_HEIGHT_FRAC * pattern.image_size:
            return "line_collapse"
        span = float(xs.max() - xs.min() + 1)
        if span >= pattern.space_width - SPAN_TOLERANCE_PX:
            return "bridge"
        return "microbridge"

    # Missing material in a line: gap when some row severs the full line.
    for lo, hi in line_intervals:
        if not ((xs >= lo) & (xs < hi)).any():
            continue
        for row in np.unique(ys):
            if not binary[row, lo:hi].any():
                return "gap"
    return "p_gap"
